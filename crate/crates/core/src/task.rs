//! Episodic tasks as seen by the trainers: a fixed-length input vector per
//! step, a discrete action set and rewards in {-1, 0, 1}.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{self, EnvAction, EnvConfig, EnvError, EnvState, Frame};
use crate::pg::frame_diff;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStep {
    pub input: Vec<f32>,
    pub reward: i8,
    pub done: bool,
    /// Running score (agent minus opponent).
    pub score: i32,
}

pub trait Task {
    fn num_actions(&self) -> usize;
    fn input_len(&self) -> usize;
    /// Starts a new episode and returns the first network input.
    fn reset(&mut self, seed: u64) -> Result<Vec<f32>, EnvError>;
    fn step(&mut self, action: usize) -> Result<TaskStep, EnvError>;
}

impl<T: Task + ?Sized> Task for Box<T> {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn input_len(&self) -> usize {
        (**self).input_len()
    }
    fn reset(&mut self, seed: u64) -> Result<Vec<f32>, EnvError> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: usize) -> Result<TaskStep, EnvError> {
        (**self).step(action)
    }
}

/// Pong seen through frame differences `s_t − s_{t−1}`. The first input of an
/// episode is the raw first frame (differenced against a blank frame).
pub struct PongTask {
    config: EnvConfig,
    state: Option<EnvState>,
    previous: Frame,
}

impl PongTask {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let previous = Frame::blank(config.frame_height, config.frame_width);
        Ok(Self { config, state: None, previous })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Frame currently shown on screen.
    pub fn frame(&self) -> &Frame {
        &self.previous
    }
}

impl Task for PongTask {
    fn num_actions(&self) -> usize {
        EnvAction::COUNT
    }

    fn input_len(&self) -> usize {
        self.config.frame_area()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f32>, EnvError> {
        let config = self.config.clone().with_seed(derive_seed(self.config.rng_seed, 0, seed));
        let (state, frame) = env::reset(config)?;
        let blank = Frame::blank(frame.height(), frame.width());
        let input = frame_diff(&frame, &blank).expect("same board");
        self.state = Some(state);
        self.previous = frame;
        Ok(input)
    }

    fn step(&mut self, action: usize) -> Result<TaskStep, EnvError> {
        let action = EnvAction::from_index(action)?;
        let state = self.state.as_mut().ok_or(EnvError::EpisodeDone)?;
        let result = env::step(state, action)?;
        let input = frame_diff(&result.frame, &self.previous).expect("same board");
        self.previous = result.frame;
        Ok(TaskStep {
            input,
            reward: result.reward,
            done: result.episode_done,
            score: result.score.agent as i32 - result.score.opponent as i32,
        })
    }
}

/// Contextual bandit with one-hot contexts. In context `c` the rewarded
/// action is `(c + shift) % actions`; every other action costs a point.
/// Episodes last a fixed number of draws.
#[derive(Debug, Clone)]
pub struct ContextualBandit {
    contexts: usize,
    actions: usize,
    shift: usize,
    episode_len: usize,
    rng: ChaCha8Rng,
    context: usize,
    t: usize,
    score: i32,
}

impl ContextualBandit {
    pub fn new(contexts: usize, actions: usize, shift: usize, episode_len: usize) -> Self {
        assert!(contexts > 0 && actions > 0 && episode_len > 0);
        Self { contexts, actions, shift, episode_len, rng: ChaCha8Rng::seed_from_u64(0), context: 0, t: 0, score: 0 }
    }

    pub fn optimal_action(&self, context: usize) -> usize {
        (context + self.shift) % self.actions
    }

    pub fn context_input(&self, context: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.contexts];
        v[context] = 1.0;
        v
    }

    fn draw(&mut self) -> Vec<f32> {
        self.context = self.rng.random_range(0..self.contexts);
        self.context_input(self.context)
    }
}

impl Task for ContextualBandit {
    fn num_actions(&self) -> usize {
        self.actions
    }

    fn input_len(&self) -> usize {
        self.contexts
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f32>, EnvError> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.score = 0;
        Ok(self.draw())
    }

    fn step(&mut self, action: usize) -> Result<TaskStep, EnvError> {
        if action >= self.actions {
            return Err(EnvError::BadAction(action));
        }
        if self.t >= self.episode_len {
            return Err(EnvError::EpisodeDone);
        }
        let reward = if action == self.optimal_action(self.context) { 1 } else { -1 };
        self.score += i32::from(reward);
        self.t += 1;
        Ok(TaskStep { input: self.draw(), reward, done: self.t == self.episode_len, score: self.score })
    }
}
