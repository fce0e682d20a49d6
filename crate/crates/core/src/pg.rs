//! Single-agent REINFORCE with an episode-mean baseline.
//!
//! Each episode is played with the current policy, rewards are propagated
//! backwards within each served point, and one update is applied per episode
//! using the advantage-scaled squared-label surrogate: for every step the
//! output gradient of `(y − y')²` is scaled by `R_t − b` and summed over the
//! episode.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{save_checkpoint, CheckpointError, CheckpointMeta};
use crate::env::{EnvConfig, EnvError, Frame};
use crate::nn::{
    backward_into, forward, init_params, ArchitectureSpec, Gradients, NetworkParams, NnError, Optimizer, Real,
    UpdateRule,
};
use crate::scores::LogSinks;
use crate::seed::{derive_seed, STREAM_ENV, STREAM_INIT, STREAM_SAMPLING};
use crate::task::{PongTask, Task};

#[derive(Debug, Error)]
pub enum PgError {
    #[error("invalid hyperparameter {field}: {reason}")]
    Hyper { field: &'static str, reason: String },
    #[error("network does not fit the task: {0}")]
    Mismatch(String),
    #[error("episode {episode}: {source}")]
    Env { episode: usize, source: EnvError },
    #[error("episode {episode}: non-finite advantage at step {step}")]
    Numerical { episode: usize, step: usize },
    #[error("episode {episode}: {source}")]
    Nn { episode: usize, source: NnError },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("score log: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// `b` is the mean discounted return of the episode being updated.
    Episode,
    /// `b ← 0.99·b + 0.01·mean`, carried across episodes.
    Running,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub alpha: f64,
    pub gamma: f64,
    /// Episode budget.
    pub episodes: usize,
    pub baseline_mode: BaselineMode,
    /// Probability of replacing the policy's sample by a uniform draw.
    pub exploration_bias: f64,
    pub seed: u64,
    pub update_rule: UpdateRule,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            gamma: 0.9,
            episodes: 1000,
            baseline_mode: BaselineMode::Episode,
            exploration_bias: 0.05,
            seed: 0,
            update_rule: UpdateRule::Plain,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), PgError> {
        let bad = |field, reason: &str| Err(PgError::Hyper { field, reason: reason.into() });
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha", "must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.exploration_bias) {
            return bad("exploration_bias", "must lie in [0, 1]");
        }
        if let UpdateRule::RmsProp { decay, eps } = self.update_rule {
            if !(0.0..1.0).contains(&decay) || !(eps > 0.0) {
                return bad("rmsprop", "decay must lie in [0, 1) and eps be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep<T> {
    /// Network input `x_i` (a frame difference for Pong).
    pub diff_input: Vec<T>,
    pub action: usize,
    /// One-hot `y'_k`.
    pub action_label: Vec<T>,
    /// `y_k` as produced while playing.
    pub policy_output: Vec<T>,
    /// Critic estimate, for actor-critic networks.
    pub value: Option<T>,
    pub raw_reward: i8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub steps: Vec<TrajectoryStep<T>>,
    /// Per-step discounted return after propagation; empty until
    /// [`Trajectory::propagate`] runs.
    pub discounted_returns: Vec<f64>,
    pub episode_index: usize,
    pub score: i32,
}

impl<T: Real> Trajectory<T> {
    pub fn new(episode_index: usize) -> Self {
        Self { steps: Vec::new(), discounted_returns: Vec::new(), episode_index, score: 0 }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn raw_rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| f64::from(s.raw_reward)).collect()
    }

    pub fn propagate(&mut self, gamma: f64) {
        self.discounted_returns = propagate_rewards(&self.raw_rewards(), gamma);
    }
}

/// `current − previous`, flattened row-major.
pub fn frame_diff(current: &Frame, previous: &Frame) -> Result<Vec<f32>, NnError> {
    if current.height() != previous.height() || current.width() != previous.width() {
        return Err(NnError::Shape {
            context: "frame difference",
            expected: previous.height() * previous.width(),
            actual: current.height() * current.width(),
        });
    }
    Ok(current.pixels().iter().zip(previous.pixels()).map(|(c, p)| c - p).collect())
}

/// Backward sweep `r_{t−1} ← r_{t−1} + γ·r_t`. The accumulation restarts at
/// every non-zero reward, so credit never crosses a scoring event.
pub fn propagate_rewards(raw: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    let mut running = 0.0;
    for (o, &r) in out.iter_mut().zip(raw).rev() {
        running = if r != 0.0 { r } else { gamma * running };
        *o = running;
    }
    out
}

/// Samples an action from the renormalised policy output, replacing it by a
/// uniform draw with probability `exploration_bias`. Returns the action index
/// and its one-hot label.
pub fn select_action<T: Real, R: Rng + ?Sized>(policy_output: &[T], exploration_bias: f64, rng: &mut R) -> (usize, Vec<T>) {
    let n = policy_output.len();
    let weights: Vec<f64> = policy_output
        .iter()
        .map(|y| {
            let y = y.as_f64();
            if y.is_finite() && y > 0.0 {
                y
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let explore = exploration_bias > 0.0 && rng.random::<f64>() < exploration_bias;
    let action = if explore || total <= 0.0 {
        if total <= 0.0 && !explore {
            log::warn!("policy output {:?} has no mass; sampling uniformly", weights);
        }
        rng.random_range(0..n)
    } else {
        let mut u = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                chosen = i;
                break;
            }
            u -= w;
        }
        // never pick a zero-probability action through rounding
        while weights[chosen] == 0.0 {
            chosen -= 1;
        }
        chosen
    };
    let mut label = vec![T::zero(); n];
    label[action] = T::one();
    (action, label)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub mode: BaselineMode,
    /// Current baseline `b`.
    pub value: f64,
    pub episodes_seen: usize,
}

impl BaselineState {
    pub fn new(mode: BaselineMode) -> Self {
        Self { mode, value: 0.0, episodes_seen: 0 }
    }
}

pub fn update_baseline<T: Real>(baseline: &BaselineState, trajectory: &Trajectory<T>) -> BaselineState {
    let returns = &trajectory.discounted_returns;
    if returns.is_empty() {
        log::warn!("episode {} has no steps; baseline unchanged", trajectory.episode_index);
        return baseline.clone();
    }
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let value = match baseline.mode {
        BaselineMode::Episode => mean,
        BaselineMode::Running => 0.99 * baseline.value + 0.01 * mean,
    };
    BaselineState { mode: baseline.mode, value, episodes_seen: baseline.episodes_seen + 1 }
}

/// Summed, advantage-weighted gradient of the squared-label surrogate
/// `Σ_t (R_t − b)·Σ_k (y_k − y'_k)²`, returned as the *ascent* direction (its
/// negation), ready for [`Optimizer::apply`].
pub fn episode_loss_grads<T: Real>(
    trajectory: &Trajectory<T>,
    baseline: &BaselineState,
    params: &NetworkParams<T>,
) -> Result<Gradients<T>, PgError> {
    let episode = trajectory.episode_index;
    if trajectory.discounted_returns.len() != trajectory.steps.len() {
        return Err(PgError::Mismatch("discounted returns not populated".into()));
    }
    let mut grads = Gradients::zeros_like(params);
    let mut dy = vec![T::zero(); params.arch().output_len()];
    for (t, (step, &ret)) in trajectory.steps.iter().zip(&trajectory.discounted_returns).enumerate() {
        let advantage = ret - baseline.value;
        if !advantage.is_finite() {
            return Err(PgError::Numerical { episode, step: t });
        }
        if advantage == 0.0 {
            continue;
        }
        let a = T::lit(advantage);
        let trace = forward(params, &step.diff_input).map_err(|source| PgError::Nn { episode, source })?;
        let two = T::lit(2.0);
        for ((d, &y), &label) in dy.iter_mut().zip(trace.output()).zip(&step.action_label) {
            *d = -two * a * (y - label);
        }
        let dv = trace.value_output.map(|_| T::zero());
        backward_into(params, &trace, &dy, dv, &mut grads).map_err(|source| PgError::Nn { episode, source })?;
    }
    Ok(grads)
}

/// Plays one episode with frozen `params`, sampling actions with
/// [`select_action`].
pub fn collect_episode<K: Task + ?Sized, R: Rng + ?Sized>(
    task: &mut K,
    params: &NetworkParams<f32>,
    exploration_bias: f64,
    env_seed: u64,
    rng: &mut R,
    episode_index: usize,
) -> Result<Trajectory<f32>, PgError> {
    let episode = episode_index;
    let mut input = task.reset(env_seed).map_err(|source| PgError::Env { episode, source })?;
    let mut traj = Trajectory::new(episode_index);
    loop {
        let trace = forward(params, &input).map_err(|source| PgError::Nn { episode, source })?;
        let (action, label) = select_action(trace.output(), exploration_bias, rng);
        let step = task.step(action).map_err(|source| PgError::Env { episode, source })?;
        let policy_output = trace.output().to_vec();
        traj.steps.push(TrajectoryStep {
            diff_input: std::mem::replace(&mut input, step.input),
            action,
            action_label: label,
            policy_output,
            value: trace.value_output,
            raw_reward: step.reward,
        });
        traj.score = step.score;
        if step.done {
            return Ok(traj);
        }
    }
}

pub(crate) fn check_fit<K: Task + ?Sized>(task: &K, arch: &ArchitectureSpec) -> Result<(), String> {
    if arch.input_len() != task.input_len() {
        return Err(format!("input size {} but the task produces {}", arch.input_len(), task.input_len()));
    }
    if arch.output_len() != task.num_actions() {
        return Err(format!("{} outputs but the task has {} actions", arch.output_len(), task.num_actions()));
    }
    Ok(())
}

/// Trains a fresh network for `hyper.episodes` episodes.
pub fn train<K: Task + ?Sized>(
    task: &mut K,
    arch: &ArchitectureSpec,
    hyper: &Hyperparams,
    sinks: &mut LogSinks,
) -> Result<NetworkParams<f32>, PgError> {
    let params = init_params(arch, derive_seed(hyper.seed, STREAM_INIT, 0));
    train_from(task, params, hyper, sinks)
}

/// Continues training from existing parameters.
pub fn train_from<K: Task + ?Sized>(
    task: &mut K,
    mut params: NetworkParams<f32>,
    hyper: &Hyperparams,
    sinks: &mut LogSinks,
) -> Result<NetworkParams<f32>, PgError> {
    hyper.validate()?;
    check_fit(task, params.arch()).map_err(PgError::Mismatch)?;
    let mut optimizer = Optimizer::new(hyper.update_rule);
    let mut baseline = BaselineState::new(hyper.baseline_mode);
    let alpha = hyper.alpha as f32;
    let started = Instant::now();
    for episode in 0..hyper.episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, STREAM_SAMPLING, episode as u64));
        let env_seed = derive_seed(hyper.seed, STREAM_ENV, episode as u64);
        let mut traj = collect_episode(task, &params, hyper.exploration_bias, env_seed, &mut rng, episode)?;
        traj.propagate(hyper.gamma);
        baseline = update_baseline(&baseline, &traj);
        let grads = episode_loss_grads(&traj, &baseline, &params)?;
        optimizer
            .apply(&mut params, &grads, alpha)
            .map_err(|source| PgError::Nn { episode, source })?;
        sinks.record_at(episode, traj.score, traj.horizon() as u64, None, started.elapsed().as_secs_f64())?;
        if let Some(path) = sinks.checkpoint_due(episode + 1) {
            let meta = CheckpointMeta::default().with("episodes", episode + 1).with("seed", hyper.seed);
            save_checkpoint(&params, &meta, &path)?;
        }
    }
    sinks.flush()?;
    Ok(params)
}

/// [`train`] on Pong frame differences.
pub fn train_pong(
    env_config: &EnvConfig,
    arch: &ArchitectureSpec,
    hyper: &Hyperparams,
    sinks: &mut LogSinks,
) -> Result<NetworkParams<f32>, PgError> {
    let mut task = PongTask::new(env_config.clone()).map_err(|source| PgError::Env { episode: 0, source })?;
    train(&mut task, arch, hyper, sinks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{self, EnvAction};
    use crate::task::ContextualBandit;

    #[test]
    fn reward_propagation_examples() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(&propagate_rewards(&[0.0, 0.0, 1.0], 0.9), &[0.81, 0.9, 1.0]));
        assert!(close(&propagate_rewards(&[0.0, 1.0, 0.0, -1.0], 0.9), &[0.9, 1.0, -0.9, -1.0]));
        assert_eq!(propagate_rewards(&[0.0; 5], 0.9), vec![0.0; 5]);
    }

    #[test]
    fn frame_diff_contracts() {
        let (mut s, f0) = env::reset(EnvConfig::default()).unwrap();
        assert!(frame_diff(&f0, &f0).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(frame_diff(&f0, &f0).unwrap().len(), 6400);
        let small = Frame::blank(20, 20);
        assert!(matches!(frame_diff(&f0, &small), Err(NnError::Shape { .. })));

        // ball one pixel to the right
        let mut b = s.ball();
        b.x = 40.0;
        b.y = 20.0;
        s.set_ball(b);
        let before = env::render(&s);
        b.x = 41.0;
        s.set_ball(b);
        let after = env::render(&s);
        let d = frame_diff(&after, &before).unwrap();
        let pos: Vec<usize> = (0..d.len()).filter(|&i| d[i] > 0.0).collect();
        let neg: Vec<usize> = (0..d.len()).filter(|&i| d[i] < 0.0).collect();
        // 2×2 ball: the new right column lights up, the old left column clears
        assert_eq!(pos, vec![19 * 80 + 41, 20 * 80 + 41]);
        assert_eq!(neg, vec![19 * 80 + 39, 20 * 80 + 39]);
    }

    #[test]
    fn select_action_deterministic_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (a, label) = select_action(&[1.0f32, 0.0, 0.0], 0.0, &mut rng);
            assert_eq!(a, EnvAction::Still.index());
            assert_eq!(label, vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn select_action_frequencies() {
        let freq = |out: [f32; 3], bias: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut counts = [0usize; 3];
            for _ in 0..100_000 {
                counts[select_action(&out, bias, &mut rng).0] += 1;
            }
            counts.map(|c| c as f64 / 100_000.0)
        };
        for bias in [0.0, 0.3, 1.0] {
            for f in freq([0.5, 0.5, 0.5], bias) {
                assert!((f - 1.0 / 3.0).abs() < 0.01);
            }
        }
        for f in freq([0.9, 0.05, 0.0], 1.0) {
            assert!((f - 1.0 / 3.0).abs() < 0.01);
        }
        // all-zero output falls back to uniform
        for f in freq([0.0, 0.0, 0.0], 0.0) {
            assert!((f - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn baseline_updates() {
        let mut t = Trajectory::<f32>::new(0);
        t.discounted_returns = vec![1.0, -1.0];
        t.steps = vec![dummy_step(1), dummy_step(-1)];
        let b = update_baseline(&BaselineState::new(BaselineMode::Episode), &t);
        assert_eq!(b.value, 0.0);

        t.discounted_returns = vec![0.81, 0.9, 1.0];
        let b = update_baseline(&BaselineState::new(BaselineMode::Episode), &t);
        assert!((b.value - 2.71 / 3.0).abs() < 1e-9);

        let r = update_baseline(&BaselineState { mode: BaselineMode::Running, value: 1.0, episodes_seen: 3 }, &t);
        assert!((r.value - (0.99 + 0.01 * 2.71 / 3.0)).abs() < 1e-12);

        let empty = Trajectory::<f32>::new(1);
        let start = BaselineState { mode: BaselineMode::Episode, value: 0.4, episodes_seen: 2 };
        assert_eq!(update_baseline(&start, &empty), start);
    }

    fn dummy_step(reward: i8) -> TrajectoryStep<f32> {
        TrajectoryStep {
            diff_input: vec![0.0; 2],
            action: 0,
            action_label: vec![1.0, 0.0],
            policy_output: vec![0.5, 0.5],
            value: None,
            raw_reward: reward,
        }
    }

    #[test]
    fn zero_advantage_gives_zero_gradient() {
        let arch = ArchitectureSpec::parse("4:3:2").unwrap();
        let params: NetworkParams<f64> = init_params(&arch, 2);
        let mut t = Trajectory::<f64>::new(0);
        for i in 0..3 {
            t.steps.push(TrajectoryStep {
                diff_input: vec![i as f64, 1.0, -1.0, 0.5],
                action: 1,
                action_label: vec![0.0, 1.0],
                policy_output: vec![0.5, 0.5],
                value: None,
                raw_reward: 0,
            });
        }
        t.discounted_returns = vec![0.7; 3];
        let b = BaselineState { mode: BaselineMode::Episode, value: 0.7, episodes_seen: 1 };
        assert!(episode_loss_grads(&t, &b, &params).unwrap().is_zero());
    }

    #[test]
    fn label_equal_to_output_gives_zero_gradient() {
        // zero weight and unit bias: the linear output is exactly 1.0
        let arch = ArchitectureSpec::parse("1:1/linear").unwrap();
        let params = NetworkParams::from_flat(&arch, &[0.0f64, 1.0]).unwrap();
        let mut t = Trajectory::<f64>::new(0);
        t.steps.push(TrajectoryStep {
            diff_input: vec![3.0],
            action: 0,
            action_label: vec![1.0],
            policy_output: vec![1.0],
            value: None,
            raw_reward: 1,
        });
        t.discounted_returns = vec![1.0];
        let b = BaselineState::new(BaselineMode::Episode);
        assert!(episode_loss_grads(&t, &b, &params).unwrap().is_zero());
    }

    #[test]
    fn non_finite_advantage_names_the_step() {
        let arch = ArchitectureSpec::parse("2:2").unwrap();
        let params: NetworkParams<f64> = init_params(&arch, 0);
        let mut t = Trajectory::<f64>::new(4);
        t.steps = vec![dummy_step(0), dummy_step(1)].into_iter().map(|s| TrajectoryStep {
            diff_input: vec![1.0, 1.0],
            action: s.action,
            action_label: vec![1.0, 0.0],
            policy_output: vec![0.5, 0.5],
            value: None,
            raw_reward: s.raw_reward,
        }).collect();
        t.discounted_returns = vec![0.0, f64::NAN];
        let err = episode_loss_grads(&t, &BaselineState::new(BaselineMode::Episode), &params).unwrap_err();
        assert!(matches!(err, PgError::Numerical { episode: 4, step: 1 }));
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let arch = ArchitectureSpec::parse("2:4:2").unwrap();
        let hyper = Hyperparams { alpha: 0.0, episodes: 1, ..Hyperparams::default() };
        let mut task = ContextualBandit::new(2, 2, 0, 8);
        let mut sinks = LogSinks::memory(10);
        let trained = train(&mut task, &arch, &hyper, &mut sinks).unwrap();
        assert_eq!(trained, init_params(&arch, derive_seed(hyper.seed, STREAM_INIT, 0)));
        assert_eq!(sinks.records().len(), 1);
    }

    #[test]
    fn invalid_hyperparams_are_rejected() {
        let arch = ArchitectureSpec::parse("2:4:2").unwrap();
        let mut task = ContextualBandit::new(2, 2, 0, 8);
        for hyper in [
            Hyperparams { gamma: 1.0, ..Hyperparams::default() },
            Hyperparams { alpha: -1.0, ..Hyperparams::default() },
            Hyperparams { exploration_bias: 1.5, ..Hyperparams::default() },
        ] {
            assert!(matches!(
                train(&mut task, &arch, &hyper, &mut LogSinks::memory(1)),
                Err(PgError::Hyper { .. })
            ));
        }
        let wrong = ArchitectureSpec::parse("3:4:2").unwrap();
        assert!(matches!(
            train(&mut task, &wrong, &Hyperparams::default(), &mut LogSinks::memory(1)),
            Err(PgError::Mismatch(_))
        ));
    }
}
