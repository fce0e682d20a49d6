//! Deterministic two-player Pong rendered as binary pixel frames.
//!
//! The agent controls the right paddle, a speed-capped ball tracker controls
//! the left one. Ball position and velocity are kept in continuous
//! coordinates so the speed magnitude is exactly preserved by reflections;
//! frames are rasterised by rounding the ball's top-left corner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("step called after the episode finished")]
    EpisodeDone,
    #[error("episode exceeded the hard ceiling of {0} steps")]
    StepCeiling(u64),
    #[error("action index {0} out of range (expected 0..3)")]
    BadAction(usize),
}

/// Paddle command. The one-hot index is fixed: Still = 0, Up = 1, Down = 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvAction {
    Still,
    Up,
    Down,
}

impl EnvAction {
    pub const ALL: [EnvAction; 3] = [EnvAction::Still, EnvAction::Up, EnvAction::Down];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            EnvAction::Still => 0,
            EnvAction::Up => 1,
            EnvAction::Down => 2,
        }
    }

    pub fn from_index(index: usize) -> Result<Self, EnvError> {
        Self::ALL.get(index).copied().ok_or(EnvError::BadAction(index))
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvAction::Still => "still",
            EnvAction::Up => "up",
            EnvAction::Down => "down",
        }
    }

    pub fn one_hot(self) -> [f32; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

/// A grayscale image with intensities in [0, 1], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    pub tick: u64,
}

impl Frame {
    pub fn blank(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width], tick: 0 }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }

    pub fn bright_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p > 0.0).count()
    }

    fn fill_rect(&mut self, top: i64, left: i64, height: i64, width: i64) {
        let r0 = top.clamp(0, self.height as i64) as usize;
        let r1 = (top + height).clamp(0, self.height as i64) as usize;
        let c0 = left.clamp(0, self.width as i64) as usize;
        let c1 = (left + width).clamp(0, self.width as i64) as usize;
        if c0 >= c1 {
            return;
        }
        for r in r0..r1 {
            self.pixels[r * self.width + c0..r * self.width + c1].fill(1.0);
        }
    }
}

/// Board geometry, speeds and rules.
///
/// `max_rally_hits` bounds a single rally: once the agent has returned the ball
/// that many times without a point, the tracker concedes the point to the
/// agent. Together with `points_to_win` this bounds every episode regardless
/// of policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    pub paddle_height: usize,
    pub paddle_width: usize,
    /// Gap between a paddle and its side wall.
    pub paddle_margin: usize,
    pub ball_size: usize,
    pub paddle_speed: u32,
    pub ball_speed: f64,
    pub opponent_speed_cap: u32,
    pub points_to_win: u32,
    /// Largest deflection angle from horizontal on an edge hit, in degrees.
    pub max_bounce_deg: f64,
    /// Largest serve angle from horizontal, in degrees.
    pub max_serve_deg: f64,
    pub max_rally_hits: u32,
    /// Hard ceiling; reaching it is an error rather than a silent truncation.
    pub max_episode_steps: u64,
    pub rng_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            frame_height: 80,
            frame_width: 80,
            paddle_height: 8,
            paddle_width: 2,
            paddle_margin: 4,
            ball_size: 2,
            paddle_speed: 3,
            ball_speed: 3.0,
            opponent_speed_cap: 2,
            points_to_win: 21,
            max_bounce_deg: 60.0,
            max_serve_deg: 30.0,
            max_rally_hits: 10,
            max_episode_steps: 1_000_000,
            rng_seed: 0,
        }
    }
}

impl EnvConfig {
    /// 20×20 board used for fast experiments.
    pub fn mini() -> Self {
        Self {
            frame_height: 20,
            frame_width: 20,
            paddle_height: 4,
            paddle_width: 1,
            paddle_margin: 1,
            ball_size: 1,
            paddle_speed: 2,
            ball_speed: 2.0,
            opponent_speed_cap: 1,
            // every return wins the point, so rewards follow interceptions
            max_rally_hits: 1,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn frame_area(&self) -> usize {
        self.frame_height * self.frame_width
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> Result<(), EnvError> {
            Err(EnvError::Config { field, reason: reason.into() })
        }
        if self.frame_height < 4 {
            return bad("frame_height", "must be at least 4");
        }
        if self.frame_width < 4 {
            return bad("frame_width", "must be at least 4");
        }
        if self.paddle_height == 0 || self.paddle_height >= self.frame_height {
            return bad("paddle_height", "must be positive and smaller than frame_height");
        }
        if self.paddle_width == 0 {
            return bad("paddle_width", "must be positive");
        }
        if self.ball_size == 0 || self.ball_size >= self.frame_height {
            return bad("ball_size", "must be positive and smaller than frame_height");
        }
        if 2 * (self.paddle_margin + self.paddle_width) + self.ball_size >= self.frame_width {
            return bad("paddle_margin", "paddles leave no room for the ball");
        }
        if self.paddle_speed < 1 {
            return bad("paddle_speed", "must be at least 1");
        }
        if !(self.ball_speed.is_finite() && self.ball_speed >= 1.0) {
            return bad("ball_speed", "must be finite and at least 1");
        }
        if self.opponent_speed_cap < 1 {
            return bad("opponent_speed_cap", "must be at least 1");
        }
        if self.points_to_win < 1 {
            return bad("points_to_win", "must be at least 1");
        }
        if !(self.max_bounce_deg > 0.0 && self.max_bounce_deg < 90.0) {
            return bad("max_bounce_deg", "must lie in (0, 90)");
        }
        if !(self.max_serve_deg >= 0.0 && self.max_serve_deg < 90.0) {
            return bad("max_serve_deg", "must lie in [0, 90)");
        }
        if self.max_rally_hits < 1 {
            return bad("max_rally_hits", "must be at least 1");
        }
        if self.max_episode_steps < 1 {
            return bad("max_episode_steps", "must be at least 1");
        }
        Ok(())
    }
}

/// Ball centre and velocity in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Ball {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score {
    pub agent: u32,
    pub opponent: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub frame: Frame,
    pub reward: i8,
    pub point_scored: bool,
    pub episode_done: bool,
    pub score: Score,
}

/// Full mutable game state. Owned by exactly one thread.
#[derive(Debug, Clone)]
pub struct EnvState {
    config: EnvConfig,
    ball: Ball,
    /// Top row of each paddle.
    agent_y: i64,
    opponent_y: i64,
    agent_points: u32,
    opponent_points: u32,
    rally_hits: u32,
    /// +1 serves toward the agent, -1 toward the opponent.
    next_serve_dir: f64,
    tick: u64,
    done: bool,
    rng: ChaCha8Rng,
}

impl EnvState {
    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn ball(&self) -> Ball {
        self.ball
    }

    /// Overrides the ball; intended for scripted scenarios and tests.
    pub fn set_ball(&mut self, ball: Ball) {
        self.ball = ball;
    }

    pub fn agent_paddle_top(&self) -> i64 {
        self.agent_y
    }

    pub fn opponent_paddle_top(&self) -> i64 {
        self.opponent_y
    }

    pub fn set_paddles(&mut self, agent_top: i64, opponent_top: i64) {
        let max = self.paddle_max();
        self.agent_y = agent_top.clamp(0, max);
        self.opponent_y = opponent_top.clamp(0, max);
    }

    pub fn score(&self) -> Score {
        Score { agent: self.agent_points, opponent: self.opponent_points }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn paddle_max(&self) -> i64 {
        (self.config.frame_height - self.config.paddle_height) as i64
    }

    fn half_ball(&self) -> f64 {
        self.config.ball_size as f64 / 2.0
    }

    /// x of the agent paddle's front (left) face.
    fn agent_face(&self) -> f64 {
        (self.config.frame_width - self.config.paddle_margin - self.config.paddle_width) as f64
    }

    /// x of the opponent paddle's front (right) face.
    fn opponent_face(&self) -> f64 {
        (self.config.paddle_margin + self.config.paddle_width) as f64
    }

    fn serve(&mut self) {
        let cfg = &self.config;
        let max = cfg.max_serve_deg.to_radians();
        let angle = if max > 0.0 { self.rng.random_range(-max..=max) } else { 0.0 };
        let dir = self.next_serve_dir;
        self.ball = Ball {
            x: cfg.frame_width as f64 / 2.0,
            y: cfg.frame_height as f64 / 2.0,
            vx: dir * cfg.ball_speed * angle.cos(),
            vy: cfg.ball_speed * angle.sin(),
        };
        self.next_serve_dir = -dir;
        self.rally_hits = 0;
    }

    fn move_opponent(&mut self) {
        let cap = self.config.opponent_speed_cap as f64;
        let target = self.ball.y - self.config.paddle_height as f64 / 2.0;
        let delta = (target - self.opponent_y as f64).clamp(-cap, cap).trunc() as i64;
        self.opponent_y = (self.opponent_y + delta).clamp(0, self.paddle_max());
    }

    fn reflect_walls(&mut self) {
        let r = self.half_ball();
        let h = self.config.frame_height as f64;
        // A ball moving at most `ball_speed` per step can cross at most one wall.
        if self.ball.y - r < 0.0 {
            self.ball.y = 2.0 * r - self.ball.y;
            self.ball.vy = -self.ball.vy;
        } else if self.ball.y + r > h {
            self.ball.y = 2.0 * (h - r) - self.ball.y;
            self.ball.vy = -self.ball.vy;
        }
    }

    /// Bounces the ball off a paddle if its leading edge crossed the paddle
    /// face during this step. `dir` is +1 for the agent side, -1 for the
    /// opponent side.
    fn paddle_contact(&mut self, prev: Ball, paddle_top: i64, face: f64, dir: f64) -> bool {
        let r = self.half_ball();
        let lead_prev = prev.x + dir * r;
        let lead_now = self.ball.x + dir * r;
        let crossed = if dir > 0.0 {
            prev.vx > 0.0 && lead_prev <= face && lead_now > face
        } else {
            prev.vx < 0.0 && lead_prev >= face && lead_now < face
        };
        if !crossed {
            return false;
        }
        let t = (face - lead_prev) / (lead_now - lead_prev);
        let hit_y = prev.y + (self.ball.y - prev.y) * t;
        let top = paddle_top as f64;
        let bottom = top + self.config.paddle_height as f64;
        if hit_y + r <= top || hit_y - r >= bottom {
            return false;
        }
        let centre = (top + bottom) / 2.0;
        let reach = (self.config.paddle_height as f64 + self.config.ball_size as f64) / 2.0;
        let offset = ((hit_y - centre) / reach).clamp(-1.0, 1.0);
        let angle = offset * self.config.max_bounce_deg.to_radians();
        let speed = self.config.ball_speed;
        self.ball.vx = -dir * speed * angle.cos();
        self.ball.vy = speed * angle.sin();
        let rest = 1.0 - t;
        self.ball.x = face - dir * r + self.ball.vx * rest;
        self.ball.y = hit_y + self.ball.vy * rest;
        self.reflect_walls();
        true
    }

    fn award(&mut self, agent_scores: bool) -> i8 {
        if agent_scores {
            self.agent_points += 1;
        } else {
            self.opponent_points += 1;
        }
        if self.agent_points.max(self.opponent_points) >= self.config.points_to_win {
            self.done = true;
        } else {
            self.serve();
        }
        if agent_scores {
            1
        } else {
            -1
        }
    }
}

/// Starts a fresh episode: paddles centred, ball at the board centre, score 0:0.
pub fn reset(config: EnvConfig) -> Result<(EnvState, Frame), EnvError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let first_dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let paddle_top = ((config.frame_height - config.paddle_height) / 2) as i64;
    let mut state = EnvState {
        ball: Ball { x: 0.0, y: 0.0, vx: 0.0, vy: 0.0 },
        agent_y: paddle_top,
        opponent_y: paddle_top,
        agent_points: 0,
        opponent_points: 0,
        rally_hits: 0,
        next_serve_dir: first_dir,
        tick: 0,
        done: false,
        rng,
        config,
    };
    state.serve();
    let frame = render(&state);
    Ok((state, frame))
}

/// Advances the game by one tick.
pub fn step(state: &mut EnvState, action: EnvAction) -> Result<StepResult, EnvError> {
    if state.done {
        return Err(EnvError::EpisodeDone);
    }
    if state.tick >= state.config.max_episode_steps {
        return Err(EnvError::StepCeiling(state.config.max_episode_steps));
    }
    state.tick += 1;

    let speed = state.config.paddle_speed as i64;
    let delta = match action {
        EnvAction::Still => 0,
        EnvAction::Up => -speed,
        EnvAction::Down => speed,
    };
    state.agent_y = (state.agent_y + delta).clamp(0, state.paddle_max());
    state.move_opponent();

    let prev = state.ball;
    state.ball.x += state.ball.vx;
    state.ball.y += state.ball.vy;
    state.reflect_walls();

    let agent_face = state.agent_face();
    let opponent_face = state.opponent_face();
    if state.paddle_contact(prev, state.agent_y, agent_face, 1.0) {
        state.rally_hits += 1;
    } else {
        state.paddle_contact(prev, state.opponent_y, opponent_face, -1.0);
    }

    let width = state.config.frame_width as f64;
    let reward = if state.ball.x >= width {
        state.award(false)
    } else if state.ball.x <= 0.0 {
        state.award(true)
    } else if state.rally_hits >= state.config.max_rally_hits {
        state.award(true)
    } else {
        0
    };

    Ok(StepResult {
        frame: render(state),
        reward,
        point_scored: reward != 0,
        episode_done: state.done,
        score: state.score(),
    })
}

/// Draws both paddles and the ball as filled rectangles of intensity 1.
pub fn render(state: &EnvState) -> Frame {
    let cfg = &state.config;
    let mut frame = Frame::blank(cfg.frame_height, cfg.frame_width);
    frame.tick = state.tick;
    let ph = cfg.paddle_height as i64;
    let pw = cfg.paddle_width as i64;
    frame.fill_rect(state.opponent_y, cfg.paddle_margin as i64, ph, pw);
    frame.fill_rect(state.agent_y, state.agent_face() as i64, ph, pw);
    let bs = cfg.ball_size as i64;
    let r = state.half_ball();
    let top = (state.ball.y - r).round() as i64;
    let left = (state.ball.x - r).round() as i64;
    frame.fill_rect(top, left, bs, bs);
    frame
}
