//! Run configuration: a flat `key=value` file, one pair per line, `#` starts
//! a comment. Command-line flags are applied as further pairs on top.
//!
//! Keys (defaults in parentheses):
//!
//! ```text
//! mode               train-pg | train-a3c | eval | introspect | gradcheck
//! arch               network descriptor, required for training and gradcheck
//! alpha (0.001)      gamma (0.9)         episodes (1000)     seed (0)
//! baseline           episode | running (episode)
//! exploration_bias   (0.05)
//! optimizer          sgd | rmsprop (sgd)   rmsprop_decay (0.99)  rmsprop_eps (1e-8)
//! beta1 beta2 beta3  (1.0 0.5 0.001)
//! workers (1)        time_budget_s (unlimited)
//! checkpoint_every (0 = never)   out_dir (runs/latest)   smoothing_window (100)
//! record_wall_clock (true)       progress_every (100)
//! checkpoint         parameter file for eval / introspect
//! steps (50000)      k (5)       rollout  sampled | greedy (sampled)
//! nodes              comma-separated node indices for weight images (all)
//! loss               squared | loglik (squared), gradcheck only
//! board              default | mini; applied before the individual env keys
//! frame_height frame_width paddle_height paddle_width paddle_margin ball_size
//! paddle_speed ball_speed opponent_speed_cap points_to_win max_bounce_deg
//! max_serve_deg max_rally_hits max_episode_steps env_seed
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::a3c::LossWeights;
use crate::env::EnvConfig;
use crate::introspect::RolloutPolicy;
use crate::nn::{ArchitectureSpec, LossTag, UpdateRule};
use crate::pg::{BaselineMode, Hyperparams};

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    CommandLine,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::CommandLine => f.write_str("command line"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}: key `{key}`: {reason}")]
    Key { origin: Origin, key: String, reason: String },
    #[error("{origin}: expected `key=value`, got `{text}`")]
    Syntax { origin: Origin, text: String },
    #[error("missing required key `{key}` for mode {mode}")]
    Missing { key: &'static str, mode: Mode },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TrainPg,
    TrainA3c,
    Eval,
    Introspect,
    Gradcheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::TrainPg => "train-pg",
            Mode::TrainA3c => "train-a3c",
            Mode::Eval => "eval",
            Mode::Introspect => "introspect",
            Mode::Gradcheck => "gradcheck",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        [Mode::TrainPg, Mode::TrainA3c, Mode::Eval, Mode::Introspect, Mode::Gradcheck]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub env: EnvConfig,
    pub arch: Option<ArchitectureSpec>,
    pub hyper: Hyperparams,
    pub loss_weights: LossWeights,
    pub workers: usize,
    pub time_budget: Option<Duration>,
    pub checkpoint_every: usize,
    pub out_dir: PathBuf,
    pub smoothing_window: usize,
    pub record_wall_clock: bool,
    pub progress_every: usize,
    pub checkpoint: Option<PathBuf>,
    pub steps: usize,
    pub k: usize,
    pub rollout: RolloutPolicy,
    pub nodes: Option<Vec<usize>>,
    pub loss: LossTag,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            env: EnvConfig::default(),
            arch: None,
            hyper: Hyperparams::default(),
            loss_weights: LossWeights::default(),
            workers: 1,
            time_budget: None,
            checkpoint_every: 0,
            out_dir: PathBuf::from("runs/latest"),
            smoothing_window: 100,
            record_wall_clock: true,
            progress_every: 100,
            checkpoint: None,
            steps: 50_000,
            k: 5,
            rollout: RolloutPolicy::Sampled,
            nodes: None,
            loss: LossTag::Squared,
        }
    }
}

/// One `key=value` setting with its origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

/// Splits config text into settings, skipping blanks and `#` comments.
pub fn parse_settings(text: &str, path: &Path) -> Result<Vec<Setting>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let origin = Origin::File { path: path.to_path_buf(), line: i + 1 };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { origin, text: line.to_string() });
        };
        out.push(Setting { key: k.trim().to_string(), value: v.trim().to_string(), origin });
    }
    Ok(out)
}

fn parse<T: FromStr>(s: &Setting) -> Result<T, String> {
    s.value.parse().map_err(|_| format!("cannot parse `{}`", s.value))
}

fn parse_bool(s: &Setting) -> Result<bool, String> {
    match s.value.as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{}`", s.value)),
    }
}

impl RunConfig {
    /// Applies settings in order; `board` presets go first so that individual
    /// env keys refine them regardless of position.
    pub fn apply(&mut self, settings: &[Setting]) -> Result<(), ConfigError> {
        let (presets, rest): (Vec<&Setting>, Vec<&Setting>) = settings.iter().partition(|s| s.key == "board");
        for s in presets.into_iter().chain(rest) {
            self.apply_one(s).map_err(|reason| ConfigError::Key {
                origin: s.origin.clone(),
                key: s.key.clone(),
                reason,
            })?;
        }
        Ok(())
    }

    fn apply_one(&mut self, s: &Setting) -> Result<(), String> {
        let e = &mut self.env;
        let h = &mut self.hyper;
        match s.key.as_str() {
            "mode" => self.mode = Some(s.value.parse()?),
            "arch" => self.arch = Some(ArchitectureSpec::parse(&s.value).map_err(|e| e.to_string())?),
            "alpha" => {
                h.alpha = parse(s)?;
                if !(h.alpha.is_finite() && h.alpha >= 0.0) {
                    return Err("must be finite and non-negative".into());
                }
            }
            "gamma" => {
                h.gamma = parse(s)?;
                if !(0.0..1.0).contains(&h.gamma) {
                    return Err(format!("{} is out of range [0, 1)", h.gamma));
                }
            }
            "episodes" => h.episodes = parse(s)?,
            "seed" => h.seed = parse(s)?,
            "baseline" => {
                h.baseline_mode = match s.value.as_str() {
                    "episode" => BaselineMode::Episode,
                    "running" => BaselineMode::Running,
                    v => return Err(format!("expected episode or running, got `{v}`")),
                }
            }
            "exploration_bias" => {
                h.exploration_bias = parse(s)?;
                if !(0.0..=1.0).contains(&h.exploration_bias) {
                    return Err("must lie in [0, 1]".into());
                }
            }
            "optimizer" => {
                h.update_rule = match (s.value.as_str(), h.update_rule) {
                    ("sgd", _) => UpdateRule::Plain,
                    ("rmsprop", r @ UpdateRule::RmsProp { .. }) => r,
                    ("rmsprop", UpdateRule::Plain) => UpdateRule::rmsprop(),
                    (v, _) => return Err(format!("expected sgd or rmsprop, got `{v}`")),
                }
            }
            "rmsprop_decay" | "rmsprop_eps" => {
                let v: f64 = parse(s)?;
                let UpdateRule::RmsProp { decay, eps } = h.update_rule else {
                    return Err("set optimizer=rmsprop first".into());
                };
                h.update_rule = if s.key == "rmsprop_decay" {
                    if !(0.0..1.0).contains(&v) {
                        return Err("must lie in [0, 1)".into());
                    }
                    UpdateRule::RmsProp { decay: v, eps }
                } else {
                    if !(v > 0.0) {
                        return Err("must be positive".into());
                    }
                    UpdateRule::RmsProp { decay, eps: v }
                };
            }
            "beta1" | "beta2" | "beta3" => {
                let v: f64 = parse(s)?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err("must be finite and non-negative".into());
                }
                match s.key.as_str() {
                    "beta1" if v == 0.0 => return Err("must be positive".into()),
                    "beta1" => self.loss_weights.beta1 = v,
                    "beta2" => self.loss_weights.beta2 = v,
                    _ => self.loss_weights.beta3 = v,
                }
            }
            "workers" => {
                self.workers = parse(s)?;
                if self.workers == 0 {
                    return Err("must be at least 1".into());
                }
            }
            "time_budget_s" => {
                let v: f64 = parse(s)?;
                if !(v.is_finite() && v > 0.0) {
                    return Err("must be positive".into());
                }
                self.time_budget = Some(Duration::from_secs_f64(v));
            }
            "checkpoint_every" => self.checkpoint_every = parse(s)?,
            "out_dir" => self.out_dir = PathBuf::from(&s.value),
            "smoothing_window" => {
                self.smoothing_window = parse(s)?;
                if self.smoothing_window == 0 {
                    return Err("must be at least 1".into());
                }
            }
            "record_wall_clock" => self.record_wall_clock = parse_bool(s)?,
            "progress_every" => self.progress_every = parse(s)?,
            "checkpoint" => self.checkpoint = Some(PathBuf::from(&s.value)),
            "steps" => self.steps = parse(s)?,
            "k" => {
                self.k = parse(s)?;
                if self.k == 0 {
                    return Err("must be at least 1".into());
                }
            }
            "rollout" => {
                self.rollout = match s.value.as_str() {
                    "sampled" => RolloutPolicy::Sampled,
                    "greedy" => RolloutPolicy::Greedy,
                    v => return Err(format!("expected sampled or greedy, got `{v}`")),
                }
            }
            "nodes" => {
                let nodes: Result<Vec<usize>, _> = s.value.split(',').map(|n| n.trim().parse()).collect();
                self.nodes = Some(nodes.map_err(|_| format!("expected comma-separated indices, got `{}`", s.value))?);
            }
            "loss" => {
                self.loss = match s.value.as_str() {
                    "squared" => LossTag::Squared,
                    "loglik" => LossTag::LogLikelihood,
                    v => return Err(format!("expected squared or loglik, got `{v}`")),
                }
            }
            "board" => {
                let seed = e.rng_seed;
                *e = match s.value.as_str() {
                    "default" => EnvConfig::default(),
                    "mini" => EnvConfig::mini(),
                    v => return Err(format!("expected default or mini, got `{v}`")),
                }
                .with_seed(seed);
            }
            "frame_height" => e.frame_height = parse(s)?,
            "frame_width" => e.frame_width = parse(s)?,
            "paddle_height" => e.paddle_height = parse(s)?,
            "paddle_width" => e.paddle_width = parse(s)?,
            "paddle_margin" => e.paddle_margin = parse(s)?,
            "ball_size" => e.ball_size = parse(s)?,
            "paddle_speed" => e.paddle_speed = parse(s)?,
            "ball_speed" => e.ball_speed = parse(s)?,
            "opponent_speed_cap" => e.opponent_speed_cap = parse(s)?,
            "points_to_win" => e.points_to_win = parse(s)?,
            "max_bounce_deg" => e.max_bounce_deg = parse(s)?,
            "max_serve_deg" => e.max_serve_deg = parse(s)?,
            "max_rally_hits" => e.max_rally_hits = parse(s)?,
            "max_episode_steps" => e.max_episode_steps = parse(s)?,
            "env_seed" => e.rng_seed = parse(s)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Checks cross-field requirements once every setting is in.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let env_origin = Origin::CommandLine;
        self.env.validate().map_err(|e| match e {
            crate::env::EnvError::Config { field, reason } => {
                ConfigError::Key { origin: env_origin, key: field.to_string(), reason }
            }
            other => ConfigError::Key { origin: env_origin, key: "board".into(), reason: other.to_string() },
        })?;
        let Some(mode) = self.mode else {
            return Ok(());
        };
        match mode {
            Mode::TrainPg | Mode::TrainA3c | Mode::Gradcheck if self.arch.is_none() => {
                return Err(ConfigError::Missing { key: "arch", mode });
            }
            Mode::Eval | Mode::Introspect if self.checkpoint.is_none() => {
                return Err(ConfigError::Missing { key: "checkpoint", mode });
            }
            Mode::TrainPg | Mode::TrainA3c | Mode::Eval if self.hyper.episodes == 0 => {
                return Err(ConfigError::Key { origin: Origin::CommandLine, key: "episodes".into(), reason: "must be at least 1".into() });
            }
            _ => {}
        }
        Ok(())
    }

    /// Every resolved setting as `key=value` lines that [`load_config`]
    /// reads back to an equal configuration.
    pub fn manifest(&self) -> String {
        let h = &self.hyper;
        let e = &self.env;
        let mut lines: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
        if let Some(m) = self.mode {
            put("mode", m.name().into());
        }
        if let Some(a) = &self.arch {
            put("arch", a.descriptor());
        }
        put("alpha", h.alpha.to_string());
        put("gamma", h.gamma.to_string());
        put("episodes", h.episodes.to_string());
        put("seed", h.seed.to_string());
        put("baseline", match h.baseline_mode { BaselineMode::Episode => "episode", BaselineMode::Running => "running" }.into());
        put("exploration_bias", h.exploration_bias.to_string());
        match h.update_rule {
            UpdateRule::Plain => put("optimizer", "sgd".into()),
            UpdateRule::RmsProp { decay, eps } => {
                put("optimizer", "rmsprop".into());
                put("rmsprop_decay", decay.to_string());
                put("rmsprop_eps", eps.to_string());
            }
        }
        put("beta1", self.loss_weights.beta1.to_string());
        put("beta2", self.loss_weights.beta2.to_string());
        put("beta3", self.loss_weights.beta3.to_string());
        put("workers", self.workers.to_string());
        if let Some(t) = self.time_budget {
            put("time_budget_s", t.as_secs_f64().to_string());
        }
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("smoothing_window", self.smoothing_window.to_string());
        put("record_wall_clock", self.record_wall_clock.to_string());
        put("progress_every", self.progress_every.to_string());
        if let Some(c) = &self.checkpoint {
            put("checkpoint", c.display().to_string());
        }
        put("steps", self.steps.to_string());
        put("k", self.k.to_string());
        put("rollout", match self.rollout { RolloutPolicy::Sampled => "sampled", RolloutPolicy::Greedy => "greedy" }.into());
        if let Some(n) = &self.nodes {
            put("nodes", n.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","));
        }
        put("loss", match self.loss { LossTag::Squared => "squared", LossTag::LogLikelihood => "loglik" }.into());
        put("frame_height", e.frame_height.to_string());
        put("frame_width", e.frame_width.to_string());
        put("paddle_height", e.paddle_height.to_string());
        put("paddle_width", e.paddle_width.to_string());
        put("paddle_margin", e.paddle_margin.to_string());
        put("ball_size", e.ball_size.to_string());
        put("paddle_speed", e.paddle_speed.to_string());
        put("ball_speed", e.ball_speed.to_string());
        put("opponent_speed_cap", e.opponent_speed_cap.to_string());
        put("points_to_win", e.points_to_win.to_string());
        put("max_bounce_deg", e.max_bounce_deg.to_string());
        put("max_serve_deg", e.max_serve_deg.to_string());
        put("max_rally_hits", e.max_rally_hits.to_string());
        put("max_episode_steps", e.max_episode_steps.to_string());
        put("env_seed", e.rng_seed.to_string());
        lines.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    load_config_with(path, &[])
}

/// Loads `path`, then applies `overrides` on top.
pub fn load_config_with(path: &Path, overrides: &[Setting]) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = RunConfig::default();
    cfg.apply(&parse_settings(&text, path)?)?;
    cfg.apply(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `manifest` (the resolved configuration) plus any extra lines such
/// as derived seeds into `dir/manifest`.
pub fn write_manifest(cfg: &RunConfig, extra: &[(&str, String)], dir: &Path) -> Result<PathBuf, ConfigError> {
    let path = dir.join("manifest");
    let mut text = cfg.manifest();
    for (k, v) in extra {
        text.push_str(&format!("# {k}={v}\n"));
    }
    fs::write(&path, text).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
    Ok(path)
}
