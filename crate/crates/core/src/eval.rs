//! Frozen-weight evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::EnvConfig;
use crate::introspect::RolloutPolicy;
use crate::nn::{forward, NetworkParams};
use crate::pg::{select_action, PgError};
use crate::scores::LogSinks;
use crate::seed::{derive_seed, STREAM_ENV, STREAM_SAMPLING};
use crate::task::{PongTask, Task};

/// Who picks the actions during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Player<'a> {
    Network(&'a NetworkParams<f32>, RolloutPolicy),
    /// Uniformly random actions.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scores: Vec<i32>,
    pub mean: f64,
    /// Trailing mean at the last episode, using the sinks' window.
    pub smoothed: f64,
}

/// Plays `episodes` games without learning, logging one record per game.
pub fn evaluate(
    player: Player<'_>,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
    sinks: &mut LogSinks,
) -> Result<EvalReport, PgError> {
    let mut task = PongTask::new(env_config.clone()).map_err(|source| PgError::Env { episode: 0, source })?;
    if let Player::Network(params, _) = player {
        crate::pg::check_fit(&task, params.arch()).map_err(PgError::Mismatch)?;
    }
    let mut scores = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let env_err = |source| PgError::Env { episode, source };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SAMPLING, episode as u64));
        let mut input = task.reset(derive_seed(seed, STREAM_ENV, episode as u64)).map_err(env_err)?;
        let mut steps = 0u64;
        let score = loop {
            let action = match player {
                Player::Uniform => rng.random_range(0..task.num_actions()),
                Player::Network(params, policy) => {
                    let trace = forward(params, &input).map_err(|source| PgError::Nn { episode, source })?;
                    match policy {
                        RolloutPolicy::Sampled => select_action(trace.output(), 0.0, &mut rng).0,
                        RolloutPolicy::Greedy => {
                            let y = trace.output();
                            (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b })
                        }
                    }
                }
            };
            let step = task.step(action).map_err(env_err)?;
            steps += 1;
            input = step.input;
            if step.done {
                break step.score;
            }
        };
        sinks.record(episode, score, steps, None)?;
        scores.push(score);
    }
    sinks.flush()?;
    let mean = if scores.is_empty() { 0.0 } else { scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64 };
    Ok(EvalReport { scores, mean, smoothed: sinks.smoothed() })
}
