//! Asynchronous advantage actor-critic.
//!
//! `n` worker threads each own a task instance. A worker claims an episode
//! index from a global counter, plays it with the latest published snapshot,
//! computes the three-term loss over the episode and applies one update to the
//! master parameters. Snapshots are immutable and published whole, so readers
//! never see a half-applied update.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{save_checkpoint, CheckpointError, CheckpointMeta};
use crate::env::{EnvConfig, EnvError};
use crate::nn::{
    backward_into, forward, init_params, Activation, ArchitectureSpec, Gradients, NetworkParams, NnError, Optimizer,
    Real,
};
use crate::pg::{check_fit, collect_episode, Hyperparams, PgError, Trajectory};
use crate::scores::LogSinks;
use crate::seed::{derive_seed, STREAM_ENV, STREAM_INIT, STREAM_SAMPLING};
use crate::task::{PongTask, Task};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum A3cError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pg(#[from] PgError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("score log: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta1: 1.0, beta2: 0.5, beta3: 0.001 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), A3cError> {
        let ok = |b: f64| b.is_finite() && b >= 0.0;
        if !(ok(self.beta1) && ok(self.beta2) && ok(self.beta3)) || self.beta1 == 0.0 {
            return Err(A3cError::Config(format!(
                "loss weights must be finite and non-negative with beta1 > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Episode sums of the three loss terms. `entropy_loss` holds the policy
/// entropy `H = −Σ π log π ≥ 0`; it is subtracted in `total` so that
/// minimising the total keeps the policy from collapsing early.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn finish(policy_loss: f64, value_loss: f64, entropy_loss: f64, w: &LossWeights) -> Self {
        let total = w.beta1 * policy_loss + w.beta2 * value_loss - w.beta3 * entropy_loss;
        Self { policy_loss, value_loss, entropy_loss, total }
    }
}

fn step_terms(policy: &[f64], action: usize, ret: f64, value: f64) -> (f64, f64, f64, bool) {
    let pa = policy[action];
    let clamped = pa < PROB_FLOOR;
    let advantage = ret - value;
    let policy_loss = -pa.max(PROB_FLOOR).ln() * advantage;
    let value_loss = advantage * advantage;
    let entropy = -policy.iter().map(|&p| p * p.max(PROB_FLOOR).ln()).sum::<f64>();
    (policy_loss, value_loss, entropy, clamped)
}

/// Loss terms from the outputs stored while the episode was played.
pub fn compute_losses<T: Real>(trajectory: &Trajectory<T>, weights: &LossWeights) -> Result<LossBreakdown, A3cError> {
    if trajectory.discounted_returns.len() != trajectory.steps.len() {
        return Err(A3cError::Config("discounted returns not populated".into()));
    }
    let (mut lp, mut lv, mut lh) = (0.0, 0.0, 0.0);
    let mut clamped = false;
    for (step, &ret) in trajectory.steps.iter().zip(&trajectory.discounted_returns) {
        let value = step
            .value
            .ok_or_else(|| A3cError::Config("trajectory carries no value estimates".into()))?
            .as_f64();
        let policy: Vec<f64> = step.policy_output.iter().map(|p| p.as_f64()).collect();
        let (p, v, h, c) = step_terms(&policy, step.action, ret, value);
        lp += p;
        lv += v;
        lh += h;
        clamped |= c;
    }
    if clamped {
        log::warn!("episode {}: action probability below {PROB_FLOOR:e} clamped", trajectory.episode_index);
    }
    Ok(LossBreakdown::finish(lp, lv, lh, weights))
}

/// Gradient of the total loss over the episode, returned as the ascent
/// direction (negated) for [`Optimizer::apply`]. The advantage in the policy
/// term is held constant, so the critic is trained by the value term only.
pub fn actor_critic_grads<T: Real>(
    trajectory: &Trajectory<T>,
    params: &NetworkParams<T>,
    weights: &LossWeights,
) -> Result<(Gradients<T>, LossBreakdown), PgError> {
    let episode = trajectory.episode_index;
    if trajectory.discounted_returns.len() != trajectory.steps.len() {
        return Err(PgError::Mismatch("discounted returns not populated".into()));
    }
    let mut grads = Gradients::zeros_like(params);
    let (mut lp, mut lv, mut lh) = (0.0, 0.0, 0.0);
    let mut clamped = false;
    let n = params.arch().output_len();
    let mut dy = vec![T::zero(); n];
    for (t, (step, &ret)) in trajectory.steps.iter().zip(&trajectory.discounted_returns).enumerate() {
        let trace = forward(params, &step.diff_input).map_err(|source| PgError::Nn { episode, source })?;
        let value = trace
            .value_output
            .ok_or_else(|| PgError::Mismatch("network has no value head".into()))?
            .as_f64();
        let policy: Vec<f64> = trace.output().iter().map(|p| p.as_f64()).collect();
        let (p, v, h, c) = step_terms(&policy, step.action, ret, value);
        let advantage = ret - value;
        if !advantage.is_finite() {
            return Err(PgError::Numerical { episode, step: t });
        }
        lp += p;
        lv += v;
        lh += h;
        clamped |= c;
        for (k, d) in dy.iter_mut().enumerate() {
            let pk = policy[k].max(PROB_FLOOR);
            // d/dπ_k of −β3·H is β3·(log π_k + 1)
            let mut g = weights.beta3 * (pk.ln() + 1.0);
            if k == step.action {
                g -= weights.beta1 * advantage / pk;
            }
            *d = T::lit(-g);
        }
        let dv = T::lit(-weights.beta2 * 2.0 * (value - ret));
        backward_into(params, &trace, &dy, Some(dv), &mut grads).map_err(|source| PgError::Nn { episode, source })?;
    }
    if clamped {
        log::warn!("episode {episode}: action probability below {PROB_FLOOR:e} clamped");
    }
    Ok((grads, LossBreakdown::finish(lp, lv, lh, weights)))
}

/// A published, immutable parameter version.
#[derive(Debug)]
pub struct Snapshot {
    pub params: NetworkParams<f32>,
    pub version: u64,
    pub checksum: u32,
}

impl Snapshot {
    fn new(params: NetworkParams<f32>, version: u64) -> Self {
        let checksum = params_checksum(&params, version);
        Self { params, version, checksum }
    }

    /// Recomputes the checksum written at publication time.
    pub fn verify(&self) -> bool {
        params_checksum(&self.params, self.version) == self.checksum
    }
}

fn params_checksum(params: &NetworkParams<f32>, version: u64) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&version.to_le_bytes());
    for block in params.blocks() {
        for v in block {
            h.update(&v.to_le_bytes());
        }
    }
    h.finalize()
}

struct Master {
    params: NetworkParams<f32>,
    optimizer: Optimizer<f32>,
    version: u64,
}

/// Master parameters with one writer at a time and snapshot readers.
pub struct SharedParams {
    master: Mutex<Master>,
    published: RwLock<Arc<Snapshot>>,
}

impl SharedParams {
    pub fn new(params: NetworkParams<f32>, optimizer: Optimizer<f32>) -> Self {
        let published = RwLock::new(Arc::new(Snapshot::new(params.clone(), 0)));
        Self { master: Mutex::new(Master { params, optimizer, version: 0 }), published }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.published.read().expect("snapshot lock poisoned"))
    }

    /// Number of updates applied so far.
    pub fn version(&self) -> u64 {
        self.snapshot().version
    }

    /// Applies one ascent step and publishes the result. Returns the new
    /// version.
    pub fn apply(&self, grads: &Gradients<f32>, alpha: f32) -> Result<u64, NnError> {
        let mut m = self.master.lock().expect("master lock poisoned");
        let Master { params, optimizer, version } = &mut *m;
        optimizer.apply(params, grads, alpha)?;
        *version += 1;
        let snap = Arc::new(Snapshot::new(params.clone(), *version));
        *self.published.write().expect("snapshot lock poisoned") = snap;
        Ok(*version)
    }

    pub fn into_params(self) -> NetworkParams<f32> {
        self.master.into_inner().expect("master lock poisoned").params
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct A3cOptions {
    pub workers: usize,
    /// Stop claiming new episodes after this long.
    pub time_budget: Option<Duration>,
}

impl Default for A3cOptions {
    fn default() -> Self {
        Self { workers: 1, time_budget: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerFailure {
    pub worker: usize,
    pub message: String,
}

#[derive(Debug)]
pub struct A3cRun {
    pub params: NetworkParams<f32>,
    pub episodes_completed: usize,
    pub updates_applied: u64,
    pub failures: Vec<WorkerFailure>,
}

struct EpisodeReport {
    episode: usize,
    worker: usize,
    score: i32,
    steps: u64,
    wall_clock_s: f64,
}

fn validate(arch: &ArchitectureSpec, hyper: &Hyperparams, weights: &LossWeights, opts: &A3cOptions) -> Result<(), A3cError> {
    hyper.validate()?;
    weights.validate()?;
    if opts.workers == 0 {
        return Err(A3cError::Config("workers must be at least 1".into()));
    }
    if !arch.has_value_head() {
        return Err(A3cError::Config(format!("`{arch}` has no value head; append `:value`")));
    }
    if arch.output_activation() != Activation::Softmax {
        return Err(A3cError::Config(format!("`{arch}` needs a softmax policy head")));
    }
    Ok(())
}

/// Plays and learns from one episode against `params`.
fn run_episode<K: Task + ?Sized>(
    task: &mut K,
    params: &NetworkParams<f32>,
    hyper: &Hyperparams,
    weights: &LossWeights,
    episode: usize,
) -> Result<(Trajectory<f32>, Gradients<f32>), PgError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, STREAM_SAMPLING, episode as u64));
    let env_seed = derive_seed(hyper.seed, STREAM_ENV, episode as u64);
    let mut traj = collect_episode(task, params, hyper.exploration_bias, env_seed, &mut rng, episode)?;
    traj.propagate(hyper.gamma);
    let (grads, _) = actor_critic_grads(&traj, params, weights)?;
    Ok((traj, grads))
}

fn claim(counter: &AtomicUsize, budget: usize) -> Option<usize> {
    counter.fetch_update(Ordering::AcqRel, Ordering::Acquire, |e| (e < budget).then_some(e + 1)).ok()
}

fn worker_run<K: Task>(
    worker: usize,
    task: &mut K,
    shared: &SharedParams,
    counter: &AtomicUsize,
    hyper: &Hyperparams,
    weights: &LossWeights,
    deadline: Option<Instant>,
    started: Instant,
    reports: &mpsc::Sender<EpisodeReport>,
) -> Result<(), PgError> {
    loop {
        if deadline.is_some_and(|d| Instant::now() >= d) {
            return Ok(());
        }
        let Some(episode) = claim(counter, hyper.episodes) else {
            return Ok(());
        };
        let snap = shared.snapshot();
        let (traj, grads) = run_episode(task, &snap.params, hyper, weights, episode)?;
        drop(snap);
        shared
            .apply(&grads, hyper.alpha as f32)
            .map_err(|source| PgError::Nn { episode, source })?;
        let report = EpisodeReport {
            episode,
            worker,
            score: traj.score,
            steps: traj.horizon() as u64,
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        if reports.send(report).is_err() {
            return Ok(());
        }
    }
}

/// Trains with `opts.workers` threads, each building its own task with
/// `make_task(worker_id)`.
pub fn train_a3c_with<K, F>(
    make_task: F,
    arch: &ArchitectureSpec,
    hyper: &Hyperparams,
    weights: &LossWeights,
    opts: &A3cOptions,
    sinks: &mut LogSinks,
) -> Result<A3cRun, A3cError>
where
    K: Task + Send,
    F: Fn(usize) -> Result<K, EnvError> + Sync,
{
    validate(arch, hyper, weights, opts)?;
    let mut tasks = Vec::with_capacity(opts.workers);
    for w in 0..opts.workers {
        let task = make_task(w).map_err(|e| A3cError::Config(format!("worker {w}: {e}")))?;
        check_fit(&task, arch).map_err(A3cError::Config)?;
        tasks.push(task);
    }
    let initial = init_params(arch, derive_seed(hyper.seed, STREAM_INIT, 0));
    let shared = SharedParams::new(initial, Optimizer::new(hyper.update_rule));
    let counter = AtomicUsize::new(0);
    let started = Instant::now();
    let deadline = opts.time_budget.map(|b| started + b);
    let (tx, rx) = mpsc::channel::<EpisodeReport>();

    let mut failures = Vec::new();
    let mut completed = 0usize;
    let mut sink_error = None;
    thread::scope(|scope| {
        let handles: Vec<_> = tasks
            .into_iter()
            .enumerate()
            .map(|(w, mut task)| {
                let tx = tx.clone();
                let (shared, counter) = (&shared, &counter);
                scope.spawn(move || worker_run(w, &mut task, shared, counter, hyper, weights, deadline, started, &tx))
            })
            .collect();
        drop(tx);

        // restore episode order before anything reaches the sinks
        let mut pending = BTreeMap::new();
        let mut emit = |r: EpisodeReport, sinks: &mut LogSinks| -> Result<(), A3cError> {
            sinks.record_at(r.episode, r.score, r.steps, Some(r.worker), r.wall_clock_s)?;
            completed += 1;
            if let Some(path) = sinks.checkpoint_due(r.episode + 1) {
                let snap = shared.snapshot();
                let meta = CheckpointMeta::default()
                    .with("episodes", r.episode + 1)
                    .with("seed", hyper.seed)
                    .with("version", snap.version);
                save_checkpoint(&snap.params, &meta, &path)?;
            }
            Ok(())
        };
        let mut next = 0usize;
        for report in rx {
            pending.insert(report.episode, report);
            while let Some(r) = pending.remove(&next) {
                if sink_error.is_none() {
                    sink_error = emit(r, sinks).err();
                }
                next += 1;
            }
        }
        // episodes lost to a failed worker leave gaps; flush the rest in order
        if !pending.is_empty() {
            log::warn!("{} episode(s) reported after a gap at episode {next}", pending.len());
        }
        for (_, r) in std::mem::take(&mut pending) {
            if sink_error.is_none() {
                sink_error = emit(r, sinks).err();
            }
        }

        for (w, h) in handles.into_iter().enumerate() {
            let message = match h.join() {
                Ok(Ok(())) => continue,
                Ok(Err(e)) => e.to_string(),
                Err(panic) => panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            };
            log::error!("worker {w} failed: {message}");
            failures.push(WorkerFailure { worker: w, message });
        }
    });
    if let Some(e) = sink_error {
        return Err(e);
    }
    sinks.flush()?;
    let updates_applied = shared.version();
    Ok(A3cRun { params: shared.into_params(), episodes_completed: completed, updates_applied, failures })
}

/// [`train_a3c_with`] on Pong frame differences.
pub fn train_a3c(
    env_config: &EnvConfig,
    arch: &ArchitectureSpec,
    hyper: &Hyperparams,
    weights: &LossWeights,
    opts: &A3cOptions,
    sinks: &mut LogSinks,
) -> Result<A3cRun, A3cError> {
    env_config.validate().map_err(|e| A3cError::Config(e.to_string()))?;
    train_a3c_with(|_| PongTask::new(env_config.clone()), arch, hyper, weights, opts, sinks)
}

/// Single-threaded actor-critic with the same seeding and update order as a
/// one-worker [`train_a3c_with`] run.
pub fn train_actor_critic_sync<K: Task + ?Sized>(
    task: &mut K,
    arch: &ArchitectureSpec,
    hyper: &Hyperparams,
    weights: &LossWeights,
    sinks: &mut LogSinks,
) -> Result<NetworkParams<f32>, A3cError> {
    validate(arch, hyper, weights, &A3cOptions::default())?;
    check_fit(task, arch).map_err(A3cError::Config)?;
    let mut params = init_params(arch, derive_seed(hyper.seed, STREAM_INIT, 0));
    let mut optimizer = Optimizer::new(hyper.update_rule);
    let started = Instant::now();
    for episode in 0..hyper.episodes {
        let (traj, grads) = run_episode(task, &params, hyper, weights, episode)?;
        optimizer
            .apply(&mut params, &grads, hyper.alpha as f32)
            .map_err(|source| PgError::Nn { episode, source })?;
        sinks.record_at(episode, traj.score, traj.horizon() as u64, Some(0), started.elapsed().as_secs_f64())?;
    }
    sinks.flush()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::pg::TrajectoryStep;
    use crate::task::ContextualBandit;
    use rand::Rng;

    fn toy_trajectory(params: &NetworkParams<f64>, seed: u64) -> Trajectory<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut traj = Trajectory::new(0);
        for _ in 0..4 {
            let input: Vec<f64> = (0..params.arch().input_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let trace = forward(params, &input).unwrap();
            let action = rng.random_range(0..3);
            let mut label = vec![0.0; 3];
            label[action] = 1.0;
            traj.steps.push(TrajectoryStep {
                diff_input: input,
                action,
                action_label: label,
                policy_output: trace.output().to_vec(),
                value: trace.value_output,
                raw_reward: [0, 0, 1, -1][traj.steps.len()],
            });
        }
        traj.propagate(0.9);
        traj
    }

    /// Total loss with the advantages in the policy term pinned to `fixed`.
    fn pinned_objective(params: &NetworkParams<f64>, traj: &Trajectory<f64>, fixed: &[f64], w: &LossWeights) -> f64 {
        let mut total = 0.0;
        for ((step, &ret), &adv) in traj.steps.iter().zip(&traj.discounted_returns).zip(fixed) {
            let trace = forward(params, &step.diff_input).unwrap();
            let p = trace.output();
            let v = trace.value_output.unwrap();
            let h: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
            total += w.beta1 * (-p[step.action].ln() * adv) + w.beta2 * (ret - v).powi(2) - w.beta3 * h;
        }
        total
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let arch = ArchitectureSpec::parse("6:5:3:value").unwrap();
        let params: NetworkParams<f64> = init_params(&arch, 9);
        let traj = toy_trajectory(&params, 4);
        let fixed: Vec<f64> =
            traj.steps.iter().zip(&traj.discounted_returns).map(|(s, r)| r - s.value.unwrap()).collect();
        let w = LossWeights { beta1: 1.0, beta2: 0.5, beta3: 0.3 };
        let (mut grads, _) = actor_critic_grads(&traj, &params, &w).unwrap();
        grads.scale(-1.0);
        let report = check_gradients(&params, &grads, |p| pinned_objective(p, &traj, &fixed, &w));
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn closed_form_losses() {
        let w = LossWeights::default();
        let mut traj = Trajectory::<f64>::new(0);
        traj.steps.push(TrajectoryStep {
            diff_input: vec![],
            action: 0,
            action_label: vec![1.0, 0.0, 0.0],
            policy_output: vec![1.0 / 3.0; 3],
            value: Some(0.5),
            raw_reward: 1,
        });
        traj.discounted_returns = vec![1.0];
        let b = compute_losses(&traj, &w).unwrap();
        assert!((b.entropy_loss - 3f64.ln()).abs() < 1e-9);
        assert_eq!(b.value_loss, 0.25);
        assert_eq!(b.total, w.beta1 * b.policy_loss + w.beta2 * b.value_loss - w.beta3 * b.entropy_loss);

        traj.steps[0].policy_output = vec![1.0, 0.0, 0.0];
        traj.steps[0].value = Some(1.0);
        let b = compute_losses(&traj, &w).unwrap();
        assert_eq!((b.policy_loss, b.value_loss, b.entropy_loss), (0.0, 0.0, 0.0));
    }

    #[test]
    fn beta2_scales_only_the_value_term() {
        let arch = ArchitectureSpec::parse("6:5:3:value").unwrap();
        let params: NetworkParams<f64> = init_params(&arch, 1);
        let traj = toy_trajectory(&params, 2);
        let a = compute_losses(&traj, &LossWeights::default()).unwrap();
        let b = compute_losses(&traj, &LossWeights { beta2: 1.5, ..LossWeights::default() }).unwrap();
        assert_eq!(a.policy_loss.to_bits(), b.policy_loss.to_bits());
        assert_eq!(a.entropy_loss.to_bits(), b.entropy_loss.to_bits());
        assert!((b.total - a.total - 1.0 * a.value_loss).abs() < 1e-12);
        let steps = traj.horizon() as f64;
        assert!(a.entropy_loss >= 0.0 && a.entropy_loss / steps <= 3f64.ln() + 1e-12);
    }

    #[test]
    fn snapshots_never_tear() {
        let arch = ArchitectureSpec::parse("50:40:3:value").unwrap();
        let shared = SharedParams::new(init_params(&arch, 0), Optimizer::new(crate::nn::UpdateRule::Plain));
        let mut grads = Gradients::zeros_like(&init_params::<f32>(&arch, 1));
        for block in grads.blocks_mut() {
            block.iter_mut().enumerate().for_each(|(i, g)| *g = (i % 7) as f32 - 3.0);
        }
        let done = std::sync::atomic::AtomicBool::new(false);
        thread::scope(|s| {
            let reader = s.spawn(|| {
                let mut checked = 0u64;
                let mut last = 0;
                while !done.load(Ordering::Acquire) {
                    let snap = shared.snapshot();
                    assert!(snap.verify(), "torn snapshot at version {}", snap.version);
                    assert!(snap.version >= last);
                    last = snap.version;
                    checked += 1;
                }
                checked
            });
            let writers: Vec<_> = (0..3)
                .map(|_| s.spawn(|| (0..300).for_each(|_| { shared.apply(&grads, 1e-3).unwrap(); })))
                .collect();
            writers.into_iter().for_each(|w| w.join().unwrap());
            done.store(true, Ordering::Release);
            assert!(reader.join().unwrap() > 0);
        });
        assert_eq!(shared.version(), 900);
    }

    fn bandit_hyper(episodes: usize, alpha: f64) -> Hyperparams {
        Hyperparams { alpha, episodes, seed: 3, ..Hyperparams::default() }
    }

    #[test]
    fn exactly_m_episodes_are_consumed() {
        let arch = ArchitectureSpec::parse("3:8:3:value").unwrap();
        let hyper = bandit_hyper(37, 0.01);
        let mut sinks = LogSinks::memory(10);
        let opts = A3cOptions { workers: 3, time_budget: None };
        let run = train_a3c_with(|_| Ok(ContextualBandit::new(3, 3, 1, 6)), &arch, &hyper, &LossWeights::default(), &opts, &mut sinks)
            .unwrap();
        assert_eq!(run.episodes_completed, 37);
        assert_eq!(run.updates_applied, 37);
        let episodes: Vec<usize> = sinks.records().iter().map(|r| r.episode).collect();
        assert_eq!(episodes, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn zero_alpha_and_zero_budget_keep_initial_params() {
        let arch = ArchitectureSpec::parse("3:8:3:value").unwrap();
        let initial = init_params::<f32>(&arch, derive_seed(3, STREAM_INIT, 0));
        for (episodes, alpha, workers) in [(20, 0.0, 2), (0, 0.1, 2)] {
            let opts = A3cOptions { workers, time_budget: None };
            let run = train_a3c_with(
                |_| Ok(ContextualBandit::new(3, 3, 1, 6)),
                &arch,
                &bandit_hyper(episodes, alpha),
                &LossWeights::default(),
                &opts,
                &mut LogSinks::memory(5),
            )
            .unwrap();
            assert_eq!(run.params, initial);
            assert_eq!(run.episodes_completed, episodes);
            assert!(run.failures.is_empty());
        }
    }

    #[test]
    fn one_worker_matches_the_synchronous_run() {
        let arch = ArchitectureSpec::parse("3:8:3:value").unwrap();
        let hyper = bandit_hyper(40, 0.05);
        let w = LossWeights::default();
        let sync = train_actor_critic_sync(&mut ContextualBandit::new(3, 3, 1, 6), &arch, &hyper, &w, &mut LogSinks::memory(5))
            .unwrap();
        let run = train_a3c_with(|_| Ok(ContextualBandit::new(3, 3, 1, 6)), &arch, &hyper, &w, &A3cOptions::default(), &mut LogSinks::memory(5))
            .unwrap();
        let bits = |p: &NetworkParams<f32>| p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&sync), bits(&run.params));
    }

    #[test]
    fn configuration_errors_abort_before_spawning() {
        let hyper = bandit_hyper(5, 0.01);
        let w = LossWeights::default();
        let make = |_| Ok(ContextualBandit::new(3, 3, 1, 6));
        let no_value = ArchitectureSpec::parse("3:8:3").unwrap();
        let arch = ArchitectureSpec::parse("3:8:3:value").unwrap();
        let run = |arch: &ArchitectureSpec, w: &LossWeights, workers| {
            train_a3c_with(make, arch, &hyper, w, &A3cOptions { workers, time_budget: None }, &mut LogSinks::memory(1))
        };
        assert!(matches!(run(&no_value, &w, 1), Err(A3cError::Config(_))));
        assert!(matches!(run(&arch, &w, 0), Err(A3cError::Config(_))));
        assert!(matches!(run(&arch, &LossWeights { beta1: 0.0, ..w }, 1), Err(A3cError::Config(_))));
    }

    /// Worker 1 fails on its first episode; worker 0 waits for that failure
    /// before playing so both are guaranteed to claim work.
    struct Flaky(ContextualBandit, usize, Arc<std::sync::atomic::AtomicBool>);

    impl Task for Flaky {
        fn num_actions(&self) -> usize {
            self.0.num_actions()
        }
        fn input_len(&self) -> usize {
            self.0.input_len()
        }
        fn reset(&mut self, seed: u64) -> Result<Vec<f32>, EnvError> {
            if self.1 == 1 {
                self.2.store(true, Ordering::Release);
                return Err(EnvError::StepCeiling(0));
            }
            let start = Instant::now();
            while !self.2.load(Ordering::Acquire) && start.elapsed() < Duration::from_secs(10) {
                thread::yield_now();
            }
            self.0.reset(seed)
        }
        fn step(&mut self, action: usize) -> Result<crate::task::TaskStep, EnvError> {
            self.0.step(action)
        }
    }

    #[test]
    fn a_failing_worker_does_not_stop_the_others() {
        let arch = ArchitectureSpec::parse("3:8:3:value").unwrap();
        let failed = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let run = train_a3c_with(
            |w| Ok(Flaky(ContextualBandit::new(3, 3, 1, 6), w, Arc::clone(&failed))),
            &arch,
            &bandit_hyper(30, 0.01),
            &LossWeights::default(),
            &A3cOptions { workers: 2, time_budget: None },
            &mut LogSinks::memory(5),
        )
        .unwrap();
        assert_eq!(run.failures.len(), 1);
        assert_eq!(run.failures[0].worker, 1);
        // the failed worker's claimed episode is lost, every other one is played
        assert_eq!(run.episodes_completed, 29);
    }
}
