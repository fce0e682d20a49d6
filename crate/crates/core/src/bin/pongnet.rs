use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pongnet::a3c::{train_a3c, A3cOptions};
use pongnet::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointMeta};
use pongnet::config::{parse_settings, write_manifest, ConfigError, Mode, Origin, RunConfig, Setting};
use pongnet::eval::{evaluate, Player};
use pongnet::introspect::{run_introspection, write_pgm, IntrospectOptions, WeightImage};
use pongnet::nn::{forward, gradient_check, NetworkParams};
use pongnet::pg::{select_action, train_pong};
use pongnet::scores::LogSinks;
use pongnet::seed::{derive_seed, STREAM_ENV, STREAM_INIT, STREAM_SAMPLING};
use pongnet::task::{PongTask, Task};
use pongnet::Error;

#[derive(Parser)]
#[command(name = "pongnet", version, about = "Train, evaluate and inspect Pong-playing policy networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-agent REINFORCE with an episode-mean baseline.
    TrainPg(Common),
    /// Asynchronous advantage actor-critic with `--workers` threads.
    TrainA3c(Common),
    /// Play frozen-weight episodes from a checkpoint.
    Eval(Common),
    /// Activation clustering and weight images for a checkpoint.
    Introspect(Common),
    /// Compare analytic and finite-difference gradients for `--arch`.
    Gradcheck(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameter file for eval and introspect.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Any other config key, e.g. `--set board=mini`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write the first N frames of the first evaluation episode as PGM files.
    #[arg(long, value_name = "N")]
    dump_frames: Option<usize>,
}

fn cli_setting(key: &str, value: impl ToString) -> Setting {
    Setting { key: key.into(), value: value.to_string(), origin: Origin::CommandLine }
}

fn resolve(mode: Mode, args: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        cfg.apply(&parse_settings(&text, path)?)?;
    }
    let mut over = vec![cli_setting("mode", mode.name())];
    let flags: [(&str, Option<String>); 8] = [
        ("arch", args.arch.clone()),
        ("alpha", args.alpha.map(|v| v.to_string())),
        ("gamma", args.gamma.map(|v| v.to_string())),
        ("workers", args.workers.map(|v| v.to_string())),
        ("episodes", args.episodes.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("out_dir", args.out.as_ref().map(|p| p.display().to_string())),
        ("checkpoint", args.checkpoint.as_ref().map(|p| p.display().to_string())),
    ];
    over.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| cli_setting(k, v))));
    for pair in &args.set {
        let Some((k, v)) = pair.split_once('=') else {
            return Err(ConfigError::Syntax { origin: Origin::CommandLine, text: pair.clone() }.into());
        };
        over.push(cli_setting(k.trim(), v.trim()));
    }
    cfg.apply(&over)?;
    cfg.validate()?;
    if args.alpha.is_some() && matches!(mode, Mode::Eval | Mode::Introspect) {
        log::warn!("--alpha has no effect in {mode} mode; weights stay frozen");
    }
    Ok(cfg)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, Error> {
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|source| {
        Error::Config(ConfigError::Key {
            origin: Origin::CommandLine,
            key: "out_dir".into(),
            reason: format!("cannot create {}: {source}", out.display()),
        })
    })?;
    let seeds = [
        ("init_seed", derive_seed(cfg.hyper.seed, STREAM_INIT, 0).to_string()),
        ("env_seed_stream", STREAM_ENV.to_string()),
        ("sampling_seed_stream", STREAM_SAMPLING.to_string()),
    ];
    write_manifest(cfg, &seeds, &out)?;
    Ok(out)
}

fn sinks(cfg: &RunConfig, csv: &Path, with_worker: bool) -> Result<LogSinks, Error> {
    let mut s = LogSinks::memory(cfg.smoothing_window)
        .csv(csv, with_worker)
        .map_err(|source| Error::Io { path: csv.to_path_buf(), source })?
        .checkpoints(&cfg.out_dir, cfg.checkpoint_every)
        .progress(cfg.progress_every);
    if !cfg.record_wall_clock {
        s = s.without_wall_clock();
    }
    Ok(s)
}

fn final_meta(cfg: &RunConfig) -> CheckpointMeta {
    CheckpointMeta::default().with("episodes", cfg.hyper.episodes).with("seed", cfg.hyper.seed)
}

fn load_params(cfg: &RunConfig) -> Result<NetworkParams<f32>, Error> {
    let path = cfg.checkpoint.as_ref().expect("validated");
    let (params, _) = match &cfg.arch {
        Some(arch) => load_checkpoint_for(path, arch)?,
        None => load_checkpoint(path)?,
    };
    Ok(params)
}

fn dump_frames(params: &NetworkParams<f32>, cfg: &RunConfig, count: usize, out: &Path) -> Result<(), Error> {
    let dir = out.join("frames");
    fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    let mut task = PongTask::new(cfg.env.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.hyper.seed, STREAM_SAMPLING, 0));
    let mut input = task.reset(derive_seed(cfg.hyper.seed, STREAM_ENV, 0))?;
    for i in 0..count {
        let f = task.frame();
        let img = WeightImage {
            node_index: i,
            height: f.height(),
            width: f.width(),
            pixels: f.pixels().iter().map(|&p| f64::from(p)).collect(),
        };
        write_pgm(&img, &dir.join(format!("frame_{i:05}.pgm")))?;
        let trace = forward(params, &input)?;
        let step = task.step(select_action(trace.output(), 0.0, &mut rng).0)?;
        input = step.input;
        if step.done {
            break;
        }
    }
    Ok(())
}

fn run(mode: Mode, args: &Common) -> Result<(), Error> {
    let cfg = resolve(mode, args)?;
    let out = prepare_out(&cfg)?;
    match mode {
        Mode::TrainPg => {
            let arch = cfg.arch.as_ref().expect("validated");
            let mut s = sinks(&cfg, &out.join("scores.csv"), false)?;
            let params = train_pong(&cfg.env, arch, &cfg.hyper, &mut s)?;
            save_checkpoint(&params, &final_meta(&cfg), &out.join("final.pgnn"))?;
            println!("trained {} episodes; smoothed score {:.2}", cfg.hyper.episodes, s.smoothed());
        }
        Mode::TrainA3c => {
            let arch = cfg.arch.as_ref().expect("validated");
            let mut s = sinks(&cfg, &out.join("scores.csv"), true)?;
            let opts = A3cOptions { workers: cfg.workers, time_budget: cfg.time_budget };
            let run = train_a3c(&cfg.env, arch, &cfg.hyper, &cfg.loss_weights, &opts, &mut s)?;
            let meta = final_meta(&cfg).with("updates", run.updates_applied).with("workers", cfg.workers);
            save_checkpoint(&run.params, &meta, &out.join("final.pgnn"))?;
            println!(
                "{} workers played {} episodes ({} updates); smoothed score {:.2}",
                cfg.workers,
                run.episodes_completed,
                run.updates_applied,
                s.smoothed()
            );
            if !run.failures.is_empty() {
                let list: Vec<String> = run.failures.iter().map(|f| format!("worker {}: {}", f.worker, f.message)).collect();
                return Err(Error::Runtime(format!("{} worker(s) failed: {}", list.len(), list.join("; "))));
            }
        }
        Mode::Eval => {
            let params = load_params(&cfg)?;
            let mut s = sinks(&cfg, &out.join("eval.csv"), false)?;
            let report = evaluate(Player::Network(&params, cfg.rollout), &cfg.env, cfg.hyper.episodes, cfg.hyper.seed, &mut s)?;
            println!("{} episodes; mean score {:.2}", report.scores.len(), report.mean);
            if let Some(n) = args.dump_frames {
                dump_frames(&params, &cfg, n, &out)?;
            }
        }
        Mode::Introspect => {
            let params = load_params(&cfg)?;
            let opts = IntrospectOptions {
                steps: cfg.steps,
                seed: cfg.hyper.seed,
                k: cfg.k,
                policy: cfg.rollout,
                nodes: cfg.nodes.clone(),
            };
            let summary = run_introspection(&params, &cfg.env, &opts, &out)?;
            let [still, up, down] = summary.group_sizes;
            println!("{} steps recorded; still {still}, up {up}, down {down}", summary.records);
            let mut counts = [0usize; 3];
            for a in &summary.node_actions {
                counts[a.index()] += 1;
            }
            println!("hidden nodes by action: still {}, up {}, down {}", counts[0], counts[1], counts[2]);
            let bands: Vec<usize> = summary.bands.iter().filter(|(_, b)| b.is_diagonal_band).map(|(j, _)| *j).collect();
            println!("diagonal bands in {} of {} weight images {:?}", bands.len(), summary.bands.len(), bands);
            println!("{} files written to {}", summary.files.len(), out.display());
        }
        Mode::Gradcheck => {
            let arch = cfg.arch.as_ref().expect("validated");
            let report = gradient_check(arch, cfg.loss, cfg.hyper.seed)?;
            println!(
                "{} parameters; max relative error {:.3e} at index {} (analytic {:.6e}, numeric {:.6e})",
                report.param_count, report.max_rel_error, report.worst_index, report.analytic, report.numeric
            );
            if !(report.max_rel_error < 1e-6) {
                return Err(Error::Runtime("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::TrainPg(a) => (Mode::TrainPg, a),
        Command::TrainA3c(a) => (Mode::TrainA3c, a),
        Command::Eval(a) => (Mode::Eval, a),
        Command::Introspect(a) => (Mode::Introspect, a),
        Command::Gradcheck(a) => (Mode::Gradcheck, a),
    };
    match run(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
