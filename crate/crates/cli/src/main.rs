use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use serde_json::json;

use humof_core::checkpoint::{load_checkpoint, save_checkpoint};
use humof_core::config::RunConfig;
use humof_core::container::{read_dataset, read_single, write_dataset};
use humof_core::decode::Prediction;
use humof_core::gradcheck::gradcheck;
use humof_core::inspect::inspect;
use humof_core::model::Humof;
use humof_core::synth::{generate_dataset, generate_raw_sample};
use humof_core::train::{evaluate, train};
use humof_core::HumofError;

#[derive(Parser)]
#[command(name = "humof", version, about = "Human motion forecasting with interaction tokens")]
struct Cli {
    /// Overrides the training and generator seeds of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Standard,
    Tiny,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset config as JSON.
    Config {
        #[arg(long, value_enum, default_value = "standard")]
        preset: Preset,
    },
    /// Generate a synthetic dataset container.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sample count (defaults to the generator's).
        #[arg(long)]
        samples: Option<usize>,
        /// Keep samples in world coordinates instead of canonicalising them.
        #[arg(long)]
        raw: bool,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines loss log (defaults to `<out>/train_log.jsonl`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and the zero-velocity baseline.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Horizons in seconds (defaults to the checkpoint config's).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
        /// Report directory (defaults to `<ckpt>/eval`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast the target of a single-sample container.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast every person of a single-sample container.
    PredictJoint {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of all parameter gradients.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Perturb at most this many entries per parameter.
        #[arg(long)]
        max_entries: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump interaction features and scene centroids of a sample.
    Inspect {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config supplying coefficients, sigmas and levels (default: standard preset).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.training.seed = s;
        cfg.data.generator.seed = s;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.write_all(b"\n")?;
            Ok(())
        }
    }
}

fn prediction_json(p: &Prediction) -> serde_json::Value {
    let future = p.future();
    let frames: Vec<Vec<[f64; 3]>> = (0..future.frames())
        .map(|f| (0..future.joints()).map(|j| future.joint_pos(j, f)).collect())
        .collect();
    json!({
        "joints": future.joints(),
        "frames": future.frames(),
        "fps": future.fps,
        "future": frames,
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Config { preset } => {
            let cfg = match preset {
                Preset::Standard => RunConfig::standard(),
                Preset::Tiny => RunConfig::tiny(),
            };
            emit(None, &cfg.to_json())?;
        }
        Command::Generate { config, out, samples, raw } => {
            let cfg = load_config(&config, cli.seed)?;
            let gen = &cfg.data.generator;
            let n = samples.unwrap_or(gen.samples);
            let data = if raw {
                (0..n as u64)
                    .map(|i| generate_raw_sample(gen, &cfg.model, i).map(|(_, s)| s))
                    .collect::<humof_core::Result<Vec<_>>>()?
            } else {
                generate_dataset(gen, &cfg.model, n)?
            };
            write_dataset(&data, &out)?;
            info!("wrote {n} samples to {}", out.display());
        }
        Command::Train { config, data, out, log } => {
            let cfg = load_config(&config, cli.seed)?;
            let samples = read_dataset(&data)?;
            let (model, mut store) = Humof::new(&cfg.model, cfg.training.init, cfg.training.seed)?;
            let log_path = log.unwrap_or_else(|| out.join("train_log.jsonl"));
            if let Some(dir) = log_path.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut log_file = fs::File::create(&log_path)?;
            let mut write_err = None;
            let mut steps = 0;
            let result = train(&model, &mut store, &samples, &cfg.training, |entry| {
                steps = entry.step;
                let line = serde_json::to_string(entry).expect("log entry serializes");
                if let Err(e) = writeln!(log_file, "{line}") {
                    write_err.get_or_insert(e);
                }
            });
            if let Some(e) = write_err {
                return Err(e).context("writing the training log");
            }
            match result {
                Ok(summary) => {
                    save_checkpoint(&out, &cfg, &store, summary.steps)?;
                    info!("saved checkpoint after {} steps to {}", summary.steps, out.display());
                }
                Err(e @ HumofError::Diverged { .. }) => {
                    save_checkpoint(&out, &cfg, &store, steps)?;
                    warn!("kept the last good parameters in {}", out.display());
                    return Err(e.into());
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::Evaluate { ckpt, data, horizons, out } => {
            let loaded = load_checkpoint(&ckpt, None)?;
            let horizons = horizons.unwrap_or_else(|| loaded.config.eval.horizons.clone());
            let samples = read_dataset(&data)?;
            let report = evaluate(&loaded.model, &loaded.store, &samples, &horizons)?;
            let dir = out.unwrap_or_else(|| ckpt.join("eval"));
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("metrics.csv"), report.model.to_csv())?;
            fs::write(dir.join("metrics.json"), report.model.to_json())?;
            fs::write(dir.join("baseline.csv"), report.baseline.to_csv())?;
            fs::write(dir.join("baseline.json"), report.baseline.to_json())?;
            emit(None, &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Predict { ckpt, sample, out } => {
            let loaded = load_checkpoint(&ckpt, None)?;
            let s = read_single(&sample)?;
            let seed = cli.seed.unwrap_or(loaded.config.training.seed);
            let p = loaded.model.predict(&loaded.store, &s, seed)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&prediction_json(&p))?)?;
        }
        Command::PredictJoint { ckpt, scene, out } => {
            let loaded = load_checkpoint(&ckpt, None)?;
            let s = read_single(&scene)?;
            if s.canonical {
                return Err(HumofError::BadShape("joint prediction needs a raw (non-canonical) scene".into()).into());
            }
            let mut persons = vec![s.target];
            persons.extend(s.others);
            let seed = cli.seed.unwrap_or(loaded.config.training.seed);
            let preds = loaded.model.predict_joint(&loaded.store, &persons, &s.scene, seed)?;
            let list: Vec<_> = preds.iter().map(prediction_json).collect();
            emit(out.as_deref(), &serde_json::to_string_pretty(&list)?)?;
        }
        Command::Gradcheck { config, max_entries, out } => {
            let cfg = load_config(&config, cli.seed)?;
            let report = gradcheck(&cfg, max_entries)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
            report.into_result()?;
        }
        Command::Inspect { sample, out, config } => {
            let cfg = match config {
                Some(p) => load_config(&p, cli.seed)?,
                None => RunConfig::standard(),
            };
            let s = read_single(&sample)?;
            let seed = cli.seed.unwrap_or(cfg.training.seed);
            let dump = inspect(&cfg.model, &s, seed)?;
            emit(Some(&out), &serde_json::to_string_pretty(&dump)?)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<HumofError>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HUMOF_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
