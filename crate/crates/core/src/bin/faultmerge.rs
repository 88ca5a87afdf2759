use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use faultmerge::checkpoint::Checkpoint;
use faultmerge::cli::{self, EvalRequest, ReplayRequest};
use faultmerge::eval::detection_metrics;
use faultmerge::Error;

#[derive(Parser)]
#[command(name = "faultmerge", version, about = "Fault-tolerant cooperative merging: train, evaluate, report, replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train vehicles (and the injector) and write metrics and checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// oft | oft_no_gru | vanilla
        #[arg(long)]
        mode: Option<String>,
        /// none | random | adversarial
        #[arg(long)]
        fault: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Evaluate a trained policy under one fault condition.
    Eval {
        /// Training checkpoint holding the policy.
        #[arg(long)]
        policy: PathBuf,
        /// none | random | adversarial
        #[arg(long, default_value = "none")]
        fault: String,
        /// Checkpoint whose injector drives `--fault adversarial`.
        #[arg(long)]
        injector: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate detection and recovery dumps of an evaluation directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the per-step trajectory of one evaluation episode.
    Replay {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value = "none")]
        fault: String,
        #[arg(long)]
        injector: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> faultmerge::Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            mode,
            fault,
            episodes,
            out,
            resume,
            set,
        } => {
            let mut overrides = Vec::new();
            for kv in &set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("--set expects KEY=VALUE, got `{kv}`")))?;
                overrides.push((k.trim().to_string(), v.trim().to_string()));
            }
            let flags = [
                ("seed", seed.map(|v| v.to_string())),
                ("mode", mode),
                ("fault", fault),
                ("episodes", episodes.map(|v| v.to_string())),
                ("out", out.map(|p| p.display().to_string())),
            ];
            overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
            let ck = resume.as_deref().map(Checkpoint::load).transpose()?;
            let cfg = cli::resolve_config(ck.as_ref(), config.as_deref(), &overrides)?;
            print!("{}", cfg.to_text());
            let outcome = cli::cmd_train(&cfg, ck.as_ref())?;
            println!(
                "trained {} episodes; checkpoint {}",
                outcome.episodes_done,
                outcome.checkpoint.display()
            );
        }
        Command::Eval {
            policy,
            fault,
            injector,
            episodes,
            seed,
            out,
        } => {
            let report = cli::cmd_eval(&EvalRequest {
                policy,
                condition: fault.clone(),
                injector,
                episodes,
                seed,
                out,
            })?;
            let a = report.aggregate;
            println!(
                "{fault}: reward {:.4} ± {:.4}, collision rate {:.3}, timesteps {}",
                a.mean_reward,
                a.reward_std_err,
                a.collision_rate,
                a.mean_timesteps.map_or("n/a".to_string(), |t| format!("{t:.2}"))
            );
        }
        Command::Report { out } => {
            let r = cli::cmd_report(&out)?;
            let d = detection_metrics(&r.confusion);
            let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
            println!(
                "accuracy {}, precision {}, recall {}",
                pct(d.accuracy),
                pct(d.precision),
                pct(d.recall)
            );
            if let Some(rec) = r.recovery {
                let p = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}%"));
                println!(
                    "recovery position {}, velocity {}",
                    p(rec.dims[0].recovery_mae()),
                    p(rec.dims[1].recovery_mae())
                );
            }
        }
        Command::Replay {
            policy,
            fault,
            injector,
            seed,
            episode,
            out,
        } => {
            let m = cli::cmd_replay(&ReplayRequest {
                policy,
                condition: fault,
                injector,
                seed,
                episode,
                out: out.clone(),
            })?;
            println!(
                "episode {episode}: return {:.4}, collided {}, {} steps -> {}",
                m.mean_return,
                m.collided,
                m.timesteps,
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OFT_LOG_LEVEL", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Parse(_) | Error::Config(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
