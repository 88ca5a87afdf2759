//! The four run commands behind the `faultmerge` binary.
//!
//! Output layout of a training directory:
//!
//! ```text
//! config.txt                 resolved configuration (key = value)
//! metrics.csv                one row per episode, see EpisodeLog::csv_header
//! checkpoint.ckpt            latest full training state
//! checkpoint_ep{E}.ckpt      periodic snapshots when checkpoint_every > 0
//! ```
//!
//! An evaluation directory holds `config.txt` plus, per condition `c`,
//! `aggregate_c.csv`, `episodes_c.csv` and (for agents with a temporal
//! network) `judgments_c.csv` and `recovery_samples_c.csv`. `report` reads
//! every judgments and recovery dump of a directory and writes
//! `confusion_matrix.csv`, `detection_metrics.csv` and `recovery.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{FaultInjector, VehicleAgent};
use crate::checkpoint::{Checkpoint, CONFIG_ARRAY};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    self, read_judgments_csv, read_recovery_samples_csv, recovery_stats, ConfusionMatrix, EpisodeMetrics,
    EvalReport, FaultCondition, RecoveryStats,
};
use crate::training::{EpisodeLog, Trainer};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Defaults, then the stored configuration of `base` (a checkpoint being
/// resumed), then `file`, then `overrides`.
pub fn resolve_config(
    base: Option<&Checkpoint>,
    file: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(ck) = base {
        cfg.apply_text(&ck.text(CONFIG_ARRAY)?)?;
    }
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_of(trainer: &Trainer, cfg: &RunConfig) -> Checkpoint {
    let mut ck = trainer.to_checkpoint();
    ck.set_text(CONFIG_ARRAY, &cfg.to_text());
    ck
}

/// Metric rows of an earlier run that precede episode `start`.
fn kept_metrics(path: &Path, start: usize) -> Result<Vec<String>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e < start)
        })
        .map(str::to_string)
        .collect())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub episodes_done: usize,
    pub checkpoint: PathBuf,
    /// Logs of the episodes run by this invocation.
    pub logs: Vec<EpisodeLog>,
}

/// Trains until `cfg.train.episodes` episodes are done, resuming from
/// `resume` when given.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Checkpoint>) -> Result<TrainOutcome> {
    cfg.validate()?;
    create_dir(&cfg.out)?;
    write(&cfg.out.join(CONFIG_FILE), &cfg.to_text())?;
    let mut trainer = match resume {
        Some(ck) => {
            let t = Trainer::from_checkpoint(cfg.env.clone(), cfg.train.clone(), ck)?;
            if t.mode() != cfg.mode || t.source() != cfg.fault {
                return Err(Error::Config(format!(
                    "checkpoint was trained as {}/{}, config asks for {}/{}",
                    t.mode(),
                    t.source(),
                    cfg.mode,
                    cfg.fault
                )));
            }
            t
        }
        None => Trainer::new(cfg.env.clone(), cfg.train.clone(), cfg.mode, cfg.fault, cfg.seed)?,
    };
    let start = trainer.episodes_done();
    log::info!(
        "training {} / {} from episode {start} into {}",
        cfg.mode,
        cfg.fault,
        cfg.out.display()
    );
    let metrics_path = cfg.out.join(METRICS_FILE);
    let mut metrics = vec![EpisodeLog::csv_header(cfg.env.n_vehicles)];
    metrics.extend(kept_metrics(&metrics_path, start)?);
    let remaining = cfg.train.episodes.saturating_sub(start);
    let mut logs = Vec::with_capacity(remaining);
    for _ in 0..remaining {
        let log = trainer.run_episode()?;
        metrics.push(log.csv_row());
        let done = log.episode + 1;
        if done % 100 == 0 || done == cfg.train.episodes {
            log::info!("episode {done}: mean return {:.3}", log.mean_return);
        }
        log::debug!("{}", metrics.last().expect("row"));
        logs.push(log);
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.train.episodes {
            checkpoint_of(&trainer, cfg).save(&cfg.out.join(format!("checkpoint_ep{done}.ckpt")))?;
            write(&metrics_path, &(metrics.join("\n") + "\n"))?;
        }
    }
    write(&metrics_path, &(metrics.join("\n") + "\n"))?;
    let checkpoint = cfg.out.join(CHECKPOINT_FILE);
    checkpoint_of(&trainer, cfg).save(&checkpoint)?;
    Ok(TrainOutcome {
        episodes_done: trainer.episodes_done(),
        checkpoint,
        logs,
    })
}

/// Trained networks read back from a training checkpoint.
#[derive(Clone, Debug)]
pub struct Policy {
    pub config: RunConfig,
    pub agent: VehicleAgent,
    pub injector: FaultInjector,
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let ck = Checkpoint::load(path)?;
    let config = RunConfig::from_text(&ck.text(CONFIG_ARRAY)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agent = VehicleAgent::new(config.mode, &config.train.network, &mut rng);
    agent.load_arrays("agent", &ck.arrays)?;
    let mut injector = FaultInjector::new(
        config.env.n_vehicles,
        &config.train.network.hidden,
        config.train.budget,
        &mut rng,
    );
    injector.load_arrays("injector", &ck.arrays)?;
    Ok(Policy {
        config,
        agent,
        injector,
    })
}

/// Test-time condition by name. `adversarial` uses the injector stored at
/// `injector` if given, else the one trained alongside the policy.
pub fn parse_condition(name: &str, policy: &Policy, injector: Option<&Path>) -> Result<FaultCondition> {
    match name {
        "none" => Ok(FaultCondition::None),
        "random" => Ok(FaultCondition::Random),
        "adversarial" => {
            let inj = match injector {
                Some(path) => load_policy(path)?.injector,
                None => policy.injector.clone(),
            };
            Ok(FaultCondition::Injector(Box::new(inj)))
        }
        other => Err(Error::Parse(format!(
            "unknown fault condition `{other}` (expected none | random | adversarial)"
        ))),
    }
}

#[derive(Clone, Debug)]
pub struct EvalRequest {
    pub policy: PathBuf,
    pub condition: String,
    pub injector: Option<PathBuf>,
    pub episodes: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_eval(req: &EvalRequest) -> Result<EvalReport> {
    if req.episodes == 0 {
        return Err(Error::Config("--episodes must be at least 1".into()));
    }
    let policy = load_policy(&req.policy)?;
    let condition = parse_condition(&req.condition, &policy, req.injector.as_deref())?;
    let eval_cfg = policy.config.eval_config(req.episodes, req.seed);
    let report = eval::run_evaluation(&policy.agent, &policy.config.env, &condition, &eval_cfg)?;
    create_dir(&req.out)?;
    write(&req.out.join(CONFIG_FILE), &policy.config.to_text())?;
    let c = &req.condition;
    write(
        &req.out.join(format!("aggregate_{c}.csv")),
        &format!(
            "{}\n{}\n",
            eval::AGGREGATE_HEADER,
            eval::aggregate_row(&policy.config.mode.to_string(), c, &report.aggregate)
        ),
    )?;
    eval::write_episodes_csv(&req.out.join(format!("episodes_{c}.csv")), &report.episodes)?;
    if let Some(js) = &report.judgments {
        eval::write_judgments_csv(&req.out.join(format!("judgments_{c}.csv")), js)?;
        eval::write_recovery_samples_csv(&req.out.join(format!("recovery_samples_{c}.csv")), &report.recovery)?;
    }
    let a = &report.aggregate;
    log::info!(
        "{c}: reward {:.4} ± {:.4}, collision rate {:.3}",
        a.mean_reward,
        a.reward_std_err,
        a.collision_rate
    );
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct Report {
    pub confusion: ConfusionMatrix,
    pub recovery: Option<RecoveryStats>,
}

fn dumps(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with(prefix) && name.ends_with(".csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn cmd_report(dir: &Path) -> Result<Report> {
    let judgment_files = dumps(dir, "judgments")?;
    if judgment_files.is_empty() {
        return Err(Error::NoData(format!("no judgments_*.csv dumps in {}", dir.display())));
    }
    let mut confusion = ConfusionMatrix::default();
    for f in &judgment_files {
        confusion.merge(&read_judgments_csv(f)?);
    }
    let mut samples = Vec::new();
    for f in dumps(dir, "recovery_samples")? {
        samples.extend(read_recovery_samples_csv(&f)?);
    }
    eval::write_confusion_csv(&dir.join("confusion_matrix.csv"), &confusion)?;
    eval::write_detection_csv(&dir.join("detection_metrics.csv"), &confusion)?;
    let recovery = if samples.is_empty() {
        None
    } else {
        let r = recovery_stats(&samples)?;
        eval::write_recovery_csv(&dir.join("recovery.csv"), &r)?;
        Some(r)
    };
    Ok(Report { confusion, recovery })
}

#[derive(Clone, Debug)]
pub struct ReplayRequest {
    pub policy: PathBuf,
    pub condition: String,
    pub injector: Option<PathBuf>,
    pub seed: u64,
    pub episode: usize,
    pub out: PathBuf,
}

/// Writes the per-step trajectory of one evaluation episode to `req.out`.
pub fn cmd_replay(req: &ReplayRequest) -> Result<EpisodeMetrics> {
    let policy = load_policy(&req.policy)?;
    let condition = parse_condition(&req.condition, &policy, req.injector.as_deref())?;
    let eval_cfg = policy.config.eval_config(req.episode + 1, req.seed);
    let (metrics, rows) = eval::replay_episode(&policy.agent, &policy.config.env, &condition, &eval_cfg, req.episode)?;
    if let Some(parent) = req.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    eval::write_trajectory_csv(&req.out, &rows)?;
    Ok(metrics)
}
