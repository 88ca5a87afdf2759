//! Frozen-policy evaluation: return, collision and timestep aggregates,
//! fault-detection confusion matrices, observation recovery and the
//! policy × fault-condition grid.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{FaultInjector, ReconMode, VehicleAgent};
use crate::env::{EnvConfig, MergeEnv};
use crate::error::{Error, Result};
use crate::observation::{
    denormalize_perturbable, observe_fleet, perturb_observations, sample_fault_config, FaultConfig, FaultSchedule,
    PerturbationBudget, OBS_DIM, PERTURB_DIM,
};
use crate::training::{injector_input, live_fault, observation_table, FaultSource, TrainConfig, Trainer};

/// Per-step perturbation used at test time.
#[derive(Clone, Debug)]
pub enum FaultCondition {
    None,
    Random,
    Injector(Box<FaultInjector>),
}

impl FaultCondition {
    pub fn label(&self) -> &'static str {
        match self {
            FaultCondition::None => "none",
            FaultCondition::Random => "random",
            FaultCondition::Injector(_) => "injector",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub schedule: FaultSchedule,
    pub budget: PerturbationBudget,
    /// Keep per-step recovery samples (needed for reports).
    pub record_samples: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            seed: 0,
            schedule: FaultSchedule::default(),
            budget: PerturbationBudget::default(),
            record_samples: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub mean_return: f64,
    pub collided: bool,
    pub timesteps: usize,
    pub fault_active_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub episodes: usize,
    pub mean_reward: f64,
    pub reward_std_err: f64,
    pub collision_rate: f64,
    /// Mean episode length over episodes that did not collide.
    pub mean_timesteps: Option<f64>,
}

pub fn aggregate(episodes: &[EpisodeMetrics]) -> Result<Aggregate> {
    if episodes.is_empty() {
        return Err(Error::NoData("no episodes to aggregate".into()));
    }
    let n = episodes.len() as f64;
    let mean = episodes.iter().map(|e| e.mean_return).sum::<f64>() / n;
    let var = if episodes.len() > 1 {
        episodes.iter().map(|e| (e.mean_return - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let collisions = episodes.iter().filter(|e| e.collided).count();
    let clean: Vec<f64> = episodes
        .iter()
        .filter(|e| !e.collided)
        .map(|e| e.timesteps as f64)
        .collect();
    Ok(Aggregate {
        episodes: episodes.len(),
        mean_reward: mean,
        reward_std_err: (var / n).sqrt(),
        collision_rate: collisions as f64 / n,
        mean_timesteps: (!clean.is_empty()).then(|| clean.iter().sum::<f64>() / clean.len() as f64),
    })
}

/// Fault is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Records one judgment; `predicted` is `p̃ ≥ 0.5`.
    pub fn record(&mut self, actual: bool, predicted: bool) {
        match (actual, predicted) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
        self.tn += other.tn;
    }
}

/// Ratios of a confusion matrix; undefined ratios are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn detection_metrics(m: &ConfusionMatrix) -> DetectionMetrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    DetectionMetrics {
        accuracy: ratio(m.tp + m.tn, m.total()),
        precision: ratio(m.tp, m.tp + m.fp),
        recall: ratio(m.tp, m.tp + m.fn_),
    }
}

/// True, observed and reconstructed perturbable dims of the faulted
/// neighbor at one fault-active step, in physical units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoverySample {
    pub episode: usize,
    pub step: usize,
    pub vehicle: usize,
    pub slot: usize,
    pub truth: [f64; PERTURB_DIM],
    pub observed: [f64; PERTURB_DIM],
    pub predicted: [f64; PERTURB_DIM],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorStats {
    pub mae: f64,
    pub mse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DimRecovery {
    pub original: ErrorStats,
    pub prediction: ErrorStats,
}

impl DimRecovery {
    pub fn recovery_mae(&self) -> Option<f64> {
        recovery_percentage(self.original.mae, self.prediction.mae)
    }

    pub fn recovery_mse(&self) -> Option<f64> {
        recovery_percentage(self.original.mse, self.prediction.mse)
    }
}

/// Index 0 is position, 1 is velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryStats {
    pub dims: [DimRecovery; PERTURB_DIM],
    pub samples: usize,
}

/// `100·(1 − prediction/original)`, undefined when the original error is 0.
pub fn recovery_percentage(original: f64, prediction: f64) -> Option<f64> {
    (original > 0.0).then(|| 100.0 * (1.0 - prediction / original))
}

pub fn recovery_stats(samples: &[RecoverySample]) -> Result<RecoveryStats> {
    if samples.is_empty() {
        return Err(Error::NoData("no fault-active recovery samples".into()));
    }
    let n = samples.len() as f64;
    let stats = |d: usize, pick: fn(&RecoverySample) -> [f64; PERTURB_DIM]| {
        let (mut abs, mut sq) = (0.0, 0.0);
        for s in samples {
            let e = pick(s)[d] - s.truth[d];
            abs += e.abs();
            sq += e * e;
        }
        ErrorStats {
            mae: abs / n,
            mse: sq / n,
        }
    };
    let dim = |d: usize| DimRecovery {
        original: stats(d, |s| s.observed),
        prediction: stats(d, |s| s.predicted),
    };
    Ok(RecoveryStats {
        dims: [dim(0), dim(1)],
        samples: samples.len(),
    })
}

/// Detection counts of one evaluation episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeJudgments {
    pub episode: usize,
    pub matrix: ConfusionMatrix,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub aggregate: Aggregate,
    pub episodes: Vec<EpisodeMetrics>,
    /// Present only for agents with a temporal network.
    pub judgments: Option<Vec<EpisodeJudgments>>,
    pub recovery: Vec<RecoverySample>,
}

impl EvalReport {
    pub fn confusion(&self) -> Option<ConfusionMatrix> {
        self.judgments.as_ref().map(|js| {
            let mut m = ConfusionMatrix::default();
            js.iter().for_each(|j| m.merge(&j.matrix));
            m
        })
    }
}

/// Noise-free rollouts of `agent` under `condition`. Episode `e` draws all
/// of its randomness from stream `e` of a generator seeded with `cfg.seed`.
pub fn run_evaluation(
    agent: &VehicleAgent,
    env_cfg: &EnvConfig,
    condition: &FaultCondition,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if cfg.episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    check_condition(env_cfg, condition)?;
    let mut env = MergeEnv::new(env_cfg.clone())?;
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut judgments = agent.temporal.as_ref().map(|_| Vec::with_capacity(cfg.episodes));
    let mut recovery = Vec::new();
    for e in 0..cfg.episodes {
        let (metrics, matrix) = rollout(agent, &mut env, condition, cfg, e, &mut recovery, None)?;
        episodes.push(metrics);
        if let Some(js) = judgments.as_mut() {
            js.push(EpisodeJudgments { episode: e, matrix });
        }
    }
    Ok(EvalReport {
        aggregate: aggregate(&episodes)?,
        episodes,
        judgments,
        recovery,
    })
}

/// One vehicle at one step of a replayed episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub vehicle: usize,
    pub exists: bool,
    pub lane: f64,
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub reward: f64,
    /// Slot whose observation is perturbed for this vehicle, if any.
    pub faulted_slot: Option<usize>,
    pub perturbation: [f64; PERTURB_DIM],
    /// Highest fault probability over the present slots.
    pub max_fault_prob: Option<f64>,
}

/// Per-step trajectory of evaluation episode `episode` (same randomness as
/// the matching episode of [`run_evaluation`]).
pub fn replay_episode(
    agent: &VehicleAgent,
    env_cfg: &EnvConfig,
    condition: &FaultCondition,
    cfg: &EvalConfig,
    episode: usize,
) -> Result<(EpisodeMetrics, Vec<TrajectoryRow>)> {
    check_condition(env_cfg, condition)?;
    let mut env = MergeEnv::new(env_cfg.clone())?;
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    let (metrics, _) = rollout(agent, &mut env, condition, cfg, episode, &mut samples, Some(&mut rows))?;
    Ok((metrics, rows))
}

fn check_condition(env_cfg: &EnvConfig, condition: &FaultCondition) -> Result<()> {
    if let FaultCondition::Injector(inj) = condition {
        if inj.input_dim() != crate::observation::global_input_dim(env_cfg.n_vehicles) {
            return Err(Error::Contract("injector was built for a different fleet size".into()));
        }
    }
    Ok(())
}

fn rollout(
    agent: &VehicleAgent,
    env: &mut MergeEnv,
    condition: &FaultCondition,
    cfg: &EvalConfig,
    e: usize,
    recovery: &mut Vec<RecoverySample>,
    mut trace: Option<&mut Vec<TrajectoryRow>>,
) -> Result<(EpisodeMetrics, ConfusionMatrix)> {
    let env_cfg = env.config().clone();
    let n = env_cfg.n_vehicles;
    let zero_noise = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(e as u64);
    env.reset(rng.random())?;
    let fault_cfg = match condition {
        FaultCondition::None => FaultConfig::inactive(),
        _ => sample_fault_config(&mut rng, env.states(), &cfg.schedule, env_cfg.max_steps),
    };
    let mut hidden = agent.zero_hidden(n);
    let mut matrix = ConfusionMatrix::default();
    let mut total = 0.0;
    let mut collided = false;
    let mut fault_steps = 0;
    let mut steps = 0;
    loop {
        let t = env.step_index();
        let states = env.states().to_vec();
        let (arrays, obs) = observe_fleet(&states);
        let table = observation_table(&obs);
        let fault = live_fault(&fault_cfg, t, &states, &arrays);
        let mut b = [0.0; PERTURB_DIM];
        if let Some(f) = fault {
            fault_steps += 1;
            b = match condition {
                FaultCondition::None => b,
                FaultCondition::Random => {
                    let eps = cfg.budget.epsilon;
                    [rng.random_range(-eps[0]..=eps[0]), rng.random_range(-eps[1]..=eps[1])]
                }
                FaultCondition::Injector(inj) => {
                    inj.fault_act(&injector_input(&table, f.recipient, f.target_slot)?, [0.0; PERTURB_DIM])?
                }
            };
        }
        let obs_hat = perturb_observations(&obs, fault, b, &cfg.budget)?;
        let hat_table = observation_table(&obs_hat);
        let hat_view = ArrayView2::from_shape((n, OBS_DIM), &hat_table).expect("table shape");
        let out = agent.act(hat_view, hidden.view(), env.params(), &zero_noise)?;
        if let Some(step) = &out.temporal {
            for i in (0..n).filter(|&i| states[i].exists) {
                for s in arrays[i].present_slots() {
                    let actual = fault.is_some_and(|f| f.recipient == i && f.target_slot == s);
                    matrix.record(actual, step.probs[[i, s]] >= 0.5);
                }
            }
            if let (Some(f), true) = (fault, cfg.record_samples) {
                let i = f.recipient;
                let s = f.target_slot;
                let off = match agent.temporal.as_ref().map(|tn| tn.recon_dim()) {
                    Some(d) if d == ReconMode::AllSlots.dim() => s * PERTURB_DIM,
                    _ => 0,
                };
                let pred = [step.recon[[i, off]], step.recon[[i, off + 1]]];
                recovery.push(RecoverySample {
                    episode: e,
                    step: t,
                    vehicle: i,
                    slot: s,
                    truth: obs[i].perturbable(s),
                    observed: obs_hat[i].perturbable(s),
                    predicted: denormalize_perturbable(pred),
                });
            }
        }
        let outcome = env.step(&out.actions)?;
        if let Some(rows) = trace.as_deref_mut() {
            for (i, st) in states.iter().enumerate() {
                let mine = fault.filter(|f| f.recipient == i);
                rows.push(TrajectoryRow {
                    step: t,
                    vehicle: i,
                    exists: st.exists,
                    lane: st.lane.id(),
                    position: st.position,
                    velocity: st.velocity,
                    acceleration: out.actions[i],
                    reward: outcome.rewards[i],
                    faulted_slot: mine.map(|f| f.target_slot),
                    perturbation: if mine.is_some() { cfg.budget.clip(b) } else { [0.0; PERTURB_DIM] },
                    max_fault_prob: out.temporal.as_ref().and_then(|step| {
                        arrays[i].present_slots().map(|s| step.probs[[i, s]]).reduce(f64::max)
                    }),
                });
            }
        }
        if let Some(step) = out.temporal {
            hidden = step.hidden;
        }
        total += outcome.rewards.iter().sum::<f64>() / n as f64;
        collided |= outcome.collided;
        steps += 1;
        if outcome.done {
            break;
        }
    }
    Ok((
        EpisodeMetrics {
            mean_return: total,
            collided,
            timesteps: steps,
            fault_active_steps: fault_steps,
        },
        matrix,
    ))
}

pub const TRAJECTORY_HEADER: &str =
    "step,vehicle,exists,lane,position,velocity,acceleration,reward,faulted_slot,perturb_position,perturb_velocity,max_fault_prob";

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{},{:.6},{:.6},{}",
            r.step,
            r.vehicle,
            u8::from(r.exists),
            r.lane,
            r.position,
            r.velocity,
            r.acceleration,
            r.reward,
            r.faulted_slot.map(|s| s.to_string()).unwrap_or_default(),
            r.perturbation[0],
            r.perturbation[1],
            fmt_opt(r.max_fault_prob),
        );
    }
    write_file(path, &out)
}

/// A fault condition of the generalization grid.
#[derive(Clone, Debug)]
pub enum GridCondition {
    Fixed { name: String, condition: FaultCondition },
    /// A fresh injector trained against each frozen policy before testing.
    Retrained { name: String, train: TrainConfig, seed: u64 },
}

impl GridCondition {
    pub fn name(&self) -> &str {
        match self {
            GridCondition::Fixed { name, .. } | GridCondition::Retrained { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridCell {
    pub policy: String,
    pub condition: String,
    pub aggregate: Aggregate,
}

/// Injector trained from scratch against a frozen vehicle agent.
pub fn retrain_injector(agent: &VehicleAgent, env_cfg: &EnvConfig, train: &TrainConfig, seed: u64) -> Result<FaultInjector> {
    let cfg = TrainConfig {
        freeze_vehicles: true,
        network: crate::agents::NetworkConfig {
            recon: recon_mode_of(agent),
            gru_hidden: agent.hidden_dim().max(1),
            ..train.network.clone()
        },
        ..train.clone()
    };
    let mut trainer = Trainer::new(env_cfg.clone(), cfg, agent.mode, FaultSource::Adversarial, seed)?;
    trainer.set_agent(agent.clone())?;
    trainer.run(train.episodes, |_| {})?;
    Ok(trainer.injector().clone())
}

fn recon_mode_of(agent: &VehicleAgent) -> ReconMode {
    match agent.temporal.as_ref().map(|t| t.recon_dim()) {
        Some(d) if d == ReconMode::AllSlots.dim() => ReconMode::AllSlots,
        _ => ReconMode::FaultedSlot,
    }
}

/// Every policy under every condition, all cells sharing `cfg.seed`.
pub fn generalization_matrix(
    policies: &[(String, VehicleAgent)],
    conditions: &[GridCondition],
    env_cfg: &EnvConfig,
    cfg: &EvalConfig,
) -> Result<Vec<GridCell>> {
    if policies.is_empty() || conditions.is_empty() {
        return Err(Error::Config("the grid needs at least one policy and one condition".into()));
    }
    let mut cells = Vec::with_capacity(policies.len() * conditions.len());
    for (pname, agent) in policies {
        for cond in conditions {
            let condition = match cond {
                GridCondition::Fixed { condition, .. } => condition.clone(),
                GridCondition::Retrained { train, seed, .. } => {
                    FaultCondition::Injector(Box::new(retrain_injector(agent, env_cfg, train, *seed)?))
                }
            };
            let report = run_evaluation(agent, env_cfg, &condition, cfg)?;
            cells.push(GridCell {
                policy: pname.clone(),
                condition: cond.name().to_string(),
                aggregate: report.aggregate,
            });
        }
    }
    Ok(cells)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

pub const AGGREGATE_HEADER: &str = "policy,condition,episodes,reward,reward_se,collision_rate,timesteps";

pub fn aggregate_row(policy: &str, condition: &str, a: &Aggregate) -> String {
    format!(
        "{policy},{condition},{},{:.6},{:.6},{:.6},{}",
        a.episodes,
        a.mean_reward,
        a.reward_std_err,
        a.collision_rate,
        fmt_opt(a.mean_timesteps)
    )
}

pub fn write_grid_csv(path: &Path, cells: &[GridCell]) -> Result<()> {
    let mut s = String::from(AGGREGATE_HEADER);
    s.push('\n');
    for c in cells {
        s.push_str(&aggregate_row(&c.policy, &c.condition, &c.aggregate));
        s.push('\n');
    }
    write_file(path, &s)
}

pub const EPISODE_HEADER: &str = "episode,mean_return,collided,timesteps,fault_active_steps";

pub fn write_episodes_csv(path: &Path, episodes: &[EpisodeMetrics]) -> Result<()> {
    let mut s = String::from(EPISODE_HEADER);
    s.push('\n');
    for (k, e) in episodes.iter().enumerate() {
        let _ = writeln!(
            s,
            "{k},{:.6},{},{},{}",
            e.mean_return,
            u8::from(e.collided),
            e.timesteps,
            e.fault_active_steps
        );
    }
    write_file(path, &s)
}

pub const JUDGMENTS_HEADER: &str = "episode,tp,fn,fp,tn";

pub fn write_judgments_csv(path: &Path, judgments: &[EpisodeJudgments]) -> Result<()> {
    let mut s = String::from(JUDGMENTS_HEADER);
    s.push('\n');
    for j in judgments {
        let m = j.matrix;
        let _ = writeln!(s, "{},{},{},{},{}", j.episode, m.tp, m.fn_, m.fp, m.tn);
    }
    write_file(path, &s)
}

pub const RECOVERY_SAMPLES_HEADER: &str =
    "episode,step,vehicle,slot,true_position,true_velocity,obs_position,obs_velocity,pred_position,pred_velocity";

pub fn write_recovery_samples_csv(path: &Path, samples: &[RecoverySample]) -> Result<()> {
    let mut s = String::from(RECOVERY_SAMPLES_HEADER);
    s.push('\n');
    for r in samples {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.episode,
            r.step,
            r.vehicle,
            r.slot,
            r.truth[0],
            r.truth[1],
            r.observed[0],
            r.observed[1],
            r.predicted[0],
            r.predicted[1]
        );
    }
    write_file(path, &s)
}

/// 2×2 layout with actual classes as rows and predictions as columns.
pub fn write_confusion_csv(path: &Path, m: &ConfusionMatrix) -> Result<()> {
    let s = format!(
        "actual,predicted_fault,predicted_normal,total\nfault,{},{},{}\nnormal,{},{},{}\n",
        m.tp,
        m.fn_,
        m.tp + m.fn_,
        m.fp,
        m.tn,
        m.fp + m.tn
    );
    write_file(path, &s)
}

pub fn write_detection_csv(path: &Path, m: &ConfusionMatrix) -> Result<()> {
    let d = detection_metrics(m);
    let s = format!(
        "judgments,accuracy,precision,recall\n{},{},{},{}\n",
        m.total(),
        fmt_opt(d.accuracy),
        fmt_opt(d.precision),
        fmt_opt(d.recall)
    );
    write_file(path, &s)
}

pub fn write_recovery_csv(path: &Path, r: &RecoveryStats) -> Result<()> {
    let mut s = String::from(
        "quantity,original_mae,original_mse,prediction_mae,prediction_mse,recovery_mae_pct,recovery_mse_pct\n",
    );
    for (name, d) in ["position", "velocity"].iter().zip(&r.dims) {
        let _ = writeln!(
            s,
            "{name},{:.6},{:.6},{:.6},{:.6},{},{}",
            d.original.mae,
            d.original.mse,
            d.prediction.mae,
            d.prediction.mse,
            fmt_opt(d.recovery_mae()),
            fmt_opt(d.recovery_mse())
        );
    }
    write_file(path, &s)
}

/// Reads per-episode judgment rows back into one matrix.
pub fn read_judgments_csv(path: &Path) -> Result<ConfusionMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = ConfusionMatrix::default();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<u64> = line
            .split(',')
            .map(|c| c.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), k + 1)))?;
        if v.len() != 5 {
            return Err(Error::Parse(format!("{}:{}: expected 5 columns", path.display(), k + 1)));
        }
        m.merge(&ConfusionMatrix {
            tp: v[1],
            fn_: v[2],
            fp: v[3],
            tn: v[4],
        });
    }
    Ok(m)
}

pub fn read_recovery_samples_csv(path: &Path) -> Result<Vec<RecoverySample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let c: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |e: String| Error::Parse(format!("{}:{}: {e}", path.display(), k + 1));
        if c.len() != 10 {
            return Err(bad("expected 10 columns".into()));
        }
        let u = |i: usize| c[i].parse::<usize>().map_err(|e| bad(e.to_string()));
        let f = |i: usize| c[i].parse::<f64>().map_err(|e| bad(e.to_string()));
        out.push(RecoverySample {
            episode: u(0)?,
            step: u(1)?,
            vehicle: u(2)?,
            slot: u(3)?,
            truth: [f(4)?, f(5)?],
            observed: [f(6)?, f(7)?],
            predicted: [f(8)?, f(9)?],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{NetworkConfig, PolicyMode};

    #[test]
    fn table_matrix_metrics() {
        let m = ConfusionMatrix {
            tp: 9296,
            fn_: 412,
            fp: 37,
            tn: 59711,
        };
        let d = detection_metrics(&m);
        assert_eq!(m.total(), 69456);
        assert!((d.precision.unwrap() * 100.0 - 99.6).abs() < 0.05);
        assert!((d.recall.unwrap() * 100.0 - 95.8).abs() < 0.05);
        // exact ratio; the commonly quoted 99.3 is a truncation
        assert_eq!(d.accuracy.unwrap(), 69007.0 / 69456.0);
    }

    #[test]
    fn degenerate_matrices() {
        let all = detection_metrics(&ConfusionMatrix {
            tp: 10,
            ..Default::default()
        });
        assert_eq!((all.accuracy, all.precision, all.recall), (Some(1.0), Some(1.0), Some(1.0)));
        let missed = detection_metrics(&ConfusionMatrix {
            fn_: 4,
            tn: 3,
            ..Default::default()
        });
        assert_eq!(missed.recall, Some(0.0));
        assert_eq!(missed.precision, None);
        assert_eq!(detection_metrics(&ConfusionMatrix::default()).accuracy, None);
    }

    fn sample(truth: f64, observed: f64, predicted: f64) -> RecoverySample {
        RecoverySample {
            episode: 0,
            step: 0,
            vehicle: 0,
            slot: 0,
            truth: [truth, truth],
            observed: [observed, observed],
            predicted: [predicted, predicted],
        }
    }

    #[test]
    fn recovery_cases() {
        assert!((recovery_percentage(9.10, 3.36).unwrap() - 63.1).abs() < 0.1);
        let perfect = recovery_stats(&[sample(1.0, 4.0, 1.0), sample(-2.0, 0.0, -2.0)]).unwrap();
        assert_eq!(perfect.dims[0].recovery_mae(), Some(100.0));
        let useless = recovery_stats(&[sample(1.0, 4.0, 4.0)]).unwrap();
        assert_eq!(useless.dims[1].recovery_mse(), Some(0.0));
        assert!(recovery_stats(&[]).is_err());
        assert_eq!(recovery_percentage(0.0, 1.0), None);
    }

    #[test]
    fn aggregate_cases() {
        let ep = |r: f64, c: bool, t: usize| EpisodeMetrics {
            mean_return: r,
            collided: c,
            timesteps: t,
            fault_active_steps: 0,
        };
        let a = aggregate(&[ep(1.0, false, 10), ep(3.0, true, 4), ep(2.0, false, 20)]).unwrap();
        assert_eq!(a.mean_reward, 2.0);
        assert!((a.collision_rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.mean_timesteps, Some(15.0));
        let none = aggregate(&vec![ep(0.0, false, 7); 100]).unwrap();
        assert_eq!(none.collision_rate, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn evaluation_is_pure_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agent = VehicleAgent::new(PolicyMode::Oft, &NetworkConfig::default(), &mut rng);
        let before = agent.checksum();
        let cfg = EvalConfig {
            episodes: 5,
            seed: 11,
            ..EvalConfig::default()
        };
        let env = EnvConfig::default();
        let a = run_evaluation(&agent, &env, &FaultCondition::Random, &cfg).unwrap();
        let b = run_evaluation(&agent, &env, &FaultCondition::Random, &cfg).unwrap();
        assert_eq!(agent.checksum(), before);
        assert_eq!(a.aggregate, b.aggregate);
        assert_eq!(a.confusion(), b.confusion());
        let zero = EvalConfig { episodes: 0, ..cfg };
        assert!(run_evaluation(&agent, &env, &FaultCondition::None, &zero).is_err());
    }
}
