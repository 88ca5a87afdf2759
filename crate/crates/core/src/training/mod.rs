//! Replay buffers, the five updates and the joint training loop.

mod buffer;
mod trainer;
mod transition;
pub mod updates;

pub use buffer::ReplayBuffer;
pub use trainer::{EpisodeLog, LossSummary, Trainer, UpdateRecord};
pub use transition::{fault_reward, perturbable_index, FaultTransition, VehicleTransition};

use std::fmt;
use std::str::FromStr;

use crate::agents::NetworkConfig;
use crate::env::{NeighborArray, VehicleState, NUM_SLOTS};
use crate::error::{Error, Result};
use crate::observation::{
    encode_indicators, normalize, ActiveFault, FaultConfig, FaultSchedule, ObservationVector, PerturbationBudget,
    OBS_DIM,
};

/// Where the perturbation of a live fault comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaultSource {
    /// No faults are scheduled.
    None,
    /// `b ~ U(−ε, ε)` at every faulted step.
    Random,
    /// `b = ρ(x)` from the injector.
    Adversarial,
}

impl FaultSource {
    pub fn code(self) -> f64 {
        match self {
            FaultSource::None => 0.0,
            FaultSource::Random => 1.0,
            FaultSource::Adversarial => 2.0,
        }
    }
}

impl fmt::Display for FaultSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultSource::None => "none",
            FaultSource::Random => "random",
            FaultSource::Adversarial => "adversarial",
        })
    }
}

impl FromStr for FaultSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FaultSource::None),
            "random" => Ok(FaultSource::Random),
            "adversarial" => Ok(FaultSource::Adversarial),
            other => Err(Error::Parse(format!(
                "unknown fault source `{other}` (expected none | random | adversarial)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Run an update cycle every `update_every` environment steps.
    pub update_every: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub lr_temporal: f64,
    pub vehicle_capacity: usize,
    pub fault_capacity: usize,
    /// Exploration noise standard deviation as a fraction of the action
    /// range, at the first and last episode.
    pub noise_start: f64,
    pub noise_end: f64,
    /// Steps of backpropagation through time for the temporal network.
    pub bptt_window: usize,
    pub network: NetworkConfig,
    pub schedule: FaultSchedule,
    pub budget: PerturbationBudget,
    /// Keep the vehicle agent fixed and act without noise; only the injector
    /// learns.
    pub freeze_vehicles: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 2000,
            update_every: 4,
            batch_size: 128,
            gamma: 0.99,
            tau: 0.01,
            lr_critic: 1e-3,
            lr_actor: 1e-4,
            lr_temporal: 1e-3,
            vehicle_capacity: 100_000,
            fault_capacity: 50_000,
            noise_start: 0.1,
            noise_end: 0.01,
            bptt_window: 8,
            network: NetworkConfig::default(),
            schedule: FaultSchedule::default(),
            budget: PerturbationBudget::default(),
            freeze_vehicles: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.episodes == 0 || self.update_every == 0 || self.batch_size == 0 || self.bptt_window == 0 {
            return fail("episodes, update_every, batch_size and bptt_window must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau must lie in (0, 1]");
        }
        if [self.lr_critic, self.lr_actor, self.lr_temporal].iter().any(|&lr| !(lr > 0.0)) {
            return fail("learning rates must be positive");
        }
        if self.vehicle_capacity < self.batch_size || self.fault_capacity < self.batch_size {
            return fail("buffer capacities must hold at least one batch");
        }
        if !(self.noise_start >= 0.0 && self.noise_end >= 0.0) {
            return fail("exploration noise must be non-negative");
        }
        if self.network.gru_hidden == 0 || self.network.hidden.iter().any(|&h| h == 0) {
            return fail("layer widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.schedule.probability) {
            return fail("fault probability must lie in [0, 1]");
        }
        Ok(())
    }

    /// Exploration standard deviation, as a fraction of the action range,
    /// for episode `e` (linear from start to end over the run).
    pub fn noise_fraction(&self, episode: usize) -> f64 {
        let span = self.episodes.saturating_sub(1).max(1) as f64;
        let f = (episode as f64 / span).min(1.0);
        self.noise_start + (self.noise_end - self.noise_start) * f
    }
}

/// Fault live at step `t`. A recipient that has left the road cannot be
/// faulted.
pub fn live_fault(
    cfg: &FaultConfig,
    t: usize,
    states: &[VehicleState],
    arrays: &[NeighborArray],
) -> Option<ActiveFault> {
    if !cfg.is_configured() || !states.get(cfg.recipient).is_some_and(|s| s.exists) {
        return None;
    }
    cfg.active_at(t, &arrays[cfg.recipient])
}

/// Network-scale observations of the fleet, row-major `N × OBS_DIM`.
pub fn observation_table(obs: &[ObservationVector]) -> Vec<f64> {
    obs.iter().flat_map(normalize).collect()
}

/// Network-scale injector input: normalized true observations followed by
/// the recipient and slot one-hots.
pub fn injector_input(obs_table: &[f64], recipient: usize, target_slot: usize) -> Result<Vec<f64>> {
    let n = obs_table.len() / OBS_DIM;
    let ind = encode_indicators(recipient, target_slot, n, NUM_SLOTS)?;
    let mut x = Vec::with_capacity(obs_table.len() + n + NUM_SLOTS);
    x.extend_from_slice(obs_table);
    x.extend_from_slice(&ind.e_rec);
    x.extend_from_slice(&ind.e_tgt);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_strings_round_trip() {
        for s in [FaultSource::None, FaultSource::Random, FaultSource::Adversarial] {
            assert_eq!(s.to_string().parse::<FaultSource>().unwrap(), s);
        }
        assert!("chaos".parse::<FaultSource>().is_err());
    }

    #[test]
    fn noise_anneals_linearly() {
        let cfg = TrainConfig {
            episodes: 11,
            ..TrainConfig::default()
        };
        assert!((cfg.noise_fraction(0) - 0.1).abs() < 1e-15);
        assert!((cfg.noise_fraction(5) - 0.055).abs() < 1e-12);
        assert!((cfg.noise_fraction(10) - 0.01).abs() < 1e-15);
        assert!((cfg.noise_fraction(50) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            gamma: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn injector_input_layout() {
        let table = vec![0.5; 2 * OBS_DIM];
        let x = injector_input(&table, 1, 2).unwrap();
        assert_eq!(x.len(), 2 * OBS_DIM + 2 + NUM_SLOTS);
        assert_eq!(&x[2 * OBS_DIM..], &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(injector_input(&table, 2, 0).is_err());
    }
}
