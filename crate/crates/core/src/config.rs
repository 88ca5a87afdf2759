//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; file values override defaults and command-line flags override
//! the file. [`RunConfig::to_text`] writes the fully resolved set in a fixed
//! order, which is what every run echoes next to its outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::agents::{PolicyMode, ReconMode};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::observation::PerturbationBudget;
use crate::training::{FaultSource, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: PolicyMode,
    pub fault: FaultSource,
    pub out: PathBuf,
    /// Write a checkpoint every this many episodes (0: only at the end).
    pub checkpoint_every: usize,
    pub eval_episodes: usize,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: PolicyMode::Oft,
            fault: FaultSource::Adversarial,
            out: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            eval_episodes: 100,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Every key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "mode",
    "fault",
    "out",
    "episodes",
    "checkpoint_every",
    "eval_episodes",
    "n_vehicles",
    "n_ramp",
    "max_steps",
    "dt",
    "v_max",
    "main_length",
    "ramp_length",
    "merge_point",
    "goal_point",
    "init_velocity_min",
    "init_velocity_max",
    "min_headway",
    "accel_min",
    "accel_max_choices",
    "vehicle_length",
    "main_spawn_min",
    "main_spawn_max",
    "ramp_spawn_min",
    "ramp_spawn_max",
    "reward_velocity_weight",
    "reward_target_velocity",
    "reward_collision_penalty",
    "reward_goal_bonus",
    "reward_goal_discount",
    "update_every",
    "batch_size",
    "gamma",
    "tau",
    "lr_critic",
    "lr_actor",
    "lr_temporal",
    "vehicle_capacity",
    "fault_capacity",
    "noise_start",
    "noise_end",
    "bptt_window",
    "hidden",
    "gru_hidden",
    "recon",
    "fault_probability",
    "fault_earliest_onset",
    "fault_min_duration",
    "epsilon_position",
    "epsilon_velocity",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Parse(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let e = &mut self.env;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "fault" => self.fault = v.parse()?,
            "out" => self.out = PathBuf::from(v),
            "episodes" => t.episodes = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            "n_vehicles" => e.n_vehicles = parse(key, v)?,
            "n_ramp" => e.n_ramp = parse(key, v)?,
            "max_steps" => e.max_steps = parse(key, v)?,
            "dt" => e.dt = parse(key, v)?,
            "v_max" => e.v_max = parse(key, v)?,
            "main_length" => e.geometry.main_length = parse(key, v)?,
            "ramp_length" => e.geometry.ramp_length = parse(key, v)?,
            "merge_point" => e.geometry.merge_point = parse(key, v)?,
            "goal_point" => e.geometry.goal_point = parse(key, v)?,
            "init_velocity_min" => e.init_velocity.0 = parse(key, v)?,
            "init_velocity_max" => e.init_velocity.1 = parse(key, v)?,
            "min_headway" => e.min_headway = parse(key, v)?,
            "accel_min" => e.accel_min = parse(key, v)?,
            "accel_max_choices" => e.accel_max_choices = parse_list(key, v)?,
            "vehicle_length" => e.vehicle_length = parse(key, v)?,
            "main_spawn_min" => e.main_spawn.0 = parse(key, v)?,
            "main_spawn_max" => e.main_spawn.1 = parse(key, v)?,
            "ramp_spawn_min" => e.ramp_spawn.0 = parse(key, v)?,
            "ramp_spawn_max" => e.ramp_spawn.1 = parse(key, v)?,
            "reward_velocity_weight" => e.reward.velocity_weight = parse(key, v)?,
            "reward_target_velocity" => e.reward.target_velocity = parse(key, v)?,
            "reward_collision_penalty" => e.reward.collision_penalty = parse(key, v)?,
            "reward_goal_bonus" => e.reward.goal_bonus = parse(key, v)?,
            "reward_goal_discount" => e.reward.goal_discount = parse(key, v)?,
            "update_every" => t.update_every = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "gamma" => t.gamma = parse(key, v)?,
            "tau" => t.tau = parse(key, v)?,
            "lr_critic" => t.lr_critic = parse(key, v)?,
            "lr_actor" => t.lr_actor = parse(key, v)?,
            "lr_temporal" => t.lr_temporal = parse(key, v)?,
            "vehicle_capacity" => t.vehicle_capacity = parse(key, v)?,
            "fault_capacity" => t.fault_capacity = parse(key, v)?,
            "noise_start" => t.noise_start = parse(key, v)?,
            "noise_end" => t.noise_end = parse(key, v)?,
            "bptt_window" => t.bptt_window = parse(key, v)?,
            "hidden" => t.network.hidden = parse_list(key, v)?,
            "gru_hidden" => t.network.gru_hidden = parse(key, v)?,
            "recon" => t.network.recon = v.parse()?,
            "fault_probability" => t.schedule.probability = parse(key, v)?,
            "fault_earliest_onset" => t.schedule.earliest_onset = parse(key, v)?,
            "fault_min_duration" => t.schedule.min_duration = parse(key, v)?,
            "epsilon_position" => t.budget = PerturbationBudget::new([parse(key, v)?, t.budget.epsilon[1]])?,
            "epsilon_velocity" => t.budget = PerturbationBudget::new([t.budget.epsilon[0], parse(key, v)?])?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let e = &self.env;
        let t = &self.train;
        Some(match key {
            "seed" => self.seed.to_string(),
            "mode" => self.mode.to_string(),
            "fault" => self.fault.to_string(),
            "out" => self.out.display().to_string(),
            "episodes" => t.episodes.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "n_vehicles" => e.n_vehicles.to_string(),
            "n_ramp" => e.n_ramp.to_string(),
            "max_steps" => e.max_steps.to_string(),
            "dt" => e.dt.to_string(),
            "v_max" => e.v_max.to_string(),
            "main_length" => e.geometry.main_length.to_string(),
            "ramp_length" => e.geometry.ramp_length.to_string(),
            "merge_point" => e.geometry.merge_point.to_string(),
            "goal_point" => e.geometry.goal_point.to_string(),
            "init_velocity_min" => e.init_velocity.0.to_string(),
            "init_velocity_max" => e.init_velocity.1.to_string(),
            "min_headway" => e.min_headway.to_string(),
            "accel_min" => e.accel_min.to_string(),
            "accel_max_choices" => join(&e.accel_max_choices),
            "vehicle_length" => e.vehicle_length.to_string(),
            "main_spawn_min" => e.main_spawn.0.to_string(),
            "main_spawn_max" => e.main_spawn.1.to_string(),
            "ramp_spawn_min" => e.ramp_spawn.0.to_string(),
            "ramp_spawn_max" => e.ramp_spawn.1.to_string(),
            "reward_velocity_weight" => e.reward.velocity_weight.to_string(),
            "reward_target_velocity" => e.reward.target_velocity.to_string(),
            "reward_collision_penalty" => e.reward.collision_penalty.to_string(),
            "reward_goal_bonus" => e.reward.goal_bonus.to_string(),
            "reward_goal_discount" => e.reward.goal_discount.to_string(),
            "update_every" => t.update_every.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "gamma" => t.gamma.to_string(),
            "tau" => t.tau.to_string(),
            "lr_critic" => t.lr_critic.to_string(),
            "lr_actor" => t.lr_actor.to_string(),
            "lr_temporal" => t.lr_temporal.to_string(),
            "vehicle_capacity" => t.vehicle_capacity.to_string(),
            "fault_capacity" => t.fault_capacity.to_string(),
            "noise_start" => t.noise_start.to_string(),
            "noise_end" => t.noise_end.to_string(),
            "bptt_window" => t.bptt_window.to_string(),
            "hidden" => join(&t.network.hidden),
            "gru_hidden" => t.network.gru_hidden.to_string(),
            "recon" => t.network.recon.to_string(),
            "fault_probability" => t.schedule.probability.to_string(),
            "fault_earliest_onset" => t.schedule.earliest_onset.to_string(),
            "fault_min_duration" => t.schedule.min_duration.to_string(),
            "epsilon_position" => t.budget.epsilon[0].to_string(),
            "epsilon_velocity" => t.budget.epsilon[1].to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`, got `{line}`", k + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Parse(format!("line {}: {e}", k + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Fully resolved configuration, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()
    }

    pub fn eval_config(&self, episodes: usize, seed: u64) -> EvalConfig {
        EvalConfig {
            episodes,
            seed,
            schedule: self.train.schedule.clone(),
            budget: self.train.budget,
            record_samples: true,
        }
    }

    pub fn recon(&self) -> ReconMode {
        self.train.network.recon
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_keys_take_defaults() {
        let cfg = RunConfig::from_text("# comment\nseed = 7\n\nmode = vanilla\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mode, PolicyMode::Vanilla);
        assert_eq!(cfg.train.batch_size, 128);
        assert!(cfg.to_text().contains("batch_size = 128\n"));
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("hidden", "32, 16").unwrap();
        cfg.set("accel_max_choices", "2.5,3").unwrap();
        cfg.set("gamma", "0.95").unwrap();
        cfg.set("recon", "all_slots").unwrap();
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        for key in KEYS {
            assert!(cfg.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(RunConfig::from_text("mode = maddpg").is_err());
        assert!(RunConfig::from_text("colour = blue").is_err());
        assert!(RunConfig::from_text("just words").is_err());
        assert!(RunConfig::from_text("batch_size = -3").is_err());
        assert!(RunConfig::from_text("epsilon_position = 0").is_err());
    }
}
