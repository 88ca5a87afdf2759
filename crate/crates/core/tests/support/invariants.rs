//! Training-loop probes shared by the test suites and the acceptance run.

use faultmerge::agents::{NetworkConfig, PolicyMode};
use faultmerge::checkpoint::Checkpoint;
use faultmerge::env::EnvConfig;
use faultmerge::nn::Module;
use faultmerge::observation::OBS_DIM;
use faultmerge::training::{FaultSource, TrainConfig, Trainer};

pub fn small_train_config() -> TrainConfig {
    TrainConfig {
        episodes: 40,
        batch_size: 16,
        vehicle_capacity: 5_000,
        fault_capacity: 5_000,
        bptt_window: 4,
        network: NetworkConfig {
            hidden: vec![16],
            gru_hidden: 6,
            ..NetworkConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Overwrites the stored perturbed observations of every buffered vehicle
/// transition.
pub fn scramble_obs_hat(ck: &mut Checkpoint, n: usize) {
    let arr = ck.arrays.iter_mut().find(|a| a.name == "buffer.vehicle").unwrap();
    let width = arr.shape[1];
    let (lo, hi) = (2 + n * OBS_DIM, 2 + 2 * n * OBS_DIM);
    for row in arr.data.chunks_mut(width) {
        for (k, v) in row[lo..hi].iter_mut().enumerate() {
            *v += 0.3 + 0.01 * k as f64;
        }
    }
}

pub fn critics_after_one_update(mode: PolicyMode, lr_temporal: f64, scramble: bool) -> Vec<u64> {
    let cfg = TrainConfig {
        lr_temporal,
        ..small_train_config()
    };
    let mut t = Trainer::new(EnvConfig::default(), cfg, mode, FaultSource::Random, 9).unwrap();
    t.run(6, |_| {}).unwrap();
    let mut ck = t.to_checkpoint();
    if scramble {
        scramble_obs_hat(&mut ck, t.env_config().n_vehicles);
    }
    let mut t = Trainer::from_checkpoint(t.env_config().clone(), t.config().clone(), &ck).unwrap();
    let losses = t.update_now().unwrap();
    assert!(losses.critic.is_some());
    t.critics().iter().map(|c| c.checksum()).collect()
}
