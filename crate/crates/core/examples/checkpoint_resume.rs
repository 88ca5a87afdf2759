//! Saves a checkpoint mid-training, restores it, and shows that the
//! restored trainer continues exactly like the original.

use faultmerge::agents::PolicyMode;
use faultmerge::checkpoint::Checkpoint;
use faultmerge::env::EnvConfig;
use faultmerge::training::{FaultSource, TrainConfig, Trainer};

fn main() -> faultmerge::Result<()> {
    let env = EnvConfig::default();
    let cfg = TrainConfig {
        episodes: 60,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let mut original = Trainer::new(env.clone(), cfg.clone(), PolicyMode::Oft, FaultSource::Adversarial, 4)?;
    original.run(30, |_| {})?;
    let bytes = original.to_checkpoint().to_bytes();
    println!("checkpoint: {} bytes after {} episodes", bytes.len(), original.episodes_done());
    let mut restored = Trainer::from_checkpoint(env, cfg, &Checkpoint::from_bytes(&bytes)?)?;
    let a = original.run(5, |_| {})?;
    let b = restored.run(5, |_| {})?;
    for (x, y) in a.iter().zip(&b) {
        println!(
            "episode {}: original {:.6} restored {:.6}",
            x.episode, x.mean_return, y.mean_return
        );
    }
    println!(
        "parameters identical: {}",
        original.parameter_checksum() == restored.parameter_checksum()
    );
    Ok(())
}
