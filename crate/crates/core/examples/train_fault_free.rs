//! Trains the vanilla multi-agent policy without faults and prints the
//! learning curve in blocks of episodes.
//!
//! cargo run --release --example train_fault_free -- [episodes] [seed]

use faultmerge::agents::PolicyMode;
use faultmerge::env::EnvConfig;
use faultmerge::training::{FaultSource, TrainConfig, Trainer};

fn main() -> faultmerge::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = TrainConfig {
        episodes,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(EnvConfig::default(), cfg, PolicyMode::Vanilla, FaultSource::None, seed)?;
    let logs = trainer.run(episodes, |_| {})?;
    let block = (episodes / 10).max(1);
    for chunk in logs.chunks(block) {
        let mean = chunk.iter().map(|l| l.mean_return).sum::<f64>() / chunk.len() as f64;
        let collisions = chunk.iter().filter(|l| l.collided).count();
        println!(
            "episodes {:5}..{:5}  mean return {mean:8.3}  collisions {collisions}/{}",
            chunk[0].episode,
            chunk[chunk.len() - 1].episode,
            chunk.len()
        );
    }
    Ok(())
}
