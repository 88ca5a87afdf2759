//! Joint training of the fault-tolerant agent and the fault injector, with
//! periodic loss summaries and a checkpoint at the end.
//!
//! cargo run --release --example joint_training -- [episodes] [checkpoint path]

use faultmerge::agents::PolicyMode;
use faultmerge::env::EnvConfig;
use faultmerge::training::{FaultSource, TrainConfig, Trainer};

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn main() -> faultmerge::Result<()> {
    let mut args = std::env::args().skip(1);
    let episodes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let path = args.next().unwrap_or_else(|| "joint_training.ckpt".into());
    let cfg = TrainConfig {
        episodes,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(EnvConfig::default(), cfg, PolicyMode::Oft, FaultSource::Adversarial, 5)?;
    let every = (episodes / 10).max(1);
    trainer.run(episodes, |log| {
        if (log.episode + 1) % every == 0 {
            let l = &log.losses;
            println!(
                "episode {:5} return {:8.3} temporal {} critic {} actor {} fault critic {} fault actor {}",
                log.episode + 1,
                log.mean_return,
                fmt(l.temporal),
                fmt(l.critic),
                fmt(l.actor),
                fmt(l.fault_critic),
                fmt(l.fault_actor)
            );
        }
    })?;
    trainer.to_checkpoint().save(path.as_ref())?;
    println!("{} updates; checkpoint written to {path}", trainer.update_trace().len());
    Ok(())
}
