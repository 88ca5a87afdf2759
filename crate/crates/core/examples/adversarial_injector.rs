//! Trains a policy under random faults, freezes it, then trains a fault
//! injector against it and compares returns under random and learned
//! perturbations.
//!
//! cargo run --release --example adversarial_injector -- [policy_episodes] [injector_episodes]

use faultmerge::agents::PolicyMode;
use faultmerge::env::EnvConfig;
use faultmerge::eval::{retrain_injector, run_evaluation, EvalConfig, FaultCondition};
use faultmerge::training::{FaultSource, TrainConfig, Trainer};

fn main() -> faultmerge::Result<()> {
    let mut args = std::env::args().skip(1);
    let policy_episodes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    let injector_episodes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);
    let env = EnvConfig::default();
    let cfg = TrainConfig {
        episodes: policy_episodes,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(env.clone(), cfg.clone(), PolicyMode::Vanilla, FaultSource::Random, 1)?;
    trainer.run(policy_episodes, |_| {})?;
    let policy = trainer.agent().clone();
    let inj_cfg = TrainConfig {
        episodes: injector_episodes,
        ..cfg
    };
    let injector = retrain_injector(&policy, &env, &inj_cfg, 2)?;
    let eval = EvalConfig {
        episodes: 200,
        seed: 99,
        ..EvalConfig::default()
    };
    for condition in [FaultCondition::None, FaultCondition::Random, FaultCondition::Injector(Box::new(injector))] {
        let a = run_evaluation(&policy, &env, &condition, &eval)?.aggregate;
        println!(
            "{:9} reward {:8.4} ± {:.4}  collision rate {:.3}",
            condition.label(),
            a.mean_reward,
            a.reward_std_err,
            a.collision_rate
        );
    }
    Ok(())
}
