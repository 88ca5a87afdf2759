//! Policy × fault-condition grid: three policy variants tested fault-free,
//! under random faults and against an injector retrained per policy.
//!
//! cargo run --release --example generalization -- [episodes]

use faultmerge::agents::PolicyMode;
use faultmerge::env::EnvConfig;
use faultmerge::eval::{
    aggregate_row, generalization_matrix, EvalConfig, FaultCondition, GridCondition, AGGREGATE_HEADER,
};
use faultmerge::training::{FaultSource, TrainConfig, Trainer};

fn main() -> faultmerge::Result<()> {
    let episodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let env = EnvConfig::default();
    let cfg = TrainConfig {
        episodes,
        ..TrainConfig::default()
    };
    let mut policies = Vec::new();
    for mode in PolicyMode::ALL {
        let mut trainer = Trainer::new(env.clone(), cfg.clone(), mode, FaultSource::Adversarial, 21)?;
        trainer.run(episodes, |_| {})?;
        policies.push((mode.to_string(), trainer.agent().clone()));
    }
    let conditions = vec![
        GridCondition::Fixed {
            name: "none".into(),
            condition: FaultCondition::None,
        },
        GridCondition::Fixed {
            name: "random".into(),
            condition: FaultCondition::Random,
        },
        GridCondition::Retrained {
            name: "retrained".into(),
            train: TrainConfig {
                episodes: episodes / 2,
                ..cfg
            },
            seed: 22,
        },
    ];
    let eval = EvalConfig {
        episodes: 100,
        seed: 7,
        ..EvalConfig::default()
    };
    println!("{AGGREGATE_HEADER}");
    for cell in generalization_matrix(&policies, &conditions, &env, &eval)? {
        println!("{}", aggregate_row(&cell.policy, &cell.condition, &cell.aggregate));
    }
    Ok(())
}
