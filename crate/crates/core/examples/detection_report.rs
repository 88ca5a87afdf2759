//! Trains the fault-tolerant agent, then measures fault detection and
//! observation recovery on held-out episodes under random faults.
//!
//! cargo run --release --example detection_report -- [episodes]

use faultmerge::agents::PolicyMode;
use faultmerge::env::EnvConfig;
use faultmerge::eval::{detection_metrics, recovery_stats, run_evaluation, EvalConfig, FaultCondition};
use faultmerge::training::{FaultSource, TrainConfig, Trainer};

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.2}%"))
}

fn main() -> faultmerge::Result<()> {
    let episodes: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let env = EnvConfig::default();
    let cfg = TrainConfig {
        episodes,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(env.clone(), cfg, PolicyMode::Oft, FaultSource::Random, 8)?;
    trainer.run(episodes, |_| {})?;
    let eval = EvalConfig {
        episodes: 200,
        seed: 1234,
        ..EvalConfig::default()
    };
    let report = run_evaluation(trainer.agent(), &env, &FaultCondition::Random, &eval)?;
    let m = report.confusion().expect("temporal agent");
    println!("            predicted fault  predicted normal");
    println!("fault       {:15}  {:16}", m.tp, m.fn_);
    println!("normal      {:15}  {:16}", m.fp, m.tn);
    let d = detection_metrics(&m);
    let as_pct = |v: Option<f64>| pct(v.map(|v| 100.0 * v));
    println!(
        "accuracy {}  precision {}  recall {}",
        as_pct(d.accuracy),
        as_pct(d.precision),
        as_pct(d.recall)
    );
    let r = recovery_stats(&report.recovery)?;
    for (name, d) in ["position", "velocity"].iter().zip(&r.dims) {
        println!(
            "{name:8} original MAE {:.3} prediction MAE {:.3} recovery {}",
            d.original.mae,
            d.prediction.mae,
            pct(d.recovery_mae())
        );
    }
    Ok(())
}
