//! Rolls the merging simulator forward under a fixed cruise-and-brake rule
//! and prints the fleet every step.
//!
//! cargo run --example env_rollout -- [seed]

use faultmerge::env::{EnvConfig, MergeEnv};
use faultmerge::observation::observe_fleet;

fn main() -> faultmerge::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut env = MergeEnv::new(EnvConfig::default())?;
    env.reset(seed)?;
    loop {
        let states = env.states().to_vec();
        let (arrays, _) = observe_fleet(&states);
        // brake when the leader in the own lane is close, else cruise
        let actions: Vec<f64> = (0..states.len())
            .map(|i| match arrays[i].get(0) {
                Some(j) if states[j].position - states[i].position < 20.0 => -3.0,
                _ => 1.0,
            })
            .collect();
        let t = env.step_index();
        let fleet: Vec<String> = states
            .iter()
            .map(|s| format!("{:?}@{:6.1}m {:4.1}m/s", s.lane, s.position, s.velocity))
            .collect();
        println!("t={t:2} {}", fleet.join(" | "));
        let out = env.step(&actions)?;
        if out.done {
            println!(
                "done after {} steps: collided={} completed={} timeout={}",
                t + 1,
                out.collided,
                out.completed,
                out.timeout
            );
            break;
        }
    }
    Ok(())
}
