//! Samples a fault configuration and shows how a bounded deviation changes
//! the recipient's view of its target neighbor.

use faultmerge::env::{EnvConfig, MergeEnv};
use faultmerge::observation::{
    observe_fleet, perturb_observations, sample_fault_config, FaultSchedule, PerturbationBudget,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> faultmerge::Result<()> {
    let cfg = EnvConfig::default();
    let budget = PerturbationBudget::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut env = MergeEnv::new(cfg.clone())?;
    env.reset(rng.random())?;
    let fault = sample_fault_config(&mut rng, env.states(), &FaultSchedule::default(), cfg.max_steps);
    println!("fault config: {fault:?}");
    loop {
        let t = env.step_index();
        let (arrays, obs) = observe_fleet(env.states());
        if let Some(active) = fault.active_at(t, &arrays[fault.recipient]) {
            // a deliberately oversized request is clipped onto the budget
            let b = [25.0, -1.5];
            let seen = perturb_observations(&obs, Some(active), b, &budget)?;
            let s = active.target_slot;
            println!("first active step {t}: slot {s}");
            println!("  true     {:?}", obs[active.recipient].perturbable(s));
            println!("  observed {:?}", seen[active.recipient].perturbable(s));
            println!("  budget   {:?}", budget.epsilon);
            return Ok(());
        }
        if env.step(&[0.5; 4])?.done {
            println!("the episode ended before the fault window opened");
            return Ok(());
        }
    }
}
