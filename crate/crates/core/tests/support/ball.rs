//! The fault-ball property for single (block, b, ε) triples.

use faultmerge::observation::{apply_fault, PerturbationBudget, PERTURB_OFFSETS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn check_ball(block: [f64; 4], b: [f64; 2], eps: [f64; 2]) -> std::result::Result<(), String> {
    let budget = PerturbationBudget::new(eps).map_err(|e| e.to_string())?;
    let out = apply_fault(block, b, &budget);
    for k in 0..4 {
        match PERTURB_OFFSETS.iter().position(|&o| o == k) {
            Some(d) => {
                let diff = (out[k] - block[k]).abs();
                if diff > eps[d] {
                    return Err(format!("dim {k}: |Δ| = {diff:e} > ε = {:e}", eps[d]));
                }
            }
            None if out[k].to_bits() != block[k].to_bits() => return Err(format!("dim {k} changed")),
            None => {}
        }
    }
    Ok(())
}

/// First of `count` random triples violating the property.
pub fn first_violation(count: usize, seed: u64) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let scale = 10f64.powi(rng.random_range(-3..4));
        let block = [1.0, rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-1.0..1.0)];
        let eps = [rng.random_range(1e-3..20.0), rng.random_range(1e-3..10.0)];
        let b = [rng.random_range(-3.0 * eps[0]..3.0 * eps[0]), rng.random_range(-3.0 * eps[1]..3.0 * eps[1])];
        if let Err(e) = check_ball(block, b, eps) {
            return Some(format!("{block:?} {b:?} {eps:?}: {e}"));
        }
    }
    None
}
