//! Central finite-difference check of the temporal network's sequence loss
//! (GRU, probability head and reconstruction head together).

use faultmerge::agents::{ReconMode, TemporalNet, TemporalSequence};
use faultmerge::env::NUM_SLOTS;
use faultmerge::nn::Module;
use faultmerge::observation::OBS_DIM;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> faultmerge::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (rows, steps, hidden) = (3, 5, 8);
    let recon = ReconMode::FaultedSlot;
    let net = TemporalNet::new(hidden, recon, &mut rng);
    let mut rand2 = |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    let seq = TemporalSequence {
        inputs: (0..steps).map(|_| rand2(rows, OBS_DIM)).collect(),
        // first two rows start late
        mask: (0..steps)
            .map(|t| Array1::from_shape_fn(rows, |r| if t < r { 0.0 } else { 1.0 }))
            .collect(),
        h0: rand2(rows, hidden).mapv(|v| 0.5 * v),
        prob_targets: (0..steps).map(|_| rand2(rows, NUM_SLOTS).mapv(|v| (v > 0.0) as u8 as f64)).collect(),
        recon_targets: (0..steps).map(|_| rand2(rows, recon.dim())).collect(),
    };
    let (_, grads) = net.sequence_loss(&seq);
    let analytic = grads.to_flat();
    let theta = net.to_flat();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in (0..theta.len()).step_by(7) {
        let mut probe = net.clone();
        let mut p = theta.clone();
        p[k] += h;
        probe.set_flat(&p)?;
        let up = probe.sequence_loss(&seq).0;
        p[k] -= 2.0 * h;
        probe.set_flat(&p)?;
        let down = probe.sequence_loss(&seq).0;
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("{} parameters, every 7th checked; worst relative error {worst:.2e}", theta.len());
    Ok(())
}
