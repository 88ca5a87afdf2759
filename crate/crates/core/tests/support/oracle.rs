//! Brute-force neighbor scan.

use faultmerge::env::{neighbors, Lane, VehicleState, NUM_SLOTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Slot order: same lane ahead, same lane behind, other lane ahead, other
/// lane behind. Ties in position are broken by index.
pub fn brute_force(states: &[VehicleState], i: usize) -> [Option<usize>; NUM_SLOTS] {
    let mut out = [None; NUM_SLOTS];
    if !states[i].exists {
        return out;
    }
    let ego = &states[i];
    let before = |a: usize, b: usize| {
        let (pa, pb) = (states[a].position, states[b].position);
        pa < pb || (pa == pb && a < b)
    };
    for slot in 0..NUM_SLOTS {
        let same_lane = slot < 2;
        let ahead = slot % 2 == 0;
        let mut best: Option<usize> = None;
        for j in 0..states.len() {
            if j == i || !states[j].exists || (states[j].lane == ego.lane) != same_lane {
                continue;
            }
            if ahead != before(i, j) {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(b) if ahead && before(j, b) => Some(j),
                Some(b) if !ahead && before(b, j) => Some(j),
                keep => keep,
            };
        }
        out[slot] = best;
    }
    out
}

/// Random layouts on a coarse grid, so equal positions occur often.
pub fn random_layout(rng: &mut ChaCha8Rng) -> Vec<VehicleState> {
    let n = rng.random_range(1..9);
    (0..n)
        .map(|_| {
            let position = if rng.random_bool(0.3) {
                rng.random_range(0..6) as f64 * 10.0
            } else {
                rng.random_range(0.0..300.0)
            };
            let lane = if rng.random_bool(0.5) { Lane::Main } else { Lane::Ramp };
            let mut s = VehicleState::new(position, rng.random_range(0.0..30.0), lane);
            s.exists = rng.random_bool(0.9);
            s
        })
        .collect()
}

/// First layout (of `count`) where `neighbors` disagrees with the scan.
pub fn first_mismatch(count: usize, seed: u64) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layout in 0..count {
        let states = random_layout(&mut rng);
        for i in 0..states.len() {
            let got = neighbors(&states, i);
            let want = brute_force(&states, i);
            for (s, w) in want.iter().enumerate() {
                if got.get(s) != *w {
                    return Some(format!("layout {layout}, vehicle {i}, slot {s}: {states:?}"));
                }
            }
        }
    }
    None
}
