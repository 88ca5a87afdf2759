//! Invariants that must hold for arbitrary inputs.

use faultmerge::agents::{NetworkConfig, PolicyMode, VehicleAgent};
use faultmerge::env::{VehicleParams, NUM_SLOTS};
use faultmerge::nn::GruCell;
use faultmerge::observation::{
    build_global_input, encode_indicators, ObservationVector, OBS_DIM,
};
use faultmerge::training::ReplayBuffer;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod support;

use support::ball::check_ball;

#[test]
fn fault_ball_over_many_random_triples() {
    if let Some(v) = support::ball::first_violation(100_000, 2024) {
        panic!("{v}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fault_ball(
        p in -1e3f64..1e3, v in -50f64..50.0, lane in -1f64..1.0,
        bp in -100f64..100.0, bv in -100f64..100.0,
        ep in 1e-6f64..50.0, ev in 1e-6f64..50.0,
    ) {
        prop_assert!(check_ball([1.0, p, v, lane], [bp, bv], [ep, ev]).is_ok());
    }

    #[test]
    fn indicators_are_one_hot(n in 1usize..10, m in 1usize..8, r in 0usize..10, s in 0usize..8) {
        let res = encode_indicators(r, s, n, m);
        if r < n && s < m {
            let ind = res.unwrap();
            prop_assert_eq!(ind.e_rec.iter().sum::<f64>(), 1.0);
            prop_assert_eq!(ind.e_tgt.iter().sum::<f64>(), 1.0);
            prop_assert_eq!(ind.e_rec[r], 1.0);
            prop_assert_eq!(ind.e_tgt[s], 1.0);
            let obs = vec![ObservationVector::zeros(); n];
            prop_assert_eq!(build_global_input(&obs, &ind).len(), n * OBS_DIM + n + m);
        } else {
            prop_assert!(res.is_err());
        }
    }

    #[test]
    fn gru_hidden_stays_bounded(seed in 0u64..1000, scale in 0.1f64..100.0, steps in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gru = GruCell::init(5, 6, &mut rng);
        let mut h = Array2::from_shape_simple_fn((3, 6), || rng.random_range(-1.0..1.0));
        for _ in 0..steps {
            let x = Array2::from_shape_simple_fn((3, 5), || rng.random_range(-scale..scale));
            h = gru.step(x.view(), h.view()).0;
            prop_assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn actions_within_bounds(seed in 0u64..500, obs_scale in 0.01f64..100.0, noise in -5f64..5.0, mode in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = NetworkConfig { hidden: vec![8], gru_hidden: 4, ..NetworkConfig::default() };
        let agent = VehicleAgent::new(PolicyMode::ALL[mode], &net, &mut rng);
        let params: Vec<VehicleParams> = (0..4)
            .map(|_| VehicleParams { accel_min: -rng.random_range(1.0..6.0), accel_max: rng.random_range(0.5..5.0), length: 5.0 })
            .collect();
        let obs = Array2::from_shape_simple_fn((4, OBS_DIM), || rng.random_range(-obs_scale..obs_scale));
        let out = agent.act(obs.view(), agent.zero_hidden(4).view(), &params, &[noise; 4]).unwrap();
        for (a, p) in out.actions.iter().zip(&params) {
            prop_assert!(*a >= p.accel_min && *a <= p.accel_max);
        }
        prop_assert!(out.units.iter().all(|u| u.abs() <= 1.0));
        if let Some(t) = out.temporal {
            prop_assert_eq!(t.probs.ncols(), NUM_SLOTS);
            prop_assert!(t.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn buffer_ring_keeps_newest(cap in 1usize..40, count in 0usize..120) {
        let mut buf = ReplayBuffer::new(cap).unwrap();
        for k in 0..count {
            buf.store(k);
        }
        prop_assert_eq!(buf.len(), count.min(cap));
        let kept: Vec<usize> = buf.iter().copied().collect();
        let expected: Vec<usize> = (count.saturating_sub(cap)..count).collect();
        prop_assert_eq!(kept, expected);
        let mut rng = ChaCha8Rng::seed_from_u64(count as u64);
        if buf.len() >= 1 {
            let picks = buf.sample_indices(buf.len(), &mut rng).unwrap();
            prop_assert!(picks.iter().all(|&i| i < buf.len()));
        }
        prop_assert!(buf.sample_indices(buf.len() + 1, &mut rng).is_err());
    }
}
