//! Distribution checks for the samplers: chi-square for discrete choices,
//! moments for the uniform random fault source.

use std::collections::HashMap;

use faultmerge::agents::{NetworkConfig, PolicyMode, VehicleAgent};
use faultmerge::env::{neighbors, EnvConfig, Lane, VehicleState};
use faultmerge::eval::{replay_episode, EvalConfig, FaultCondition};
use faultmerge::observation::{sample_fault_config, FaultSchedule};
use faultmerge::training::ReplayBuffer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Upper 0.1% point of χ²(k), Wilson–Hilferty approximation.
fn chi2_critical(k: usize) -> f64 {
    let k = k as f64;
    let z = 3.090_232;
    k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3)
}

fn chi2(counts: &[f64], expected: &[f64]) -> f64 {
    counts.iter().zip(expected).map(|(o, e)| (o - e) * (o - e) / e).sum()
}

#[test]
fn recipient_and_slot_are_uniform() {
    let states = vec![
        VehicleState::new(10.0, 20.0, Lane::Main),
        VehicleState::new(40.0, 20.0, Lane::Main),
        VehicleState::new(25.0, 20.0, Lane::Ramp),
        VehicleState::new(90.0, 20.0, Lane::Ramp),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 40_000;
    let mut counts: HashMap<(usize, usize), f64> = HashMap::new();
    for _ in 0..draws {
        let f = sample_fault_config(&mut rng, &states, &FaultSchedule::default(), 30);
        *counts.entry((f.recipient, f.target_slot)).or_default() += 1.0;
    }
    let mut observed = Vec::new();
    let mut expected = Vec::new();
    for i in 0..states.len() {
        let slots: Vec<usize> = neighbors(&states, i).present_slots().collect();
        for &s in &slots {
            observed.push(counts.remove(&(i, s)).unwrap_or(0.0));
            expected.push(draws as f64 / states.len() as f64 / slots.len() as f64);
        }
    }
    assert!(counts.is_empty(), "absent slots drawn: {counts:?}");
    let stat = chi2(&observed, &expected);
    assert!(stat < chi2_critical(observed.len() - 1), "χ² = {stat}");
}

#[test]
fn buffer_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(50).unwrap();
    for k in 0..130 {
        buf.store(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut counts = vec![0.0; buf.len()];
    for _ in 0..400 {
        for i in buf.sample_indices(40, &mut rng).unwrap() {
            counts[i] += 1.0;
        }
    }
    let expected = vec![400.0 * 40.0 / 50.0; 50];
    let stat = chi2(&counts, &expected);
    assert!(stat < chi2_critical(49), "χ² = {stat}");
}

#[test]
fn random_fault_source_has_uniform_moments() {
    let env = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = NetworkConfig {
        hidden: vec![16],
        gru_hidden: 8,
        ..NetworkConfig::default()
    };
    let agent = VehicleAgent::new(PolicyMode::Vanilla, &net, &mut rng);
    let cfg = EvalConfig {
        episodes: 1,
        seed: 8,
        ..EvalConfig::default()
    };
    let eps = cfg.budget.epsilon;
    let mut samples = [Vec::new(), Vec::new()];
    for e in 0..400 {
        let (_, rows) = replay_episode(&agent, &env, &FaultCondition::Random, &cfg, e).unwrap();
        for r in rows.iter().filter(|r| r.faulted_slot.is_some()) {
            for k in 0..2 {
                samples[k].push(r.perturbation[k] / eps[k]);
            }
        }
    }
    let n = samples[0].len() as f64;
    assert!(n > 300.0, "only {n} faulted steps");
    for s in &samples {
        assert!(s.iter().all(|v| v.abs() <= 1.0));
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        // U(-1, 1): mean 0 (sd 1/sqrt(3n)), variance 1/3 (sd sqrt(4/45n))
        assert!(mean.abs() < 4.0 / (3.0 * n).sqrt(), "mean {mean}");
        assert!((var - 1.0 / 3.0).abs() < 4.0 * (4.0 / (45.0 * n)).sqrt(), "variance {var}");
    }
}
