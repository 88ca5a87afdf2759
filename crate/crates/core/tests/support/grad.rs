//! Central finite-difference checks of every network and loss. Each check
//! reports one worst-case relative error per random configuration.

use faultmerge::agents::{
    critic_input, eval_injector_critic, injector_critic_perturbation_grad, new_vehicle_critic, vehicle_critic_action_grad,
    vehicle_critic_eval, ReconMode, TemporalNet, TemporalSequence,
};
use faultmerge::env::NUM_SLOTS;
use faultmerge::nn::{Activation, GruCell, Mlp, Module};
use faultmerge::observation::{PerturbationBudget, OBS_DIM, PERTURB_DIM};
use faultmerge::training::updates::{critic_loss, injector_actor_loss, vehicle_actor_loss, ActorBatch};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Check {
    pub label: String,
    pub err: f64,
    pub tol: f64,
}

impl Check {
    fn new(label: String, err: f64, tol: f64) -> Self {
        Self { label, err, tol }
    }

    pub fn passed(&self) -> bool {
        self.err <= self.tol
    }
}

/// Every check, with the number of random configurations they cover.
pub fn all() -> (usize, Vec<Check>) {
    let groups = [
        ("mlp", mlp_parameter_and_input_gradients()),
        ("gru", gru_through_time()),
        ("temporal", temporal_sequence_loss_with_masks()),
        ("vehicle critic", vehicle_critic_td_loss_and_action_gradient()),
        ("vehicle actor", shared_vehicle_actor_gradient()),
        ("injector", injector_losses_and_perturbation_gradient()),
    ];
    let mut configs = 0;
    let mut checks = Vec::new();
    for (name, group) in groups {
        let mut seeds: Vec<&str> = group.iter().filter_map(|c| c.label.split(':').next()).collect();
        seeds.dedup();
        configs += seeds.len();
        checks.extend(group.iter().map(|c| Check::new(format!("{name} {}", c.label), c.err, c.tol)));
    }
    (configs, checks)
}

/// Relative error; below 1e-4 in magnitude the difference quotient's own
/// rounding error dominates, so that is the floor of the denominator.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-scale..scale))
}

/// Worst relative error between `analytic` and central differences of
/// `loss` around `theta`.
fn worst_param_error(theta: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(theta.len(), analytic.len());
    let mut p = theta.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        p[k] = theta[k] + H;
        let up = loss(&p);
        p[k] = theta[k] - H;
        let down = loss(&p);
        p[k] = theta[k];
        let n = (up - down) / (2.0 * H);
        worst = worst.max(rel_err(analytic[k], n));
    }
    worst
}

fn with_params<M: Module>(m: &M, p: &[f64]) -> M {
    let mut c = m.clone();
    c.set_flat(p).unwrap();
    c
}

pub fn mlp_parameter_and_input_gradients() -> Vec<Check> {
    let mut checks = Vec::new();
    let acts = [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity];
    for seed in 0..32u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rng.random_range(1..6);
        let hidden = rng.random_range(1..6);
        let out = rng.random_range(1..4);
        let rows = rng.random_range(1..5);
        let mlp = Mlp::new(&[input, hidden, hidden, out], acts[seed as usize % 4], acts[(seed as usize / 4) % 4], &mut rng);
        let x = matrix(&mut rng, rows, input, 1.5);
        let w = matrix(&mut rng, rows, out, 1.0);
        let loss = |m: &Mlp, x: &Array2<f64>| (m.predict(x.view()) * &w).sum();
        let cache = mlp.forward(x.view());
        let mut grads = mlp.zeros_like();
        let dx = mlp.backward(&cache, w.view(), &mut grads);
        let e = worst_param_error(&mlp.to_flat(), &grads.to_flat(), |p| loss(&with_params(&mlp, p), &x));
        checks.push(Check::new(format!("seed {seed}: parameter rel err {e:e}"), e, 1e-4));
        let xs = x.as_slice().unwrap().to_vec();
        let e = worst_param_error(&xs, dx.as_slice().unwrap(), |p| {
            loss(&mlp, &Array2::from_shape_vec((rows, input), p.to_vec()).unwrap())
        });
        checks.push(Check::new(format!("seed {seed}: input rel err {e:e}"), e, 1e-4));
    }
    checks
}

pub fn gru_through_time() -> Vec<Check> {
    let mut checks = Vec::new();
    for seed in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (input, hidden, rows, steps) = (
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(1..4),
            rng.random_range(1..5),
        );
        let gru = GruCell::init(input, hidden, &mut rng);
        let xs: Vec<Array2<f64>> = (0..steps).map(|_| matrix(&mut rng, rows, input, 1.0)).collect();
        let h0 = matrix(&mut rng, rows, hidden, 0.5);
        let ws: Vec<Array2<f64>> = (0..steps).map(|_| matrix(&mut rng, rows, hidden, 1.0)).collect();
        let run = |g: &GruCell, h0: &Array2<f64>| {
            let mut h = h0.clone();
            let mut caches = Vec::new();
            let mut loss = 0.0;
            for t in 0..steps {
                let (next, cache) = g.step(xs[t].view(), h.view());
                loss += (&next * &ws[t]).sum();
                caches.push(cache);
                h = next;
            }
            (loss, caches)
        };
        let (_, caches) = run(&gru, &h0);
        let mut grads = gru.zeros_like();
        let dh0 = gru.backward_through_time(&caches, &ws, &mut grads);
        let e = worst_param_error(&gru.to_flat(), &grads.to_flat(), |p| run(&with_params(&gru, p), &h0).0);
        checks.push(Check::new(format!("seed {seed}: rel err {e:e}"), e, 1e-4));
        let e = worst_param_error(h0.as_slice().unwrap(), dh0.as_slice().unwrap(), |p| {
            run(&gru, &Array2::from_shape_vec((rows, hidden), p.to_vec()).unwrap()).0
        });
        checks.push(Check::new(format!("seed {seed}: h0 rel err {e:e}"), e, 1e-4));
    }
    checks
}

pub fn temporal_sequence_loss_with_masks() -> Vec<Check> {
    let mut checks = Vec::new();
    for seed in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let recon = if seed % 2 == 0 { ReconMode::FaultedSlot } else { ReconMode::AllSlots };
        let (hidden, rows, steps) = (rng.random_range(2..6), rng.random_range(1..4), rng.random_range(1..5));
        let net = TemporalNet::new(hidden, recon, &mut rng);
        let seq = TemporalSequence {
            inputs: (0..steps).map(|_| matrix(&mut rng, rows, OBS_DIM, 1.0)).collect(),
            mask: (0..steps)
                .map(|_| Array1::from_shape_fn(rows, |_| f64::from(rng.random_bool(0.8))))
                .collect(),
            h0: matrix(&mut rng, rows, hidden, 0.5),
            prob_targets: (0..steps)
                .map(|_| Array2::from_shape_fn((rows, NUM_SLOTS), |_| f64::from(rng.random_bool(0.3))))
                .collect(),
            recon_targets: (0..steps).map(|_| matrix(&mut rng, rows, recon.dim(), 1.0)).collect(),
        };
        let (loss, grads) = net.sequence_loss(&seq);
        assert!(loss >= 0.0);
        let e = worst_param_error(&net.to_flat(), &grads.to_flat(), |p| with_params(&net, p).sequence_loss(&seq).0);
        checks.push(Check::new(format!("seed {seed}: rel err {e:e}"), e, 1e-4));
    }
    checks
}

pub fn vehicle_critic_td_loss_and_action_gradient() -> Vec<Check> {
    let mut checks = Vec::new();
    for seed in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = rng.random_range(1..4);
        let rows = rng.random_range(1..5);
        let critic = new_vehicle_critic(n, &[6, 5], &mut rng);
        let obs = matrix(&mut rng, rows, n * OBS_DIM, 1.0);
        let acts = matrix(&mut rng, rows, n, 1.0);
        let y = Array1::from_shape_fn(rows, |_| rng.random_range(-3.0..3.0));
        let inputs = critic_input(obs.view(), acts.view());
        let (_, grads) = critic_loss(&critic, inputs.view(), y.view());
        let e = worst_param_error(&critic.to_flat(), &grads.to_flat(), |p| {
            critic_loss(&with_params(&critic, p), inputs.view(), y.view()).0
        });
        checks.push(Check::new(format!("seed {seed}: td rel err {e:e}"), e, 1e-4));

        let (_, cache) = vehicle_critic_eval(&critic, obs.view(), acts.view());
        let dq = vehicle_critic_action_grad(&critic, &cache, n);
        let e = worst_param_error(acts.as_slice().unwrap(), dq.as_slice().unwrap(), |p| {
            let a = Array2::from_shape_vec((rows, n), p.to_vec()).unwrap();
            vehicle_critic_eval(&critic, obs.view(), a.view()).0.sum()
        });
        checks.push(Check::new(format!("seed {seed}: dQ/da rel err {e:e}"), e, 1e-4));
    }
    checks
}

pub fn shared_vehicle_actor_gradient() -> Vec<Check> {
    let mut checks = Vec::new();
    for seed in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = rng.random_range(1..4);
        let rows = rng.random_range(1..5);
        let p_dim = rng.random_range(2..6);
        let policy = Mlp::new(&[p_dim, 5, 1], Activation::Relu, Activation::Tanh, &mut rng);
        let critics: Vec<Mlp> = (0..n).map(|_| new_vehicle_critic(n, &[6, 5], &mut rng)).collect();
        let batch = ActorBatch {
            policy_inputs: (0..n).map(|_| matrix(&mut rng, rows, p_dim, 1.0)).collect(),
            critic_obs: matrix(&mut rng, rows, n * OBS_DIM, 1.0),
            actions_scaled: matrix(&mut rng, rows, n, 1.0),
            accel_low_scaled: Array2::from_elem((rows, n), -1.0),
            half_range_scaled: Array2::from_shape_fn((rows, n), |_| rng.random_range(0.5..0.9)),
        };
        let vehicles: Vec<usize> = (0..n).collect();
        let (_, grads) = vehicle_actor_loss(&policy, &critics, &vehicles, &batch);
        let e = worst_param_error(&policy.to_flat(), &grads.to_flat(), |p| {
            vehicle_actor_loss(&with_params(&policy, p), &critics, &vehicles, &batch).0
        });
        checks.push(Check::new(format!("seed {seed}: rel err {e:e}"), e, 1e-3));
    }
    checks
}

pub fn injector_losses_and_perturbation_gradient() -> Vec<Check> {
    let mut checks = Vec::new();
    for seed in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let rows = rng.random_range(1..5);
        let xdim = rng.random_range(2..8);
        let budget = PerturbationBudget::new([rng.random_range(1.0..10.0), rng.random_range(1.0..5.0)]).unwrap();
        let actor = Mlp::new(&[xdim, 6, PERTURB_DIM], Activation::Relu, Activation::Tanh, &mut rng);
        let critic = Mlp::new(&[xdim + PERTURB_DIM, 6, 1], Activation::Relu, Activation::Identity, &mut rng);
        let x = matrix(&mut rng, rows, xdim, 1.0);

        let (_, grads) = injector_actor_loss(&actor, &critic, x.view());
        let e = worst_param_error(&actor.to_flat(), &grads.to_flat(), |p| {
            injector_actor_loss(&with_params(&actor, p), &critic, x.view()).0
        });
        checks.push(Check::new(format!("seed {seed}: actor rel err {e:e}"), e, 1e-3));

        let b = Array2::from_shape_fn((rows, PERTURB_DIM), |(_, k)| {
            rng.random_range(-budget.epsilon[k]..budget.epsilon[k])
        });
        let scaled = ndarray::concatenate![
            Axis(1),
            x.view(),
            (&b / &Array1::from(budget.epsilon.to_vec())).view()
        ];
        let y = Array1::from_shape_fn(rows, |_| rng.random_range(-3.0..3.0));
        let (_, grads) = critic_loss(&critic, scaled.view(), y.view());
        let e = worst_param_error(&critic.to_flat(), &grads.to_flat(), |p| {
            critic_loss(&with_params(&critic, p), scaled.view(), y.view()).0
        });
        checks.push(Check::new(format!("seed {seed}: critic rel err {e:e}"), e, 1e-4));

        let (_, cache) = eval_injector_critic(&critic, &budget, x.view(), b.view());
        let dq = injector_critic_perturbation_grad(&critic, &budget, &cache);
        let e = worst_param_error(b.as_slice().unwrap(), dq.as_slice().unwrap(), |p| {
            let bb = Array2::from_shape_vec((rows, PERTURB_DIM), p.to_vec()).unwrap();
            eval_injector_critic(&critic, &budget, x.view(), bb.view()).0.sum()
        });
        checks.push(Check::new(format!("seed {seed}: dQ/db rel err {e:e}"), e, 1e-4));
    }
    checks
}
