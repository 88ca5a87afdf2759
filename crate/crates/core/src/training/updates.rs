//! Losses and their parameter gradients. Optimizer steps are applied by the
//! trainer, so every function here is pure and can be checked against
//! finite differences.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::agents::{critic_input, vehicle_critic_action_grad};
use crate::nn::{Mlp, Module};

/// TD targets `y = r + γ·(1 − done)·Q′`.
pub fn td_targets(rewards: ArrayView1<f64>, not_done: ArrayView1<f64>, next_q: ArrayView1<f64>, gamma: f64) -> Array1<f64> {
    &rewards + &(&not_done * &next_q * gamma)
}

/// Mean squared TD error of a critic and its gradient.
pub fn critic_loss(critic: &Mlp, inputs: ArrayView2<f64>, targets: ArrayView1<f64>) -> (f64, Mlp) {
    let rows = inputs.nrows() as f64;
    let cache = critic.forward(inputs);
    let err = &cache.output().column(0) - &targets;
    let loss = err.mapv(|e| e * e).sum() / rows;
    let dq = (err * (2.0 / rows)).insert_axis(Axis(1));
    let mut grads = critic.zeros_like();
    critic.backward(&cache, dq.view(), &mut grads);
    (loss, grads)
}

/// Everything the shared-policy gradient needs for one sampled batch.
#[derive(Clone, Debug)]
pub struct ActorBatch {
    /// Policy inputs per vehicle, each `B × P`.
    pub policy_inputs: Vec<Array2<f64>>,
    /// Critic-side observations, `B × N·OBS_DIM`.
    pub critic_obs: Array2<f64>,
    /// Stored actions divided by the acceleration scale, `B × N`.
    pub actions_scaled: Array2<f64>,
    /// `accel_min / A` per entry, `B × N`.
    pub accel_low_scaled: Array2<f64>,
    /// `½(accel_max − accel_min) / A` per entry, `B × N`.
    pub half_range_scaled: Array2<f64>,
}

/// Negated mean critic value when each vehicle in `vehicles` replaces its
/// stored action by the policy's, and the gradient on the shared policy.
pub fn vehicle_actor_loss(policy: &Mlp, critics: &[Mlp], vehicles: &[usize], batch: &ActorBatch) -> (f64, Mlp) {
    let mut grads = policy.zeros_like();
    let rows = batch.critic_obs.nrows();
    let n = batch.actions_scaled.ncols();
    let norm = 1.0 / (vehicles.len() * rows) as f64;
    let mut loss = 0.0;
    for &i in vehicles {
        let cache = policy.forward(batch.policy_inputs[i].view());
        let u = cache.output().column(0).to_owned();
        let mut actions = batch.actions_scaled.clone();
        let low = batch.accel_low_scaled.column(i);
        let half = batch.half_range_scaled.column(i);
        actions.column_mut(i).assign(&(&low + &(&(&u + 1.0) * &half)));
        let qcache = critics[i].forward(critic_input(batch.critic_obs.view(), actions.view()).view());
        loss -= qcache.output().sum() * norm;
        let dq_da = vehicle_critic_action_grad(&critics[i], &qcache, n);
        let du = (&dq_da.column(i) * &half * -norm).insert_axis(Axis(1));
        policy.backward(&cache, du.view(), &mut grads);
    }
    (loss, grads)
}

/// Negated mean `Q(x, ρ(x))` and the gradient on the injector actor. The
/// critic's perturbation input is in units of ε, which is exactly the
/// actor's tanh output.
pub fn injector_actor_loss(actor: &Mlp, critic: &Mlp, x: ArrayView2<f64>) -> (f64, Mlp) {
    let rows = x.nrows() as f64;
    let cache = actor.forward(x);
    let u = cache.output();
    let qcache = critic.forward(ndarray::concatenate![Axis(1), x, u.view()].view());
    let loss = -qcache.output().sum() / rows;
    let ones = Array2::from_elem((x.nrows(), 1), -1.0 / rows);
    let mut scratch = critic.zeros_like();
    let dx = critic.backward(&qcache, ones.view(), &mut scratch);
    let du = dx.slice(s![.., x.ncols()..]).to_owned();
    let mut grads = actor.zeros_like();
    actor.backward(&cache, du.view(), &mut grads);
    (loss, grads)
}
