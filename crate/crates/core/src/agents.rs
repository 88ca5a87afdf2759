//! The learned networks: the fault-tolerant vehicle agent (temporal
//! discrimination network plus a policy shared by every vehicle), the
//! per-vehicle centralized critics and the adversarial fault injector.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::env::{VehicleParams, NUM_SLOTS};
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, GruCell, GruStepCache, Mlp, MlpCache, Module, NamedArray};
use crate::observation::{global_input_dim, PerturbationBudget, OBS_DIM, PERTURB_DIM};

/// Which vehicle-agent variant is trained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyMode {
    /// Temporal network feeds fault probabilities and reconstructions to the
    /// policy; critics see ground truth.
    Oft,
    /// Same training scheme without the temporal network.
    OftNoGru,
    /// Plain MADDPG: no temporal network, critics see the perturbed stream.
    Vanilla,
}

impl PolicyMode {
    pub const ALL: [PolicyMode; 3] = [PolicyMode::Oft, PolicyMode::OftNoGru, PolicyMode::Vanilla];

    pub fn uses_temporal(self) -> bool {
        self == PolicyMode::Oft
    }

    pub fn critic_sees_truth(self) -> bool {
        self != PolicyMode::Vanilla
    }

    pub fn code(self) -> f64 {
        match self {
            PolicyMode::Oft => 0.0,
            PolicyMode::OftNoGru => 1.0,
            PolicyMode::Vanilla => 2.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        match code as i64 {
            0 => Ok(PolicyMode::Oft),
            1 => Ok(PolicyMode::OftNoGru),
            2 => Ok(PolicyMode::Vanilla),
            _ => Err(Error::Checkpoint(format!("unknown policy mode code {code}"))),
        }
    }
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyMode::Oft => "oft",
            PolicyMode::OftNoGru => "oft_no_gru",
            PolicyMode::Vanilla => "vanilla",
        })
    }
}

impl FromStr for PolicyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oft" => Ok(PolicyMode::Oft),
            "oft_no_gru" => Ok(PolicyMode::OftNoGru),
            "vanilla" => Ok(PolicyMode::Vanilla),
            other => Err(Error::Parse(format!(
                "unknown mode `{other}` (expected oft | oft_no_gru | vanilla)"
            ))),
        }
    }
}

/// Width of the reconstruction head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReconMode {
    /// Perturbable dims of the one faulted neighbor.
    FaultedSlot,
    /// Perturbable dims of every neighbor slot.
    AllSlots,
}

impl ReconMode {
    pub fn dim(self) -> usize {
        match self {
            ReconMode::FaultedSlot => PERTURB_DIM,
            ReconMode::AllSlots => NUM_SLOTS * PERTURB_DIM,
        }
    }
}

impl fmt::Display for ReconMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReconMode::FaultedSlot => "faulted_slot",
            ReconMode::AllSlots => "all_slots",
        })
    }
}

impl FromStr for ReconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "faulted_slot" => Ok(ReconMode::FaultedSlot),
            "all_slots" => Ok(ReconMode::AllSlots),
            other => Err(Error::Parse(format!("unknown reconstruction mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub gru_hidden: usize,
    pub recon: ReconMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            gru_hidden: 64,
            recon: ReconMode::FaultedSlot,
        }
    }
}

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// GRU followed by a sigmoid fault-probability head and a linear
/// reconstruction head.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalNet {
    pub gru: GruCell,
    pub prob_head: Dense,
    pub recon_head: Dense,
}

/// Output of one temporal step for a batch of rows.
#[derive(Clone, Debug)]
pub struct TemporalStep {
    pub probs: Array2<f64>,
    pub recon: Array2<f64>,
    pub hidden: Array2<f64>,
}

/// Training sequence for the temporal network, one row per sample.
///
/// Step `t` of row `b` is real data when `mask[t][b] == 1`; padded steps
/// leave the hidden state untouched and carry no loss.
#[derive(Clone, Debug)]
pub struct TemporalSequence {
    pub inputs: Vec<Array2<f64>>,
    pub mask: Vec<Array1<f64>>,
    pub h0: Array2<f64>,
    pub prob_targets: Vec<Array2<f64>>,
    pub recon_targets: Vec<Array2<f64>>,
}

impl TemporalNet {
    pub fn new<R: Rng + ?Sized>(hidden: usize, recon: ReconMode, rng: &mut R) -> Self {
        Self {
            gru: GruCell::init(OBS_DIM, hidden, rng),
            prob_head: Dense::init(hidden, NUM_SLOTS, rng),
            recon_head: Dense::init(hidden, recon.dim(), rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn recon_dim(&self) -> usize {
        self.recon_head.output_dim()
    }

    fn heads(&self, hidden: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut probs = self.prob_head.forward(hidden);
        Activation::Sigmoid.apply(&mut probs);
        let recon = self.recon_head.forward(hidden);
        (probs, recon)
    }

    /// `(p̃, õ, h′) = G(ô, h)` for each row.
    pub fn forward(&self, obs: ArrayView2<f64>, hidden: ArrayView2<f64>) -> Result<TemporalStep> {
        if obs.ncols() != OBS_DIM || hidden.ncols() != self.hidden_dim() || obs.nrows() != hidden.nrows() {
            return Err(Error::Contract(format!(
                "temporal input shapes {:?} / {:?}",
                obs.shape(),
                hidden.shape()
            )));
        }
        let (next, _) = self.gru.step(obs, hidden);
        let (probs, recon) = self.heads(next.view());
        Ok(TemporalStep {
            probs,
            recon,
            hidden: next,
        })
    }

    /// Composite squared-error loss over the sequence and its gradient.
    ///
    /// Per valid step the loss is `‖p̃ − p‖² + ‖õ − o‖²`, averaged over all
    /// valid (step, row) pairs.
    pub fn sequence_loss(&self, seq: &TemporalSequence) -> (f64, TemporalNet) {
        let steps = seq.inputs.len();
        let valid: f64 = seq.mask.iter().map(|m| m.sum()).sum();
        let mut grads = self.zeros_like();
        if steps == 0 || valid == 0.0 {
            return (0.0, grads);
        }
        let scale = 1.0 / valid;
        let mut hidden = seq.h0.clone();
        let mut caches: Vec<GruStepCache> = Vec::with_capacity(steps);
        let mut states = Vec::with_capacity(steps);
        let mut head_grads = Vec::with_capacity(steps);
        let mut loss = 0.0;
        for t in 0..steps {
            let (stepped, cache) = self.gru.step(seq.inputs[t].view(), hidden.view());
            let m = seq.mask[t].view().insert_axis(Axis(1));
            let blended = &stepped * &m + &hidden * &m.mapv(|v| 1.0 - v);
            let (probs, recon) = self.heads(blended.view());
            let dp = (&probs - &seq.prob_targets[t]) * &m;
            let dr = (&recon - &seq.recon_targets[t]) * &m;
            loss += dp.mapv(|v| v * v).sum() + dr.mapv(|v| v * v).sum();
            // through the sigmoid of the probability head
            let mut dp_pre = dp * (2.0 * scale);
            dp_pre.zip_mut_with(&probs, |g, &p| *g *= p * (1.0 - p));
            let dr = dr * (2.0 * scale);
            let mut dh = self.prob_head.backward(blended.view(), dp_pre.view(), &mut grads.prob_head);
            dh += &self.recon_head.backward(blended.view(), dr.view(), &mut grads.recon_head);
            head_grads.push(dh);
            caches.push(cache);
            states.push(blended.clone());
            hidden = blended;
        }
        let mut carry: Option<Array2<f64>> = None;
        for t in (0..steps).rev() {
            let dh = match carry.take() {
                Some(c) => c + &head_grads[t],
                None => head_grads[t].clone(),
            };
            let m = seq.mask[t].view().insert_axis(Axis(1));
            let d_gru = &dh * &m;
            let (_, dh_prev) = self.gru.backward_step(&caches[t], d_gru.view(), &mut grads.gru);
            carry = Some(dh_prev + &dh * &m.mapv(|v| 1.0 - v));
        }
        (loss * scale, grads)
    }
}

impl Module for TemporalNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.gru.visit(&crate::nn::join(prefix, "gru"), f);
        self.prob_head.visit(&crate::nn::join(prefix, "prob_head"), f);
        self.recon_head.visit(&crate::nn::join(prefix, "recon_head"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.gru.visit_mut(f);
        self.prob_head.visit_mut(f);
        self.recon_head.visit_mut(f);
    }
}

/// Maps a unit action `u ∈ [-1, 1]` affinely onto the vehicle's
/// acceleration range.
pub fn unit_to_accel(u: f64, params: &VehicleParams) -> f64 {
    let a = params.accel_min + 0.5 * (u + 1.0) * (params.accel_max - params.accel_min);
    // rounding can overshoot by an ulp
    a.clamp(params.accel_min, params.accel_max)
}

/// `∂a/∂u` of [`unit_to_accel`].
pub fn accel_half_range(params: &VehicleParams) -> f64 {
    0.5 * (params.accel_max - params.accel_min)
}

/// Fault-tolerant vehicle agent: the policy parameters are shared by every
/// vehicle; hidden states are owned by the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleAgent {
    pub mode: PolicyMode,
    pub temporal: Option<TemporalNet>,
    pub policy: Mlp,
}

/// Per-vehicle outputs of one decision step.
#[derive(Clone, Debug)]
pub struct ActOutput {
    /// Applied accelerations, inside each vehicle's bounds.
    pub actions: Vec<f64>,
    /// Unit-space actions after noise and clipping.
    pub units: Vec<f64>,
    pub temporal: Option<TemporalStep>,
}

impl VehicleAgent {
    pub fn new<R: Rng + ?Sized>(mode: PolicyMode, net: &NetworkConfig, rng: &mut R) -> Self {
        let temporal = mode
            .uses_temporal()
            .then(|| TemporalNet::new(net.gru_hidden, net.recon, rng));
        let input = Self::policy_input_dim(mode, net.recon);
        let policy = Mlp::new(&layer_sizes(input, &net.hidden, 1), Activation::Relu, Activation::Tanh, rng);
        Self { mode, temporal, policy }
    }

    pub fn policy_input_dim(mode: PolicyMode, recon: ReconMode) -> usize {
        if mode.uses_temporal() {
            OBS_DIM + NUM_SLOTS + recon.dim()
        } else {
            OBS_DIM
        }
    }

    /// Hidden width of the temporal network, 0 without one.
    pub fn hidden_dim(&self) -> usize {
        self.temporal.as_ref().map_or(0, TemporalNet::hidden_dim)
    }

    pub fn zero_hidden(&self, n: usize) -> Array2<f64> {
        Array2::zeros((n, self.hidden_dim()))
    }

    pub fn temporal_forward(&self, obs: ArrayView2<f64>, hidden: ArrayView2<f64>) -> Result<Option<TemporalStep>> {
        self.temporal.as_ref().map(|t| t.forward(obs, hidden)).transpose()
    }

    /// Concatenates `[ô, p̃, õ]` (or just `ô` without a temporal network).
    pub fn policy_input(&self, obs: ArrayView2<f64>, temporal: Option<&TemporalStep>) -> Array2<f64> {
        match temporal {
            Some(t) if self.mode.uses_temporal() => {
                concatenate![Axis(1), obs, t.probs.view(), t.recon.view()]
            }
            _ => obs.to_owned(),
        }
    }

    /// Deterministic unit actions `tanh(·) ∈ (-1, 1)`, one per row.
    pub fn unit_actions(&self, policy_input: ArrayView2<f64>) -> Array1<f64> {
        self.policy.predict(policy_input).column(0).to_owned()
    }

    /// One decision for the whole fleet. `noise` is added in unit space
    /// before clipping; pass zeros for evaluation.
    pub fn act(
        &self,
        obs: ArrayView2<f64>,
        hidden: ArrayView2<f64>,
        params: &[VehicleParams],
        noise: &[f64],
    ) -> Result<ActOutput> {
        if obs.nrows() != params.len() || noise.len() != params.len() {
            return Err(Error::Contract("one observation, parameter set and noise value per vehicle".into()));
        }
        let temporal = self.temporal_forward(obs, hidden)?;
        let input = self.policy_input(obs, temporal.as_ref());
        let raw = self.unit_actions(input.view());
        let units: Vec<f64> = raw
            .iter()
            .zip(noise)
            .map(|(u, n)| (u + n).clamp(-1.0, 1.0))
            .collect();
        let actions = units.iter().zip(params).map(|(&u, p)| unit_to_accel(u, p)).collect();
        Ok(ActOutput {
            actions,
            units,
            temporal,
        })
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        let mut out = vec![NamedArray::scalar(format!("{prefix}.mode"), self.mode.code())];
        out.extend(self.policy.to_arrays(&format!("{prefix}.policy")));
        if let Some(t) = &self.temporal {
            out.extend(t.to_arrays(&format!("{prefix}.temporal")));
        }
        out
    }

    pub fn load_arrays(&mut self, prefix: &str, arrays: &[NamedArray]) -> Result<()> {
        self.policy.load_arrays(&format!("{prefix}.policy"), arrays)?;
        if let Some(t) = &mut self.temporal {
            t.load_arrays(&format!("{prefix}.temporal"), arrays)?;
        }
        Ok(())
    }

    pub fn checksum(&self) -> u64 {
        let mut h = self.policy.checksum();
        if let Some(t) = &self.temporal {
            h = h.rotate_left(17) ^ t.checksum();
        }
        h
    }
}

/// Centralized critic input `[o_1 … o_N, a_1/A … a_N/A]`.
pub fn critic_input(obs_all: ArrayView2<f64>, actions_scaled: ArrayView2<f64>) -> Array2<f64> {
    concatenate![Axis(1), obs_all, actions_scaled]
}

pub fn vehicle_critic_dim(n_vehicles: usize) -> usize {
    n_vehicles * OBS_DIM + n_vehicles
}

pub fn new_vehicle_critic<R: Rng + ?Sized>(n_vehicles: usize, hidden: &[usize], rng: &mut R) -> Mlp {
    Mlp::new(
        &layer_sizes(vehicle_critic_dim(n_vehicles), hidden, 1),
        Activation::Relu,
        Activation::Identity,
        rng,
    )
}

/// `Q_i(o, a)` with its forward cache for gradients.
pub fn vehicle_critic_eval(critic: &Mlp, obs_all: ArrayView2<f64>, actions_scaled: ArrayView2<f64>) -> (Array1<f64>, MlpCache) {
    let cache = critic.forward(critic_input(obs_all, actions_scaled).view());
    let q = cache.output().column(0).to_owned();
    (q, cache)
}

/// `∂Q/∂(a/A)` for every action column, from a cached evaluation.
pub fn vehicle_critic_action_grad(critic: &Mlp, cache: &MlpCache, n_vehicles: usize) -> Array2<f64> {
    let rows = cache.output().nrows();
    let ones = Array2::ones((rows, 1));
    let mut scratch = critic.zeros_like();
    let dx = critic.backward(cache, ones.view(), &mut scratch);
    let start = n_vehicles * OBS_DIM;
    dx.slice(s![.., start..start + n_vehicles]).to_owned()
}

/// Adversarial fault injector: actor `ρ(x) = ε ⊙ tanh(·)` and critic
/// `Q(x, b)`; the critic sees `b / ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultInjector {
    pub actor: Mlp,
    pub critic: Mlp,
    pub budget: PerturbationBudget,
}

impl FaultInjector {
    pub fn new<R: Rng + ?Sized>(n_vehicles: usize, hidden: &[usize], budget: PerturbationBudget, rng: &mut R) -> Self {
        let x_dim = global_input_dim(n_vehicles);
        let actor = Mlp::new(&layer_sizes(x_dim, hidden, PERTURB_DIM), Activation::Relu, Activation::Tanh, rng);
        let critic = Mlp::new(
            &layer_sizes(x_dim + PERTURB_DIM, hidden, 1),
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        Self { actor, critic, budget }
    }

    pub fn input_dim(&self) -> usize {
        self.actor.input_dim()
    }

    /// Unit-space perturbations `tanh(·)`, one row per input row.
    pub fn unit_actions(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.actor.predict(x)
    }

    /// `b = ε ⊙ clip(ρ̂(x) + noise, −1, 1)`; physical units.
    pub fn fault_act(&self, x: &[f64], noise: [f64; PERTURB_DIM]) -> Result<[f64; PERTURB_DIM]> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "injector input has length {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let row = ndarray::ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let u = self.unit_actions(row);
        let mut b = [0.0; PERTURB_DIM];
        for k in 0..PERTURB_DIM {
            b[k] = self.budget.epsilon[k] * (u[[0, k]] + noise[k]).clamp(-1.0, 1.0);
        }
        Ok(b)
    }

    /// Critic input `[x, b/ε]` for physical `b` rows.
    pub fn critic_input(&self, x: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
        let eps = Array1::from(self.budget.epsilon.to_vec());
        let unit = &b / &eps;
        concatenate![Axis(1), x, unit.view()]
    }

    pub fn critic_eval(&self, x: ArrayView2<f64>, b: ArrayView2<f64>) -> (Array1<f64>, MlpCache) {
        eval_injector_critic(&self.critic, &self.budget, x, b)
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        let mut out = vec![NamedArray::new(
            format!("{prefix}.epsilon"),
            vec![PERTURB_DIM],
            self.budget.epsilon.to_vec(),
        )];
        out.extend(self.actor.to_arrays(&format!("{prefix}.actor")));
        out.extend(self.critic.to_arrays(&format!("{prefix}.critic")));
        out
    }

    pub fn load_arrays(&mut self, prefix: &str, arrays: &[NamedArray]) -> Result<()> {
        self.actor.load_arrays(&format!("{prefix}.actor"), arrays)?;
        self.critic.load_arrays(&format!("{prefix}.critic"), arrays)?;
        if let Some(eps) = arrays.iter().find(|a| a.name == format!("{prefix}.epsilon")) {
            self.budget = PerturbationBudget::new([eps.data[0], eps.data[1]])?;
        }
        Ok(())
    }

    pub fn checksum(&self) -> u64 {
        self.actor.checksum().rotate_left(7) ^ self.critic.checksum()
    }
}

/// `Q^φ(x, b)` for a given critic network (live or target).
pub fn eval_injector_critic(
    critic: &Mlp,
    budget: &PerturbationBudget,
    x: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> (Array1<f64>, MlpCache) {
    let eps = Array1::from(budget.epsilon.to_vec());
    let unit = &b / &eps;
    let cache = critic.forward(concatenate![Axis(1), x, unit.view()].view());
    let q = cache.output().column(0).to_owned();
    (q, cache)
}

/// `∂Q/∂b` in physical units, from a cached critic evaluation.
pub fn injector_critic_perturbation_grad(critic: &Mlp, budget: &PerturbationBudget, cache: &MlpCache) -> Array2<f64> {
    let rows = cache.output().nrows();
    let ones = Array2::ones((rows, 1));
    let mut scratch = critic.zeros_like();
    let dx = critic.backward(cache, ones.view(), &mut scratch);
    let start = dx.ncols() - PERTURB_DIM;
    let mut g = dx.slice(s![.., start..]).to_owned();
    for k in 0..PERTURB_DIM {
        g.column_mut(k).mapv_inplace(|v| v / budget.epsilon[k]);
    }
    g
}
