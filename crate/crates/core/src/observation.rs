//! True and perturbed observation vectors, the bounded fault model, fault
//! configuration sampling and the fault injector's global input.
//!
//! Observations are kept in physical units (m, m/s). Network inputs go
//! through [`normalize`], which divides positions by 100 and velocities by
//! 30; perturbations are always applied before that scaling.

use rand::Rng;

use crate::env::{neighbors, NeighborArray, VehicleState, NUM_SLOTS, STATE_DIM};
use crate::error::{Error, Result};

/// Length of one vehicle's observation: ego block plus one block per slot.
pub const OBS_DIM: usize = (NUM_SLOTS + 1) * STATE_DIM;
/// Number of perturbable dimensions per neighbor block.
pub const PERTURB_DIM: usize = 2;
/// Offsets of relative position and relative velocity inside a block.
pub const PERTURB_OFFSETS: [usize; PERTURB_DIM] = [1, 2];

pub const POSITION_SCALE: f64 = 100.0;
pub const VELOCITY_SCALE: f64 = 30.0;
const BLOCK_SCALE: [f64; STATE_DIM] = [1.0, POSITION_SCALE, VELOCITY_SCALE, 1.0];
/// Normalization divisors for the perturbable dimensions.
pub const PERTURB_SCALE: [f64; PERTURB_DIM] = [POSITION_SCALE, VELOCITY_SCALE];

pub type Block = [f64; STATE_DIM];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservationVector(pub [f64; OBS_DIM]);

impl ObservationVector {
    pub fn zeros() -> Self {
        Self([0.0; OBS_DIM])
    }

    pub fn ego(&self) -> Block {
        self.block_at(0)
    }

    /// Neighbor block for slot `slot` (0-based).
    pub fn neighbor(&self, slot: usize) -> Block {
        self.block_at(slot + 1)
    }

    pub fn set_neighbor(&mut self, slot: usize, block: Block) {
        let start = (slot + 1) * STATE_DIM;
        self.0[start..start + STATE_DIM].copy_from_slice(&block);
    }

    /// `[relative position, relative velocity]` of the neighbor in `slot`.
    pub fn perturbable(&self, slot: usize) -> [f64; PERTURB_DIM] {
        let b = self.neighbor(slot);
        PERTURB_OFFSETS.map(|o| b[o])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn block_at(&self, k: usize) -> Block {
        let mut out = [0.0; STATE_DIM];
        out.copy_from_slice(&self.0[k * STATE_DIM..(k + 1) * STATE_DIM]);
        out
    }
}

/// Per-dimension bound on the injected deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationBudget {
    pub epsilon: [f64; PERTURB_DIM],
}

impl Default for PerturbationBudget {
    fn default() -> Self {
        Self {
            epsilon: [10.0, 5.0],
        }
    }
}

impl PerturbationBudget {
    pub fn new(epsilon: [f64; PERTURB_DIM]) -> Result<Self> {
        if epsilon.iter().all(|&e| e > 0.0 && e.is_finite()) {
            Ok(Self { epsilon })
        } else {
            Err(Error::Config(format!("perturbation budget must be positive, got {epsilon:?}")))
        }
    }

    pub fn clip(&self, b: [f64; PERTURB_DIM]) -> [f64; PERTURB_DIM] {
        let mut out = [0.0; PERTURB_DIM];
        for k in 0..PERTURB_DIM {
            out[k] = b[k].clamp(-self.epsilon[k], self.epsilon[k]);
        }
        out
    }
}

/// Observation of vehicle `i`: absolute ego state followed by relative
/// `[1, Δposition, Δvelocity, Δlane]` blocks, zeros for absent slots.
pub fn build_observation(states: &[VehicleState], i: usize, neighbor_array: &NeighborArray) -> ObservationVector {
    let ego = &states[i];
    let mut obs = ObservationVector::zeros();
    obs.0[..STATE_DIM].copy_from_slice(&ego.to_array());
    for slot in 0..NUM_SLOTS {
        if let Some(j) = neighbor_array.get(slot) {
            let other = &states[j];
            obs.set_neighbor(
                slot,
                [
                    1.0,
                    other.position - ego.position,
                    other.velocity - ego.velocity,
                    other.lane.id() - ego.lane.id(),
                ],
            );
        }
    }
    obs
}

/// Neighbor arrays and true observations of the whole fleet. Vehicles that
/// no longer exist get all-zero observations.
pub fn observe_fleet(states: &[VehicleState]) -> (Vec<NeighborArray>, Vec<ObservationVector>) {
    let arrays: Vec<NeighborArray> = (0..states.len()).map(|i| neighbors(states, i)).collect();
    let obs = arrays
        .iter()
        .enumerate()
        .map(|(i, na)| {
            if states[i].exists {
                build_observation(states, i, na)
            } else {
                ObservationVector::zeros()
            }
        })
        .collect();
    (arrays, obs)
}

/// Adds the clipped deviation to the perturbable entries of a block.
pub fn apply_fault(block: Block, b: [f64; PERTURB_DIM], budget: &PerturbationBudget) -> Block {
    let clipped = budget.clip(b);
    let mut out = block;
    for (k, &o) in PERTURB_OFFSETS.iter().enumerate() {
        let mut v = block[o] + clipped[k];
        // step back inside the ball when the rounded sum lands outside it
        while (v - block[o]).abs() > budget.epsilon[k] {
            v = if v > block[o] { v.next_down() } else { v.next_up() };
        }
        out[o] = v;
    }
    out
}

/// A fault that is live at the current step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveFault {
    pub recipient: usize,
    pub target_slot: usize,
}

/// Applies `b` to the recipient's targeted block; every other entry of the
/// fleet's observations is copied unchanged.
pub fn perturb_observations(
    true_obs: &[ObservationVector],
    fault: Option<ActiveFault>,
    b: [f64; PERTURB_DIM],
    budget: &PerturbationBudget,
) -> Result<Vec<ObservationVector>> {
    let mut out = true_obs.to_vec();
    if let Some(f) = fault {
        let obs = out
            .get_mut(f.recipient)
            .ok_or_else(|| Error::Contract(format!("fault recipient {} out of range", f.recipient)))?;
        if f.target_slot >= NUM_SLOTS {
            return Err(Error::Contract(format!("target slot {} out of range", f.target_slot)));
        }
        let block = obs.neighbor(f.target_slot);
        if block[0] != 1.0 {
            return Err(Error::Contract(format!(
                "fault targets absent slot {} of vehicle {}",
                f.target_slot, f.recipient
            )));
        }
        obs.set_neighbor(f.target_slot, apply_fault(block, b, budget));
    }
    Ok(out)
}

/// Half-open step interval `[start, end)` during which a fault is scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultWindow {
    pub start: usize,
    pub end: usize,
}

impl FaultWindow {
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end
    }
}

/// Episode-level fault: who misobserves whom, and when.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultConfig {
    pub recipient: usize,
    pub target_slot: usize,
    pub window: Option<FaultWindow>,
}

impl FaultConfig {
    pub fn inactive() -> Self {
        Self {
            recipient: 0,
            target_slot: 0,
            window: None,
        }
    }

    pub fn is_configured(&self) -> bool {
        self.window.is_some()
    }

    /// Live fault at step `t`, given the recipient's current neighbors. A
    /// scheduled fault whose slot is empty is skipped for that step.
    pub fn active_at(&self, t: usize, recipient_neighbors: &NeighborArray) -> Option<ActiveFault> {
        let window = self.window?;
        if window.contains(t) && recipient_neighbors.is_present(self.target_slot) {
            Some(ActiveFault {
                recipient: self.recipient,
                target_slot: self.target_slot,
            })
        } else {
            None
        }
    }
}

/// How faults are scheduled within an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultSchedule {
    pub probability: f64,
    pub earliest_onset: usize,
    pub min_duration: usize,
}

impl Default for FaultSchedule {
    fn default() -> Self {
        Self {
            probability: 0.75,
            earliest_onset: 2,
            min_duration: 3,
        }
    }
}

/// Draws the episode's fault. The recipient is uniform over vehicles with a
/// present neighbor and the slot uniform over that vehicle's present slots;
/// the fault fires with the schedule's probability, starting uniformly in
/// `[earliest_onset, S/2]` and lasting uniformly `[min_duration, S - onset]`
/// steps.
pub fn sample_fault_config<R: Rng + ?Sized>(
    rng: &mut R,
    states: &[VehicleState],
    schedule: &FaultSchedule,
    max_steps: usize,
) -> FaultConfig {
    let arrays: Vec<NeighborArray> = (0..states.len()).map(|i| neighbors(states, i)).collect();
    let candidates: Vec<usize> = (0..states.len())
        .filter(|&i| states[i].exists && arrays[i].any_present())
        .collect();
    if candidates.is_empty() {
        return FaultConfig::inactive();
    }
    let recipient = candidates[rng.random_range(0..candidates.len())];
    let slots: Vec<usize> = arrays[recipient].present_slots().collect();
    let target_slot = slots[rng.random_range(0..slots.len())];
    if !rng.random_bool(schedule.probability.clamp(0.0, 1.0)) {
        return FaultConfig {
            recipient,
            target_slot,
            window: None,
        };
    }
    let last = max_steps.saturating_sub(1);
    let onset_lo = schedule.earliest_onset.min(last);
    let onset_hi = (max_steps / 2).max(onset_lo);
    let start = rng.random_range(onset_lo..=onset_hi);
    let dur_lo = schedule.min_duration.max(1);
    let dur_hi = max_steps.saturating_sub(start).max(dur_lo);
    let duration = rng.random_range(dur_lo..=dur_hi);
    FaultConfig {
        recipient,
        target_slot,
        window: Some(FaultWindow {
            start,
            end: start + duration,
        }),
    }
}

/// One-hot recipient and target indicators.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultIndicators {
    pub e_rec: Vec<f64>,
    pub e_tgt: Vec<f64>,
}

pub fn encode_indicators(recipient: usize, target_slot: usize, n_vehicles: usize, n_slots: usize) -> Result<FaultIndicators> {
    if recipient >= n_vehicles || target_slot >= n_slots {
        return Err(Error::Contract(format!(
            "indicator indices ({recipient}, {target_slot}) out of range ({n_vehicles}, {n_slots})"
        )));
    }
    let mut e_rec = vec![0.0; n_vehicles];
    let mut e_tgt = vec![0.0; n_slots];
    e_rec[recipient] = 1.0;
    e_tgt[target_slot] = 1.0;
    Ok(FaultIndicators { e_rec, e_tgt })
}

/// Length of the injector input for `n` vehicles.
pub fn global_input_dim(n_vehicles: usize) -> usize {
    n_vehicles * OBS_DIM + n_vehicles + NUM_SLOTS
}

/// `[o_1, …, o_N, e_rec, e_tgt]`, concatenated in that order.
pub fn build_global_input(obs: &[ObservationVector], indicators: &FaultIndicators) -> Vec<f64> {
    let mut x = Vec::with_capacity(obs.len() * OBS_DIM + indicators.e_rec.len() + indicators.e_tgt.len());
    for o in obs {
        x.extend_from_slice(&o.0);
    }
    x.extend_from_slice(&indicators.e_rec);
    x.extend_from_slice(&indicators.e_tgt);
    x
}

/// Network-scale copy of an observation.
pub fn normalize(obs: &ObservationVector) -> [f64; OBS_DIM] {
    let mut out = obs.0;
    for (k, v) in out.iter_mut().enumerate() {
        *v /= BLOCK_SCALE[k % STATE_DIM];
    }
    out
}

pub fn normalize_perturbable(dims: [f64; PERTURB_DIM]) -> [f64; PERTURB_DIM] {
    [dims[0] / PERTURB_SCALE[0], dims[1] / PERTURB_SCALE[1]]
}

pub fn denormalize_perturbable(dims: [f64; PERTURB_DIM]) -> [f64; PERTURB_DIM] {
    [dims[0] * PERTURB_SCALE[0], dims[1] * PERTURB_SCALE[1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Lane;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layout() -> Vec<VehicleState> {
        vec![
            VehicleState::new(150.0, 20.0, Lane::Ramp),
            VehicleState::new(180.0, 20.0, Lane::Ramp),
            VehicleState::new(120.0, 20.0, Lane::Main),
            VehicleState::new(160.0, 20.0, Lane::Main),
        ]
    }

    #[test]
    fn relative_block_arithmetic() {
        let states = vec![
            VehicleState::new(100.0, 20.0, Lane::Main),
            VehicleState::new(130.0, 25.0, Lane::Main),
        ];
        let na = neighbors(&states, 0);
        let o = build_observation(&states, 0, &na);
        assert_eq!(o.ego(), [1.0, 100.0, 20.0, 0.0]);
        assert_eq!(o.neighbor(0), [1.0, 30.0, 5.0, 0.0]);
        assert_eq!(o.neighbor(1), [0.0; 4]);
        assert_eq!(o.0.len(), 20);
    }

    #[test]
    fn clip_add_cases() {
        let eps = PerturbationBudget::new([2.0, 2.0]).unwrap();
        let block = [1.0, 10.0, 2.0, 0.0];
        assert_eq!(apply_fault(block, [3.0, -0.5], &eps), [1.0, 12.0, 1.5, 0.0]);
        assert_eq!(apply_fault(block, [0.0, 0.0], &eps), block);
        assert_eq!(apply_fault(block, [-50.0, 50.0], &eps), [1.0, 8.0, 4.0, 0.0]);
    }

    #[test]
    fn budget_must_be_positive() {
        assert!(PerturbationBudget::new([0.0, 1.0]).is_err());
    }

    #[test]
    fn inactive_fault_is_identity() {
        let (_, obs) = observe_fleet(&layout());
        let out = perturb_observations(&obs, None, [5.0, 5.0], &PerturbationBudget::default()).unwrap();
        assert_eq!(out, obs);
    }

    #[test]
    fn only_target_block_changes() {
        let (_, obs) = observe_fleet(&layout());
        let fault = ActiveFault {
            recipient: 0,
            target_slot: 3,
        };
        let out = perturb_observations(&obs, Some(fault), [4.0, -1.0], &PerturbationBudget::default()).unwrap();
        for i in 0..4 {
            for slot in 0..NUM_SLOTS {
                if (i, slot) == (0, 3) {
                    assert_ne!(out[i].neighbor(slot), obs[i].neighbor(slot));
                } else {
                    assert_eq!(out[i].neighbor(slot), obs[i].neighbor(slot));
                }
            }
            assert_eq!(out[i].ego(), obs[i].ego());
        }
    }

    #[test]
    fn absent_target_is_a_contract_violation() {
        let (_, obs) = observe_fleet(&layout());
        let fault = ActiveFault {
            recipient: 0,
            target_slot: 1,
        };
        let res = perturb_observations(&obs, Some(fault), [1.0, 1.0], &PerturbationBudget::default());
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn sampled_slot_is_never_absent() {
        let states = layout();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let f = sample_fault_config(&mut rng, &states, &FaultSchedule::default(), 30);
            let na = neighbors(&states, f.recipient);
            assert!(na.is_present(f.target_slot));
            if f.recipient == 0 {
                assert_ne!(f.target_slot, 1);
            }
            if let Some(w) = f.window {
                assert!((2..=15).contains(&w.start));
                assert!(w.end - w.start >= 3 && w.end <= 30);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let states = layout();
        let a = sample_fault_config(&mut ChaCha8Rng::seed_from_u64(9), &states, &FaultSchedule::default(), 30);
        let b = sample_fault_config(&mut ChaCha8Rng::seed_from_u64(9), &states, &FaultSchedule::default(), 30);
        assert_eq!(a, b);
    }

    #[test]
    fn no_neighbors_gives_inactive_config() {
        let states = vec![VehicleState::new(10.0, 20.0, Lane::Main)];
        let f = sample_fault_config(&mut ChaCha8Rng::seed_from_u64(0), &states, &FaultSchedule::default(), 30);
        assert!(!f.is_configured());
    }

    #[test]
    fn indicator_encoding() {
        let ind = encode_indicators(0, 3, 4, 4).unwrap();
        assert_eq!(ind.e_rec, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ind.e_tgt, vec![0.0, 0.0, 0.0, 1.0]);
        let ind = encode_indicators(2, 0, 4, 4).unwrap();
        assert_eq!(ind.e_rec, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ind.e_rec.iter().sum::<f64>(), 1.0);
        assert_eq!(ind.e_tgt.iter().sum::<f64>(), 1.0);
        assert!(encode_indicators(4, 0, 4, 4).is_err());
    }

    #[test]
    fn global_input_layout() {
        let (_, obs) = observe_fleet(&layout());
        let ind = encode_indicators(0, 3, 4, 4).unwrap();
        let x = build_global_input(&obs, &ind);
        assert_eq!(x.len(), 88);
        assert_eq!(global_input_dim(4), 88);
        for (i, o) in obs.iter().enumerate() {
            assert_eq!(&x[i * OBS_DIM..(i + 1) * OBS_DIM], o.as_slice());
        }
        let zeros = vec![ObservationVector::zeros(); 4];
        let x = build_global_input(&zeros, &encode_indicators(0, 0, 4, 4).unwrap());
        let ones: Vec<usize> = x.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, _)| k).collect();
        assert_eq!(ones, vec![80, 84]);
    }

    #[test]
    fn normalization_round_trip_for_perturbable_dims() {
        let d = [12.5, -3.0];
        let back = denormalize_perturbable(normalize_perturbable(d));
        assert!((back[0] - d[0]).abs() < 1e-12 && (back[1] - d[1]).abs() < 1e-12);
    }
}
