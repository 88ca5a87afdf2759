use crate::agents::ReconMode;
use crate::env::{NUM_SLOTS, STATE_DIM};
use crate::error::{Error, Result};
use crate::observation::{ActiveFault, OBS_DIM, PERTURB_DIM, PERTURB_OFFSETS};

/// One fleet step as stored in the vehicle buffer. Observations are kept at
/// network scale (see [`crate::observation::normalize`]).
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleTransition {
    pub episode: u64,
    pub step: usize,
    /// True observations of every vehicle, `N × OBS_DIM` row-major.
    pub obs: Vec<f64>,
    /// What the vehicles actually saw.
    pub obs_hat: Vec<f64>,
    /// Applied accelerations.
    pub actions: Vec<f64>,
    pub accel_min: Vec<f64>,
    pub accel_max: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// Collision or completion; timeouts are not terminal.
    pub terminal: bool,
    pub fault: Option<ActiveFault>,
    pub next_fault: Option<ActiveFault>,
    /// Slot each vehicle's reconstruction head is supervised on.
    pub recon_slots: Vec<usize>,
    pub hidden: Vec<f64>,
    pub next_hidden: Vec<f64>,
}

/// Perturbable dims of `slot` inside a row-major observation table.
fn slot_dims(table: &[f64], vehicle: usize, slot: usize) -> [f64; PERTURB_DIM] {
    let base = vehicle * OBS_DIM + (slot + 1) * STATE_DIM;
    [table[base + PERTURB_OFFSETS[0]], table[base + PERTURB_OFFSETS[1]]]
}

/// Offset of a perturbable entry inside a row-major observation table.
pub fn perturbable_index(vehicle: usize, slot: usize, k: usize) -> usize {
    vehicle * OBS_DIM + (slot + 1) * STATE_DIM + PERTURB_OFFSETS[k]
}

fn encode_fault(out: &mut Vec<f64>, f: Option<ActiveFault>) {
    match f {
        Some(f) => out.extend([1.0, f.recipient as f64, f.target_slot as f64]),
        None => out.extend([0.0, 0.0, 0.0]),
    }
}

fn decode_fault(v: &[f64]) -> Option<ActiveFault> {
    (v[0] != 0.0).then(|| ActiveFault {
        recipient: v[1] as usize,
        target_slot: v[2] as usize,
    })
}

impl VehicleTransition {
    pub fn n_vehicles(&self) -> usize {
        self.actions.len()
    }

    /// Ground-truth fault indicators `p_i` over the slots of vehicle `i`.
    pub fn prob_targets(&self, i: usize) -> [f64; NUM_SLOTS] {
        let mut p = [0.0; NUM_SLOTS];
        if let Some(f) = self.fault {
            if f.recipient == i {
                p[f.target_slot] = 1.0;
            }
        }
        p
    }

    /// True perturbable dims the reconstruction head of vehicle `i` should
    /// output.
    pub fn recon_target(&self, i: usize, mode: ReconMode) -> Vec<f64> {
        match mode {
            ReconMode::FaultedSlot => slot_dims(&self.obs, i, self.recon_slots[i]).to_vec(),
            ReconMode::AllSlots => (0..NUM_SLOTS).flat_map(|s| slot_dims(&self.obs, i, s)).collect(),
        }
    }

    pub fn encoded_width(n_vehicles: usize, hidden: usize) -> usize {
        2 + 3 * n_vehicles * OBS_DIM + 5 * n_vehicles + 1 + 6 + 2 * n_vehicles * hidden
    }

    pub fn encode(&self, out: &mut Vec<f64>) {
        out.push(f64::from_bits(self.episode));
        out.push(self.step as f64);
        out.extend_from_slice(&self.obs);
        out.extend_from_slice(&self.obs_hat);
        out.extend_from_slice(&self.actions);
        out.extend_from_slice(&self.accel_min);
        out.extend_from_slice(&self.accel_max);
        out.extend_from_slice(&self.rewards);
        out.extend_from_slice(&self.next_obs);
        out.push(if self.terminal { 1.0 } else { 0.0 });
        encode_fault(out, self.fault);
        encode_fault(out, self.next_fault);
        out.extend(self.recon_slots.iter().map(|&s| s as f64));
        out.extend_from_slice(&self.hidden);
        out.extend_from_slice(&self.next_hidden);
    }

    pub fn decode(v: &[f64], n: usize, hidden: usize) -> Result<Self> {
        if v.len() != Self::encoded_width(n, hidden) {
            return Err(Error::Checkpoint(format!(
                "vehicle transition record has {} values, expected {}",
                v.len(),
                Self::encoded_width(n, hidden)
            )));
        }
        let mut at = 0;
        let mut take = |len: usize| {
            let s = &v[at..at + len];
            at += len;
            s
        };
        let episode = take(1)[0].to_bits();
        let step = take(1)[0] as usize;
        let obs = take(n * OBS_DIM).to_vec();
        let obs_hat = take(n * OBS_DIM).to_vec();
        let actions = take(n).to_vec();
        let accel_min = take(n).to_vec();
        let accel_max = take(n).to_vec();
        let rewards = take(n).to_vec();
        let next_obs = take(n * OBS_DIM).to_vec();
        let terminal = take(1)[0] != 0.0;
        let fault = decode_fault(take(3));
        let next_fault = decode_fault(take(3));
        let recon_slots = take(n).iter().map(|&s| s as usize).collect();
        let hidden_v = take(n * hidden).to_vec();
        let next_hidden = take(n * hidden).to_vec();
        Ok(Self {
            episode,
            step,
            obs,
            obs_hat,
            actions,
            accel_min,
            accel_max,
            rewards,
            next_obs,
            terminal,
            fault,
            next_fault,
            recon_slots,
            hidden: hidden_v,
            next_hidden,
        })
    }
}

/// One injector step, stored only while a fault is live.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultTransition {
    pub x: Vec<f64>,
    /// Physical perturbation that was applied.
    pub b: [f64; PERTURB_DIM],
    pub reward: f64,
    pub next_x: Vec<f64>,
    /// Whether the fault is still live at the next step of a running episode.
    pub continues: bool,
}

impl FaultTransition {
    pub fn encoded_width(x_dim: usize) -> usize {
        2 * x_dim + PERTURB_DIM + 2
    }

    pub fn encode(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.x);
        out.extend_from_slice(&self.b);
        out.push(self.reward);
        out.extend_from_slice(&self.next_x);
        out.push(if self.continues { 1.0 } else { 0.0 });
    }

    pub fn decode(v: &[f64], x_dim: usize) -> Result<Self> {
        if v.len() != Self::encoded_width(x_dim) {
            return Err(Error::Checkpoint(format!(
                "fault transition record has {} values, expected {}",
                v.len(),
                Self::encoded_width(x_dim)
            )));
        }
        Ok(Self {
            x: v[..x_dim].to_vec(),
            b: [v[x_dim], v[x_dim + 1]],
            reward: v[x_dim + 2],
            next_x: v[x_dim + 3..2 * x_dim + 3].to_vec(),
            continues: v[2 * x_dim + 3] != 0.0,
        })
    }
}

/// Injector reward: the negated sum of the vehicles' rewards.
pub fn fault_reward(rewards: &[f64]) -> f64 {
    -rewards.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, h: usize) -> VehicleTransition {
        let seq = |len: usize, off: f64| (0..len).map(|k| k as f64 * 0.5 + off).collect::<Vec<_>>();
        VehicleTransition {
            episode: u64::MAX - 3,
            step: 7,
            obs: seq(n * OBS_DIM, 0.0),
            obs_hat: seq(n * OBS_DIM, 1.0),
            actions: seq(n, 2.0),
            accel_min: vec![-5.0; n],
            accel_max: seq(n, 3.0),
            rewards: seq(n, -1.0),
            next_obs: seq(n * OBS_DIM, 4.0),
            terminal: true,
            fault: Some(ActiveFault {
                recipient: 1,
                target_slot: 3,
            }),
            next_fault: None,
            recon_slots: vec![0, 3, 0, 2][..n].to_vec(),
            hidden: seq(n * h, 5.0),
            next_hidden: seq(n * h, 6.0),
        }
    }

    #[test]
    fn fault_reward_cases() {
        assert_eq!(fault_reward(&[1.0, -0.5, 2.0, 0.5]), -3.0);
        assert_eq!(fault_reward(&[0.0; 4]), 0.0);
        assert_eq!(fault_reward(&[-1.0, 0.5, -2.0, -0.5]), 3.0);
    }

    #[test]
    fn vehicle_record_round_trips() {
        let t = sample(4, 3);
        let mut v = Vec::new();
        t.encode(&mut v);
        assert_eq!(v.len(), VehicleTransition::encoded_width(4, 3));
        assert_eq!(VehicleTransition::decode(&v, 4, 3).unwrap(), t);
        assert!(VehicleTransition::decode(&v[1..], 4, 3).is_err());
    }

    #[test]
    fn fault_record_round_trips() {
        let t = FaultTransition {
            x: vec![0.25; 6],
            b: [-10.0, 4.5],
            reward: 3.5,
            next_x: vec![-0.5; 6],
            continues: true,
        };
        let mut v = Vec::new();
        t.encode(&mut v);
        assert_eq!(FaultTransition::decode(&v, 6).unwrap(), t);
    }

    #[test]
    fn targets_follow_fault_and_recon_slot() {
        let t = sample(4, 1);
        assert_eq!(t.prob_targets(1), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(t.prob_targets(0), [0.0; 4]);
        let base = OBS_DIM + 4 * STATE_DIM;
        assert_eq!(t.recon_target(1, ReconMode::FaultedSlot), vec![t.obs[base + 1], t.obs[base + 2]]);
        assert_eq!(t.recon_target(1, ReconMode::AllSlots).len(), NUM_SLOTS * PERTURB_DIM);
        assert_eq!(perturbable_index(1, 3, 0), base + 1);
    }
}
