//! Longitudinal traffic simulator for a single-lane main road joined by an
//! on-ramp.
//!
//! All vehicles share one longitudinal axis. The ramp occupies
//! `[merge_point - ramp_length, merge_point)`; a ramp vehicle becomes a
//! main-lane vehicle the moment it reaches `merge_point`. Vehicles are
//! controlled by scalar accelerations only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// State dimensions per vehicle: existence, position, velocity, lane id.
pub const STATE_DIM: usize = 4;
/// Observed neighbor slots: front, rear, side front, side rear.
pub const NUM_SLOTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Lane {
    Main,
    Ramp,
}

impl Lane {
    pub fn id(self) -> f64 {
        match self {
            Lane::Main => 0.0,
            Lane::Ramp => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoadGeometry {
    pub main_length: f64,
    pub ramp_length: f64,
    pub merge_point: f64,
    pub goal_point: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            main_length: 350.0,
            ramp_length: 150.0,
            merge_point: 220.0,
            goal_point: 280.0,
        }
    }
}

impl RoadGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = self.merge_point > 0.0
            && self.merge_point < self.goal_point
            && self.goal_point <= self.main_length
            && self.ramp_length > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid road geometry {self:?}")))
        }
    }

    /// Axis coordinate where the ramp begins.
    pub fn ramp_start(&self) -> f64 {
        self.merge_point - self.ramp_length
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    pub exists: bool,
    pub position: f64,
    pub velocity: f64,
    pub lane: Lane,
}

impl VehicleState {
    pub fn new(position: f64, velocity: f64, lane: Lane) -> Self {
        Self {
            exists: true,
            position,
            velocity,
            lane,
        }
    }

    /// The ego block `[exists, position, velocity, lane]`.
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        [
            if self.exists { 1.0 } else { 0.0 },
            self.position,
            self.velocity,
            self.lane.id(),
        ]
    }

    /// Lane for conflict purposes: ramp vehicles past the merge point share
    /// the main lane.
    pub fn effective_lane(&self, geometry: &RoadGeometry) -> Lane {
        if self.position >= geometry.merge_point {
            Lane::Main
        } else {
            self.lane
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleParams {
    pub accel_min: f64,
    pub accel_max: f64,
    pub length: f64,
}

impl VehicleParams {
    pub fn clip_accel(&self, a: f64) -> f64 {
        a.clamp(self.accel_min, self.accel_max)
    }
}

/// Constants of the per-vehicle reward `-1 + r_goal + r_vel + r_col`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardConfig {
    pub velocity_weight: f64,
    pub target_velocity: f64,
    pub collision_penalty: f64,
    pub goal_bonus: f64,
    pub goal_discount: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            velocity_weight: 0.5,
            target_velocity: 25.0,
            collision_penalty: 10.0,
            goal_bonus: 5.0,
            goal_discount: 0.95,
        }
    }
}

impl RewardConfig {
    pub fn min_step_reward(&self) -> f64 {
        -1.0 - self.collision_penalty
    }

    pub fn max_step_reward(&self) -> f64 {
        -1.0 + self.velocity_weight + self.goal_bonus
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub geometry: RoadGeometry,
    pub n_vehicles: usize,
    /// How many of the `n_vehicles` start on the ramp (the last indices).
    pub n_ramp: usize,
    pub dt: f64,
    pub max_steps: usize,
    pub v_max: f64,
    pub init_velocity: (f64, f64),
    pub min_headway: f64,
    pub accel_min: f64,
    pub accel_max_choices: Vec<f64>,
    pub vehicle_length: f64,
    /// Spawn window on the main lane, axis coordinates.
    pub main_spawn: (f64, f64),
    /// Spawn window on the ramp, axis coordinates.
    pub ramp_spawn: (f64, f64),
    pub reward: RewardConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            geometry: RoadGeometry::default(),
            n_vehicles: 4,
            n_ramp: 2,
            dt: 1.0,
            max_steps: 30,
            v_max: 30.0,
            init_velocity: (15.0, 25.0),
            min_headway: 15.0,
            accel_min: -5.0,
            accel_max_choices: vec![2.0, 3.0, 4.0],
            vehicle_length: 5.0,
            main_spawn: (0.0, 100.0),
            ramp_spawn: (70.0, 150.0),
            reward: RewardConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn n_main(&self) -> usize {
        self.n_vehicles - self.n_ramp
    }

    /// Largest acceleration magnitude any vehicle can apply.
    pub fn accel_scale(&self) -> f64 {
        let max_up = self
            .accel_max_choices
            .iter()
            .copied()
            .fold(0.0_f64, f64::max);
        max_up.max(-self.accel_min)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_vehicles < 2 {
            return fail(format!("n_vehicles must be >= 2, got {}", self.n_vehicles));
        }
        if self.n_ramp > self.n_vehicles {
            return fail("n_ramp exceeds n_vehicles".into());
        }
        if !(self.dt > 0.0) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if self.max_steps == 0 {
            return fail("max_steps must be positive".into());
        }
        if !(self.min_headway > self.vehicle_length) {
            return fail(format!(
                "min_headway {} must exceed vehicle length {}",
                self.min_headway, self.vehicle_length
            ));
        }
        if !(self.accel_min < 0.0) || self.accel_max_choices.is_empty() {
            return fail("acceleration bounds must satisfy accel_min < 0 < accel_max".into());
        }
        if self.accel_max_choices.iter().any(|&a| !(a > 0.0)) {
            return fail("every accel_max choice must be positive".into());
        }
        let (lo, hi) = self.init_velocity;
        if !(0.0 <= lo && lo <= hi && hi <= self.v_max) {
            return fail(format!("initial velocity range {lo}..{hi} outside [0, v_max]"));
        }
        let g = &self.geometry;
        let windows = [
            ("main", self.main_spawn, self.n_main(), 0.0, g.goal_point),
            ("ramp", self.ramp_spawn, self.n_ramp, g.ramp_start(), g.merge_point),
        ];
        for (name, (a, b), count, lane_lo, lane_hi) in windows {
            if count == 0 {
                continue;
            }
            if a > b || a < lane_lo || b >= lane_hi {
                return fail(format!("{name} spawn window {a}..{b} outside lane {lane_lo}..{lane_hi}"));
            }
            if b - a < (count as f64 - 1.0) * self.min_headway {
                return fail(format!(
                    "{name} spawn window too short for {count} vehicles at headway {}",
                    self.min_headway
                ));
            }
        }
        Ok(())
    }
}

/// Index array of the m neighbor slots. Entries are 1-based vehicle ids with
/// 0 marking an absent neighbor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct NeighborArray(pub [usize; NUM_SLOTS]);

impl NeighborArray {
    pub const EMPTY: NeighborArray = NeighborArray([0; NUM_SLOTS]);

    /// 0-based vehicle index in `slot`, if present.
    pub fn get(&self, slot: usize) -> Option<usize> {
        match self.0[slot] {
            0 => None,
            id => Some(id - 1),
        }
    }

    pub fn is_present(&self, slot: usize) -> bool {
        self.0[slot] != 0
    }

    pub fn present_slots(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_SLOTS).filter(|&s| self.is_present(s))
    }

    pub fn any_present(&self) -> bool {
        self.0.iter().any(|&id| id != 0)
    }
}

/// Neighbor slots of vehicle `i`: nearest same-lane vehicle ahead, nearest
/// same-lane vehicle behind, then the same pair for the other lane.
///
/// Vehicles are ordered by `(position, index)`, so equal positions resolve
/// deterministically. A missing vehicle `i` yields an empty array.
pub fn neighbors(states: &[VehicleState], i: usize) -> NeighborArray {
    let Some(ego) = states.get(i).filter(|s| s.exists) else {
        return NeighborArray::EMPTY;
    };
    let key = (ego.position, i);
    // best ahead: smallest key above ego; best behind: largest key below ego
    let mut slots: [Option<(f64, usize)>; NUM_SLOTS] = [None; NUM_SLOTS];
    for (j, other) in states.iter().enumerate() {
        if j == i || !other.exists {
            continue;
        }
        let cand = (other.position, j);
        let ahead = cmp_key(cand, key).is_gt();
        let base = if other.lane == ego.lane { 0 } else { 2 };
        let slot = base + if ahead { 0 } else { 1 };
        let replace = match slots[slot] {
            None => true,
            Some(cur) if ahead => cmp_key(cand, cur).is_lt(),
            Some(cur) => cmp_key(cand, cur).is_gt(),
        };
        if replace {
            slots[slot] = Some(cand);
        }
    }
    let mut out = NeighborArray::EMPTY;
    for (s, entry) in slots.iter().enumerate() {
        if let Some((_, j)) = entry {
            out.0[s] = j + 1;
        }
    }
    out
}

fn cmp_key(a: (f64, usize), b: (f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// True iff two existing vehicles share an effective lane and overlap.
pub fn collision_check(
    states: &[VehicleState],
    params: &[VehicleParams],
    geometry: &RoadGeometry,
) -> bool {
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            let (a, b) = (&states[i], &states[j]);
            if !a.exists || !b.exists {
                continue;
            }
            if a.effective_lane(geometry) != b.effective_lane(geometry) {
                continue;
            }
            let reach = 0.5 * (params[i].length + params[j].length);
            if (a.position - b.position).abs() < reach {
                return true;
            }
        }
    }
    false
}

/// Collision test over the whole step interval.
///
/// Positions move linearly from `prev` to `next`; a ramp vehicle joins the
/// main lane at the fraction of the step where it crosses the merge point.
/// Catches vehicles that pass through each other within a single step.
pub fn swept_collision_check(
    prev: &[VehicleState],
    next: &[VehicleState],
    params: &[VehicleParams],
    geometry: &RoadGeometry,
) -> bool {
    let n = prev.len();
    let merge_fraction = |k: usize| -> Option<f64> {
        let (p0, p1) = (prev[k].position, next[k].position);
        if prev[k].lane == Lane::Ramp && p0 < geometry.merge_point && p1 >= geometry.merge_point {
            Some((geometry.merge_point - p0) / (p1 - p0))
        } else {
            None
        }
    };
    let lane_at = |k: usize, s: f64| -> Lane {
        let pos = prev[k].position + s * (next[k].position - prev[k].position);
        if prev[k].lane == Lane::Main || pos >= geometry.merge_point {
            Lane::Main
        } else {
            Lane::Ramp
        }
    };
    for i in 0..n {
        for j in (i + 1)..n {
            if !prev[i].exists || !prev[j].exists {
                continue;
            }
            let reach = 0.5 * (params[i].length + params[j].length);
            let d0 = prev[i].position - prev[j].position;
            let d1 = next[i].position - next[j].position;
            let mut cuts = vec![0.0, 1.0];
            cuts.extend(merge_fraction(i));
            cuts.extend(merge_fraction(j));
            cuts.sort_by(f64::total_cmp);
            for w in cuts.windows(2) {
                let (s0, s1) = (w[0], w[1]);
                let mid = 0.5 * (s0 + s1);
                let same = if s1 > s0 {
                    lane_at(i, mid) == lane_at(j, mid)
                } else {
                    lane_at(i, s0) == lane_at(j, s0)
                };
                if !same {
                    continue;
                }
                let ga = d0 + s0 * (d1 - d0);
                let gb = d0 + s1 * (d1 - d0);
                let closest = if ga.signum() != gb.signum() || ga == 0.0 || gb == 0.0 {
                    0.0
                } else {
                    ga.abs().min(gb.abs())
                };
                if closest < reach {
                    return true;
                }
            }
        }
    }
    false
}

/// True iff every existing vehicle is at or past the goal point.
pub fn completion_check(states: &[VehicleState], geometry: &RoadGeometry) -> Result<bool> {
    let mut any = false;
    for s in states.iter().filter(|s| s.exists) {
        any = true;
        if s.position < geometry.goal_point {
            return Ok(false);
        }
    }
    if any {
        Ok(true)
    } else {
        Err(Error::Contract("completion check on a fleet with no vehicles".into()))
    }
}

/// Events that feed the reward at one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepEvents {
    pub step_index: usize,
    pub collided: bool,
    pub completed: bool,
}

/// Per-vehicle reward `-1 + r_goal + r_vel + r_col`.
pub fn compute_reward(states: &[VehicleState], events: StepEvents, cfg: &RewardConfig) -> Vec<f64> {
    let goal = if events.completed {
        cfg.goal_bonus * cfg.goal_discount.powi(events.step_index as i32)
    } else {
        0.0
    };
    let col = if events.collided {
        -cfg.collision_penalty
    } else {
        0.0
    };
    states
        .iter()
        .map(|s| {
            let shortfall = (s.velocity - cfg.target_velocity).abs() / cfg.target_velocity;
            let vel = (cfg.velocity_weight * (1.0 - shortfall)).clamp(0.0, cfg.velocity_weight);
            -1.0 + goal + vel + col
        })
        .collect()
}

/// Semi-implicit Euler update of every existing vehicle.
pub fn integrate(
    states: &[VehicleState],
    params: &[VehicleParams],
    actions: &[f64],
    cfg: &EnvConfig,
) -> Vec<VehicleState> {
    let g = &cfg.geometry;
    states
        .iter()
        .zip(params)
        .zip(actions)
        .map(|((s, p), &a)| {
            if !s.exists {
                return *s;
            }
            let accel = p.clip_accel(a);
            let velocity = (s.velocity + accel * cfg.dt).clamp(0.0, cfg.v_max);
            let position = s.position + velocity * cfg.dt;
            let lane = if s.lane == Lane::Ramp && position >= g.merge_point {
                Lane::Main
            } else {
                s.lane
            };
            VehicleState {
                exists: position < g.main_length,
                position,
                velocity,
                lane,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub next_states: Vec<VehicleState>,
    pub rewards: Vec<f64>,
    pub collided: bool,
    pub completed: bool,
    pub timeout: bool,
    pub done: bool,
}

/// Stateful wrapper around the simulator functions.
#[derive(Clone, Debug)]
pub struct MergeEnv {
    config: EnvConfig,
    states: Vec<VehicleState>,
    params: Vec<VehicleParams>,
    step_index: usize,
    finished: bool,
}

impl MergeEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            states: Vec::new(),
            params: Vec::new(),
            step_index: 0,
            finished: true,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn states(&self) -> &[VehicleState] {
        &self.states
    }

    pub fn params(&self) -> &[VehicleParams] {
        &self.params
    }

    /// Steps taken since the last reset.
    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Places the fleet. Main vehicles take indices `0..n_main`, ramp
    /// vehicles follow.
    pub fn reset(&mut self, seed: u64) -> Result<&[VehicleState]> {
        let (states, params) = initial_fleet(&self.config, seed)?;
        self.states = states;
        self.params = params;
        self.step_index = 0;
        self.finished = false;
        Ok(&self.states)
    }

    /// Installs an explicit fleet, bypassing random placement.
    pub fn reset_to(&mut self, states: Vec<VehicleState>, params: Vec<VehicleParams>) -> Result<()> {
        if states.len() != self.config.n_vehicles || params.len() != states.len() {
            return Err(Error::Contract(format!(
                "expected {} vehicles, got {} states / {} params",
                self.config.n_vehicles,
                states.len(),
                params.len()
            )));
        }
        self.states = states;
        self.params = params;
        self.step_index = 0;
        self.finished = false;
        Ok(())
    }

    pub fn step(&mut self, actions: &[f64]) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        if actions.len() != self.states.len() {
            return Err(Error::Contract(format!(
                "expected {} actions, got {}",
                self.states.len(),
                actions.len()
            )));
        }
        let g = &self.config.geometry;
        let next = integrate(&self.states, &self.params, actions, &self.config);
        let collided = swept_collision_check(&self.states, &next, &self.params, g);
        let completed = if next.iter().any(|s| s.exists) {
            completion_check(&next, g)?
        } else {
            true
        };
        let events = StepEvents {
            step_index: self.step_index,
            collided,
            completed,
        };
        let rewards = compute_reward(&next, events, &self.config.reward);
        self.step_index += 1;
        let timeout = self.step_index >= self.config.max_steps;
        let done = collided || completed || timeout;
        self.states = next.clone();
        self.finished = done;
        Ok(StepOutcome {
            next_states: next,
            rewards,
            collided,
            completed,
            timeout,
            done,
        })
    }
}

/// Random initial placement satisfying the minimum same-lane headway.
pub fn initial_fleet(cfg: &EnvConfig, seed: u64) -> Result<(Vec<VehicleState>, Vec<VehicleParams>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(cfg.n_vehicles);
    positions.extend(place_lane(&mut rng, cfg.main_spawn, cfg.n_main(), cfg.min_headway)?);
    positions.extend(place_lane(&mut rng, cfg.ramp_spawn, cfg.n_ramp, cfg.min_headway)?);
    let (vlo, vhi) = cfg.init_velocity;
    let mut states = Vec::with_capacity(cfg.n_vehicles);
    let mut params = Vec::with_capacity(cfg.n_vehicles);
    for (k, &position) in positions.iter().enumerate() {
        let lane = if k < cfg.n_main() { Lane::Main } else { Lane::Ramp };
        let velocity = if vhi > vlo { rng.random_range(vlo..=vhi) } else { vlo };
        states.push(VehicleState::new(position, velocity, lane));
        let choice = rng.random_range(0..cfg.accel_max_choices.len());
        params.push(VehicleParams {
            accel_min: cfg.accel_min,
            accel_max: cfg.accel_max_choices[choice],
            length: cfg.vehicle_length,
        });
    }
    Ok((states, params))
}

fn place_lane(rng: &mut ChaCha8Rng, window: (f64, f64), count: usize, headway: f64) -> Result<Vec<f64>> {
    const ATTEMPTS: usize = 10_000;
    if count == 0 {
        return Ok(Vec::new());
    }
    let (lo, hi) = window;
    for _ in 0..ATTEMPTS {
        let mut pos: Vec<f64> = (0..count)
            .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect();
        pos.sort_by(f64::total_cmp);
        if pos.windows(2).all(|w| w[1] - w[0] >= headway) {
            // rear vehicle first keeps indices ordered back to front
            return Ok(pos);
        }
    }
    Err(Error::Config(format!(
        "could not place {count} vehicles in {lo}..{hi} with headway {headway}"
    )))
}
