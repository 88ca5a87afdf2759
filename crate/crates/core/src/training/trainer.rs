use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::transition::{perturbable_index, FaultTransition, VehicleTransition};
use super::updates::{critic_loss, injector_actor_loss, td_targets, vehicle_actor_loss, ActorBatch};
use super::{injector_input, live_fault, observation_table, FaultSource, ReplayBuffer, TrainConfig};
use crate::agents::{
    critic_input, eval_injector_critic, new_vehicle_critic, FaultInjector, PolicyMode, ReconMode,
    TemporalSequence, VehicleAgent,
};
use crate::env::{EnvConfig, MergeEnv, NUM_SLOTS};
use crate::error::{Error, Result};
use crate::checkpoint::Checkpoint;
use crate::nn::{soft_update, Adam, Mlp, Module, NamedArray};
use crate::observation::{
    global_input_dim, observe_fleet, perturb_observations, sample_fault_config, FaultConfig, OBS_DIM, PERTURB_DIM,
    PERTURB_SCALE,
};

/// Mean losses of the update cycles run during one episode; `None` when
/// that update never ran.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSummary {
    pub temporal: Option<f64>,
    pub critic: Option<f64>,
    pub actor: Option<f64>,
    pub fault_critic: Option<f64>,
    pub fault_actor: Option<f64>,
}

#[derive(Default)]
struct LossAccumulator {
    sums: [f64; 5],
    counts: [usize; 5],
}

impl LossAccumulator {
    fn add(&mut self, k: usize, v: f64) {
        self.sums[k] += v;
        self.counts[k] += 1;
    }

    fn summary(&self) -> LossSummary {
        let m = |k: usize| (self.counts[k] > 0).then(|| self.sums[k] / self.counts[k] as f64);
        LossSummary {
            temporal: m(0),
            critic: m(1),
            actor: m(2),
            fault_critic: m(3),
            fault_actor: m(4),
        }
    }
}

/// One row of the training metric log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub collided: bool,
    pub completion_steps: usize,
    pub fault_active_steps: usize,
    pub losses: LossSummary,
}

impl EpisodeLog {
    pub fn csv_header(n_vehicles: usize) -> String {
        let mut cols = vec!["episode".to_string()];
        cols.extend((1..=n_vehicles).map(|i| format!("return_v{i}")));
        cols.extend(
            [
                "mean_return",
                "collided",
                "completion_steps",
                "fault_active_steps",
                "loss_temporal",
                "loss_critic",
                "loss_actor",
                "loss_fault_critic",
                "loss_fault_actor",
            ]
            .map(String::from),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.9e}")).unwrap_or_default();
        let mut cols = vec![self.episode.to_string()];
        cols.extend(self.returns.iter().map(|r| format!("{r:.9}")));
        cols.push(format!("{:.9}", self.mean_return));
        cols.push(u8::from(self.collided).to_string());
        cols.push(self.completion_steps.to_string());
        cols.push(self.fault_active_steps.to_string());
        let l = &self.losses;
        cols.extend([l.temporal, l.critic, l.actor, l.fault_critic, l.fault_actor].map(opt));
        cols.join(",")
    }
}

/// Parameter fingerprint after one update cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateRecord {
    pub total_steps: u64,
    pub checksum: u64,
}

/// Joint training of the vehicle agent and the fault injector.
#[derive(Clone, Debug)]
pub struct Trainer {
    env_cfg: EnvConfig,
    cfg: TrainConfig,
    mode: PolicyMode,
    source: FaultSource,
    env: MergeEnv,
    agent: VehicleAgent,
    target_policy: Mlp,
    critics: Vec<Mlp>,
    critic_targets: Vec<Mlp>,
    critic_opts: Vec<Adam>,
    policy_opt: Adam,
    temporal_opt: Option<Adam>,
    injector: FaultInjector,
    injector_target: FaultInjector,
    injector_actor_opt: Adam,
    injector_critic_opt: Adam,
    vehicle_buffer: ReplayBuffer<VehicleTransition>,
    fault_buffer: ReplayBuffer<FaultTransition>,
    rng: ChaCha8Rng,
    episode: usize,
    total_steps: u64,
    trace: Vec<UpdateRecord>,
}

fn check_finite(name: &str, value: f64, episode: usize, total_steps: u64, extra: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{name} loss is {value} at episode {episode}, step {total_steps}; {extra}"
        )))
    }
}

fn rows_of(batch: &[&VehicleTransition], field: impl Fn(&VehicleTransition) -> &[f64]) -> Array2<f64> {
    let width = field(batch[0]).len();
    let mut out = Array2::zeros((batch.len(), width));
    for (r, t) in batch.iter().enumerate() {
        out.row_mut(r).assign(&ndarray::ArrayView1::from(field(t)));
    }
    out
}

impl Trainer {
    pub fn new(env_cfg: EnvConfig, cfg: TrainConfig, mode: PolicyMode, source: FaultSource, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let env = MergeEnv::new(env_cfg.clone())?;
        let n = env_cfg.n_vehicles;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = VehicleAgent::new(mode, &cfg.network, &mut rng);
        let critics: Vec<Mlp> = (0..n)
            .map(|_| new_vehicle_critic(n, &cfg.network.hidden, &mut rng))
            .collect();
        let injector = FaultInjector::new(n, &cfg.network.hidden, cfg.budget, &mut rng);
        Ok(Self {
            target_policy: agent.policy.clone(),
            critic_targets: critics.clone(),
            critic_opts: critics.iter().map(|c| Adam::new(c, cfg.lr_critic)).collect(),
            policy_opt: Adam::new(&agent.policy, cfg.lr_actor),
            temporal_opt: agent.temporal.as_ref().map(|t| Adam::new(t, cfg.lr_temporal)),
            injector_target: injector.clone(),
            injector_actor_opt: Adam::new(&injector.actor, cfg.lr_actor),
            injector_critic_opt: Adam::new(&injector.critic, cfg.lr_critic),
            vehicle_buffer: ReplayBuffer::new(cfg.vehicle_capacity)?,
            fault_buffer: ReplayBuffer::new(cfg.fault_capacity)?,
            agent,
            critics,
            injector,
            env,
            env_cfg,
            cfg,
            mode,
            source,
            rng,
            episode: 0,
            total_steps: 0,
            trace: Vec::new(),
        })
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_cfg
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn mode(&self) -> PolicyMode {
        self.mode
    }

    pub fn source(&self) -> FaultSource {
        self.source
    }

    pub fn agent(&self) -> &VehicleAgent {
        &self.agent
    }

    pub fn critics(&self) -> &[Mlp] {
        &self.critics
    }

    pub fn injector(&self) -> &FaultInjector {
        &self.injector
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn vehicle_buffer(&self) -> &ReplayBuffer<VehicleTransition> {
        &self.vehicle_buffer
    }

    pub fn fault_buffer(&self) -> &ReplayBuffer<FaultTransition> {
        &self.fault_buffer
    }

    /// Records of every update cycle run by this instance.
    pub fn update_trace(&self) -> &[UpdateRecord] {
        &self.trace
    }

    /// Installs a pretrained vehicle agent (both live and target copies).
    pub fn set_agent(&mut self, agent: VehicleAgent) -> Result<()> {
        if agent.mode != self.mode || agent.policy.input_dim() != self.agent.policy.input_dim() {
            return Err(Error::Contract(format!(
                "agent of mode {} does not fit a {} trainer",
                agent.mode, self.mode
            )));
        }
        self.target_policy = agent.policy.clone();
        self.policy_opt = Adam::new(&agent.policy, self.cfg.lr_actor);
        self.temporal_opt = agent.temporal.as_ref().map(|t| Adam::new(t, self.cfg.lr_temporal));
        self.agent = agent;
        Ok(())
    }

    /// Fingerprint of every live and target parameter.
    pub fn parameter_checksum(&self) -> u64 {
        let mut h = self.agent.checksum() ^ self.target_policy.checksum().rotate_left(3);
        for (k, (c, t)) in self.critics.iter().zip(&self.critic_targets).enumerate() {
            h = h.rotate_left(5) ^ c.checksum() ^ t.checksum().rotate_left(11 + k as u32);
        }
        h.rotate_left(13) ^ self.injector.checksum() ^ self.injector_target.checksum().rotate_left(29)
    }

    /// Complete training state at an episode boundary: every network and
    /// target, optimizer moments, both replay buffers and the RNG.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut a = vec![
            NamedArray::scalar("meta.mode", self.mode.code()),
            NamedArray::scalar("meta.source", self.source.code()),
            NamedArray::scalar("meta.episode", self.episode as f64),
            NamedArray::scalar("meta.total_steps", f64::from_bits(self.total_steps)),
        ];
        let seed = self.rng.get_seed();
        let words: Vec<f64> = seed
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        a.push(NamedArray::new("rng.seed", vec![4], words));
        a.push(NamedArray::scalar("rng.stream", f64::from_bits(self.rng.get_stream())));
        let pos = self.rng.get_word_pos();
        a.push(NamedArray::new(
            "rng.word_pos",
            vec![2],
            vec![f64::from_bits(pos as u64), f64::from_bits((pos >> 64) as u64)],
        ));
        a.extend(self.agent.to_arrays("agent"));
        a.extend(self.target_policy.to_arrays("target_policy"));
        a.extend(self.policy_opt.to_arrays("opt.policy"));
        if let Some(opt) = &self.temporal_opt {
            a.extend(opt.to_arrays("opt.temporal"));
        }
        for i in 0..self.critics.len() {
            a.extend(self.critics[i].to_arrays(&format!("critic{i}")));
            a.extend(self.critic_targets[i].to_arrays(&format!("critic_target{i}")));
            a.extend(self.critic_opts[i].to_arrays(&format!("opt.critic{i}")));
        }
        a.extend(self.injector.to_arrays("injector"));
        a.extend(self.injector_target.to_arrays("injector_target"));
        a.extend(self.injector_actor_opt.to_arrays("opt.injector_actor"));
        a.extend(self.injector_critic_opt.to_arrays("opt.injector_critic"));
        let n = self.env_cfg.n_vehicles;
        let width = VehicleTransition::encoded_width(n, self.hidden_dim());
        let mut data = Vec::with_capacity(self.vehicle_buffer.len() * width);
        self.vehicle_buffer.iter().for_each(|t| t.encode(&mut data));
        a.push(NamedArray::new("buffer.vehicle", vec![self.vehicle_buffer.len(), width], data));
        let width = FaultTransition::encoded_width(global_input_dim(n));
        let mut data = Vec::with_capacity(self.fault_buffer.len() * width);
        self.fault_buffer.iter().for_each(|t| t.encode(&mut data));
        a.push(NamedArray::new("buffer.fault", vec![self.fault_buffer.len(), width], data));
        Checkpoint::new(a)
    }

    /// Rebuilds a trainer from [`Trainer::to_checkpoint`] output. The
    /// configurations must be the ones the checkpoint was written with.
    pub fn from_checkpoint(env_cfg: EnvConfig, cfg: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mode = PolicyMode::from_code(ck.scalar("meta.mode")?)?;
        let source = match ck.scalar("meta.source")? as i64 {
            0 => FaultSource::None,
            1 => FaultSource::Random,
            2 => FaultSource::Adversarial,
            other => return Err(Error::Checkpoint(format!("unknown fault source code {other}"))),
        };
        let mut t = Self::new(env_cfg, cfg, mode, source, 0)?;
        let arrays = &ck.arrays;
        t.agent.load_arrays("agent", arrays)?;
        t.target_policy.load_arrays("target_policy", arrays)?;
        t.policy_opt.load_arrays("opt.policy", arrays)?;
        if let Some(opt) = &mut t.temporal_opt {
            opt.load_arrays("opt.temporal", arrays)?;
        }
        for i in 0..t.critics.len() {
            t.critics[i].load_arrays(&format!("critic{i}"), arrays)?;
            t.critic_targets[i].load_arrays(&format!("critic_target{i}"), arrays)?;
            t.critic_opts[i].load_arrays(&format!("opt.critic{i}"), arrays)?;
        }
        t.injector.load_arrays("injector", arrays)?;
        t.injector_target.load_arrays("injector_target", arrays)?;
        t.injector_actor_opt.load_arrays("opt.injector_actor", arrays)?;
        t.injector_critic_opt.load_arrays("opt.injector_critic", arrays)?;
        let n = t.env_cfg.n_vehicles;
        let hdim = t.hidden_dim();
        let vb = ck.get("buffer.vehicle")?;
        let width = VehicleTransition::encoded_width(n, hdim);
        if vb.shape.len() != 2 || vb.shape[1] != width {
            return Err(Error::Shape {
                name: vb.name.clone(),
                expected: vec![vb.shape.first().copied().unwrap_or(0), width],
                found: vb.shape.clone(),
            });
        }
        let items = vb
            .data
            .chunks_exact(width)
            .map(|c| VehicleTransition::decode(c, n, hdim))
            .collect::<Result<Vec<_>>>()?;
        t.vehicle_buffer = ReplayBuffer::from_items(t.cfg.vehicle_capacity, items)?;
        let fb = ck.get("buffer.fault")?;
        let xdim = global_input_dim(n);
        let width = FaultTransition::encoded_width(xdim);
        if fb.shape.len() != 2 || fb.shape[1] != width {
            return Err(Error::Shape {
                name: fb.name.clone(),
                expected: vec![fb.shape.first().copied().unwrap_or(0), width],
                found: fb.shape.clone(),
            });
        }
        let items = fb
            .data
            .chunks_exact(width)
            .map(|c| FaultTransition::decode(c, xdim))
            .collect::<Result<Vec<_>>>()?;
        t.fault_buffer = ReplayBuffer::from_items(t.cfg.fault_capacity, items)?;
        let seed_words = &ck.get("rng.seed")?.data;
        if seed_words.len() != 4 {
            return Err(Error::Checkpoint("rng.seed must hold 4 words".into()));
        }
        let mut seed = [0u8; 32];
        for (k, w) in seed_words.iter().enumerate() {
            seed[8 * k..8 * k + 8].copy_from_slice(&w.to_bits().to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(ck.scalar("rng.stream")?.to_bits());
        let pos = &ck.get("rng.word_pos")?.data;
        if pos.len() != 2 {
            return Err(Error::Checkpoint("rng.word_pos must hold 2 words".into()));
        }
        rng.set_word_pos(u128::from(pos[0].to_bits()) | (u128::from(pos[1].to_bits()) << 64));
        t.rng = rng;
        t.episode = ck.scalar("meta.episode")? as usize;
        t.total_steps = ck.scalar("meta.total_steps")?.to_bits();
        Ok(t)
    }

    fn hidden_dim(&self) -> usize {
        self.agent.hidden_dim()
    }

    fn exploration_sigma(&self) -> f64 {
        // unit actions span [-1, 1]
        2.0 * self.cfg.noise_fraction(self.episode)
    }

    /// Runs `count` further episodes, handing each log row to `on_episode`.
    pub fn run<F: FnMut(&EpisodeLog)>(&mut self, count: usize, mut on_episode: F) -> Result<Vec<EpisodeLog>> {
        let mut logs = Vec::with_capacity(count);
        for _ in 0..count {
            let log = self.run_episode()?;
            on_episode(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    /// One episode of Algorithm-1 style interaction and updates.
    pub fn run_episode(&mut self) -> Result<EpisodeLog> {
        let n = self.env_cfg.n_vehicles;
        let seed: u64 = self.rng.random();
        self.env.reset(seed)?;
        let fault_cfg = match self.source {
            FaultSource::None => FaultConfig::inactive(),
            _ => sample_fault_config(&mut self.rng, self.env.states(), &self.cfg.schedule, self.env_cfg.max_steps),
        };
        let sigma = self.exploration_sigma();
        let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let mut hidden = self.agent.zero_hidden(n);
        let mut recon_slots = vec![0usize; n];
        let mut returns = vec![0.0; n];
        let mut losses = LossAccumulator::default();
        let mut fault_steps = 0;
        let mut collided = false;
        let mut steps = 0;
        let (mut arrays, mut obs) = observe_fleet(self.env.states());
        loop {
            let t = self.env.step_index();
            let states = self.env.states().to_vec();
            let params = self.env.params().to_vec();
            let table = observation_table(&obs);
            let fault = live_fault(&fault_cfg, t, &states, &arrays);
            let mut b = [0.0; PERTURB_DIM];
            let mut x = Vec::new();
            if let Some(f) = fault {
                fault_steps += 1;
                recon_slots[f.recipient] = f.target_slot;
                x = injector_input(&table, f.recipient, f.target_slot)?;
                b = match self.source {
                    FaultSource::Adversarial => {
                        let nz = [noise_draw(&mut self.rng, sigma), noise_draw(&mut self.rng, sigma)];
                        self.injector.fault_act(&x, nz)?
                    }
                    FaultSource::Random => {
                        let eps = self.cfg.budget.epsilon;
                        [self.rng.random_range(-eps[0]..=eps[0]), self.rng.random_range(-eps[1]..=eps[1])]
                    }
                    FaultSource::None => b,
                };
            }
            let obs_hat = perturb_observations(&obs, fault, b, &self.cfg.budget)?;
            let hat_table = observation_table(&obs_hat);
            let hat_view = ndarray::ArrayView2::from_shape((n, OBS_DIM), &hat_table).expect("table shape");
            let action_noise: Vec<f64> = if self.cfg.freeze_vehicles {
                vec![0.0; n]
            } else {
                (0..n).map(|_| noise.sample(&mut self.rng)).collect()
            };
            let out = self.agent.act(hat_view, hidden.view(), &params, &action_noise)?;
            let next_hidden = match &out.temporal {
                Some(step) => step.hidden.clone(),
                None => hidden.clone(),
            };
            let outcome = self.env.step(&out.actions)?;
            let (next_arrays, next_obs) = observe_fleet(&outcome.next_states);
            let next_table = observation_table(&next_obs);
            let next_fault = live_fault(&fault_cfg, t + 1, &outcome.next_states, &next_arrays);
            let terminal = outcome.collided || outcome.completed;
            for (acc, r) in returns.iter_mut().zip(&outcome.rewards) {
                *acc += r;
            }
            if let (Some(f), FaultSource::Adversarial) = (fault, self.source) {
                self.fault_buffer.store(FaultTransition {
                    next_x: injector_input(&next_table, f.recipient, f.target_slot)?,
                    x,
                    b,
                    reward: super::fault_reward(&outcome.rewards),
                    continues: !terminal && next_fault.is_some(),
                });
            }
            if !self.cfg.freeze_vehicles {
                self.vehicle_buffer.store(VehicleTransition {
                    episode: self.episode as u64,
                    step: t,
                    obs: table,
                    obs_hat: hat_table,
                    actions: out.actions.clone(),
                    accel_min: params.iter().map(|p| p.accel_min).collect(),
                    accel_max: params.iter().map(|p| p.accel_max).collect(),
                    rewards: outcome.rewards.clone(),
                    next_obs: next_table,
                    terminal,
                    fault,
                    next_fault,
                    recon_slots: recon_slots.clone(),
                    hidden: hidden.iter().copied().collect(),
                    next_hidden: next_hidden.iter().copied().collect(),
                });
            }
            self.total_steps += 1;
            if self.total_steps % self.cfg.update_every as u64 == 0 {
                self.update_cycle(&mut losses)?;
            }
            hidden = next_hidden;
            arrays = next_arrays;
            obs = next_obs;
            steps += 1;
            collided |= outcome.collided;
            if outcome.done {
                break;
            }
        }
        let log = EpisodeLog {
            episode: self.episode,
            mean_return: returns.iter().sum::<f64>() / n as f64,
            returns,
            collided,
            completion_steps: steps,
            fault_active_steps: fault_steps,
            losses: losses.summary(),
        };
        self.episode += 1;
        Ok(log)
    }

    /// Runs one update cycle on the current buffers, outside the step
    /// cadence. Does nothing until a buffer holds a full batch.
    pub fn update_now(&mut self) -> Result<LossSummary> {
        let mut losses = LossAccumulator::default();
        self.update_cycle(&mut losses)?;
        Ok(losses.summary())
    }

    fn update_cycle(&mut self, losses: &mut LossAccumulator) -> Result<()> {
        let k = self.cfg.batch_size;
        let vehicles_ready = !self.cfg.freeze_vehicles && self.vehicle_buffer.len() >= k;
        let injector_ready = self.source == FaultSource::Adversarial && self.fault_buffer.len() >= k;
        if vehicles_ready {
            self.update_vehicles(losses)?;
        }
        if injector_ready {
            self.update_injector(losses)?;
        }
        let tau = self.cfg.tau;
        if vehicles_ready {
            for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
                soft_update(t, c, tau);
            }
            soft_update(&mut self.target_policy, &self.agent.policy, tau);
        }
        if injector_ready {
            soft_update(&mut self.injector_target.actor, &self.injector.actor, tau);
            soft_update(&mut self.injector_target.critic, &self.injector.critic, tau);
        }
        if vehicles_ready || injector_ready {
            self.trace.push(UpdateRecord {
                total_steps: self.total_steps,
                checksum: self.parameter_checksum(),
            });
        }
        Ok(())
    }

    /// Rebuilds `ô′` for sampled transitions from the stored next-step fault
    /// using the current perturbation source.
    fn rebuild_next_perturbed(&mut self, batch: &[&VehicleTransition]) -> Result<Array2<f64>> {
        let mut out = rows_of(batch, |t| &t.next_obs);
        let faulted: Vec<usize> = (0..batch.len()).filter(|&r| batch[r].next_fault.is_some()).collect();
        if faulted.is_empty() {
            return Ok(out);
        }
        let units: Array2<f64> = match self.source {
            FaultSource::None => Array2::zeros((faulted.len(), PERTURB_DIM)),
            FaultSource::Random => Array2::from_shape_simple_fn((faulted.len(), PERTURB_DIM), || {
                self.rng.random_range(-1.0..=1.0)
            }),
            FaultSource::Adversarial => {
                let mut xs = Array2::zeros((faulted.len(), self.injector.input_dim()));
                for (row, &r) in faulted.iter().enumerate() {
                    let f = batch[r].next_fault.expect("filtered");
                    let x = injector_input(&batch[r].next_obs, f.recipient, f.target_slot)?;
                    xs.row_mut(row).assign(&Array1::from(x));
                }
                self.injector.unit_actions(xs.view())
            }
        };
        let eps = self.cfg.budget.epsilon;
        for (row, &r) in faulted.iter().enumerate() {
            let f = batch[r].next_fault.expect("filtered");
            for d in 0..PERTURB_DIM {
                let b = eps[d] * units[[row, d]];
                out[[r, perturbable_index(f.recipient, f.target_slot, d)]] += b / PERTURB_SCALE[d];
            }
        }
        Ok(out)
    }

    fn update_vehicles(&mut self, losses: &mut LossAccumulator) -> Result<()> {
        let n = self.env_cfg.n_vehicles;
        let k = self.cfg.batch_size;
        let hdim = self.hidden_dim();
        let scale = self.env_cfg.accel_scale();
        let indices = self.vehicle_buffer.sample_indices(k, &mut self.rng)?;
        let buffer = std::mem::replace(&mut self.vehicle_buffer, ReplayBuffer::new(1)?);
        let batch: Vec<&VehicleTransition> = indices.iter().map(|&i| buffer.get(i).expect("sampled")).collect();
        let result = self.update_vehicles_on(&buffer, &indices, &batch, n, hdim, scale, losses);
        self.vehicle_buffer = buffer;
        result
    }

    #[allow(clippy::too_many_arguments)]
    fn update_vehicles_on(
        &mut self,
        buffer: &ReplayBuffer<VehicleTransition>,
        indices: &[usize],
        batch: &[&VehicleTransition],
        n: usize,
        hdim: usize,
        scale: f64,
        losses: &mut LossAccumulator,
    ) -> Result<()> {
        let (episode, steps) = (self.episode, self.total_steps);
        let k = batch.len();
        let obs_hat_next = self.rebuild_next_perturbed(batch)?;

        // temporal network
        if self.agent.temporal.is_some() {
            let seq = temporal_sequence(buffer, indices, n, self.cfg.bptt_window, hdim, self.cfg.network.recon);
            let net = self.agent.temporal.as_mut().expect("checked");
            let (loss, grads) = net.sequence_loss(&seq);
            check_finite("temporal", loss, episode, steps, "")?;
            self.temporal_opt.as_mut().expect("temporal optimizer").step(net, &grads);
            losses.add(0, loss);
        }

        let rewards = rows_of(batch, |t| &t.rewards);
        let not_done = Array1::from_iter(batch.iter().map(|t| if t.terminal { 0.0 } else { 1.0 }));
        let amin = rows_of(batch, |t| &t.accel_min);
        let amax = rows_of(batch, |t| &t.accel_max);
        let low_scaled = &amin / scale;
        let half_scaled = (&amax - &amin) * (0.5 / scale);

        // target actions from the perturbed next observations
        let next_rows = obs_hat_next
            .clone()
            .into_shape_with_order((k * n, OBS_DIM))
            .expect("row split");
        let next_hidden = rows_of(batch, |t| &t.next_hidden)
            .into_shape_with_order((k * n, hdim))
            .expect("row split");
        let next_temporal = self.agent.temporal_forward(next_rows.view(), next_hidden.view())?;
        let next_in = self.agent.policy_input(next_rows.view(), next_temporal.as_ref());
        let next_u = self
            .target_policy
            .predict(next_in.view())
            .into_shape_with_order((k, n))
            .expect("row merge");
        let next_actions = &low_scaled + &((&next_u + 1.0) * &half_scaled);

        let truth = self.mode.critic_sees_truth();
        let obs_now = if truth { rows_of(batch, |t| &t.obs) } else { rows_of(batch, |t| &t.obs_hat) };
        let obs_next = if truth { rows_of(batch, |t| &t.next_obs) } else { obs_hat_next };
        let actions_scaled = rows_of(batch, |t| &t.actions) / scale;
        let inputs = critic_input(obs_now.view(), actions_scaled.view());
        let next_inputs = critic_input(obs_next.view(), next_actions.view());
        let mut critic_sum = 0.0;
        for i in 0..n {
            let next_q = self.critic_targets[i].predict(next_inputs.view()).column(0).to_owned();
            let y = td_targets(rewards.column(i), not_done.view(), next_q.view(), self.cfg.gamma);
            let (loss, grads) = critic_loss(&self.critics[i], inputs.view(), y.view());
            check_finite("vehicle critic", loss, episode, steps, &format!("critic {i}"))?;
            self.critic_opts[i].step(&mut self.critics[i], &grads);
            critic_sum += loss;
        }
        losses.add(1, critic_sum / n as f64);

        // shared policy through every vehicle's critic
        let hat_rows = rows_of(batch, |t| &t.obs_hat)
            .into_shape_with_order((k * n, OBS_DIM))
            .expect("row split");
        let hidden_rows = rows_of(batch, |t| &t.hidden)
            .into_shape_with_order((k * n, hdim))
            .expect("row split");
        let temporal = self.agent.temporal_forward(hat_rows.view(), hidden_rows.view())?;
        let all_in = self.agent.policy_input(hat_rows.view(), temporal.as_ref());
        let width = all_in.ncols();
        let all_in = all_in
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((k, n, width)).expect("row merge");
        let policy_inputs = (0..n).map(|i| all_in.index_axis(Axis(1), i).to_owned()).collect();
        let actor_batch = ActorBatch {
            policy_inputs,
            critic_obs: obs_now,
            actions_scaled,
            accel_low_scaled: low_scaled,
            half_range_scaled: half_scaled,
        };
        let vehicles: Vec<usize> = (0..n).collect();
        let (loss, grads) = vehicle_actor_loss(&self.agent.policy, &self.critics, &vehicles, &actor_batch);
        check_finite("vehicle actor", loss, episode, steps, "")?;
        self.policy_opt.step(&mut self.agent.policy, &grads);
        losses.add(2, loss);
        Ok(())
    }

    fn update_injector(&mut self, losses: &mut LossAccumulator) -> Result<()> {
        let (episode, steps) = (self.episode, self.total_steps);
        let batch = self.fault_buffer.sample(self.cfg.batch_size, &mut self.rng)?;
        let rows = batch.len();
        let dim = self.injector.input_dim();
        let mut x = Array2::zeros((rows, dim));
        let mut x_next = Array2::zeros((rows, dim));
        let mut b = Array2::zeros((rows, PERTURB_DIM));
        for (r, t) in batch.iter().enumerate() {
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&t.x[..]));
            x_next.row_mut(r).assign(&ndarray::ArrayView1::from(&t.next_x[..]));
            b.row_mut(r).assign(&ndarray::ArrayView1::from(&t.b[..]));
        }
        let reward = Array1::from_iter(batch.iter().map(|t| t.reward));
        let cont = Array1::from_iter(batch.iter().map(|t| if t.continues { 1.0 } else { 0.0 }));
        let eps = Array1::from(self.cfg.budget.epsilon.to_vec());
        let b_next = self.injector_target.unit_actions(x_next.view()) * &eps;
        let (q_next, _) = eval_injector_critic(&self.injector_target.critic, &self.cfg.budget, x_next.view(), b_next.view());
        let y = td_targets(reward.view(), cont.view(), q_next.view(), self.cfg.gamma);
        let inputs = self.injector.critic_input(x.view(), b.view());
        let (loss, grads) = critic_loss(&self.injector.critic, inputs.view(), y.view());
        check_finite("fault critic", loss, episode, steps, "")?;
        self.injector_critic_opt.step(&mut self.injector.critic, &grads);
        losses.add(3, loss);
        let (loss, grads) = injector_actor_loss(&self.injector.actor, &self.injector.critic, x.view());
        check_finite("fault actor", loss, episode, steps, "")?;
        self.injector_actor_opt.step(&mut self.injector.actor, &grads);
        losses.add(4, loss);
        Ok(())
    }
}

/// Windows of consecutive transitions ending at each sampled index, one
/// row per (sample, vehicle).
fn temporal_sequence(
    buffer: &ReplayBuffer<VehicleTransition>,
    indices: &[usize],
    n: usize,
    w: usize,
    hdim: usize,
    recon: ReconMode,
) -> TemporalSequence {
    let rows = indices.len() * n;
    let mut inputs = vec![Array2::zeros((rows, OBS_DIM)); w];
    let mut mask = vec![Array1::zeros(rows); w];
    let mut prob_targets = vec![Array2::zeros((rows, NUM_SLOTS)); w];
    let mut recon_targets = vec![Array2::zeros((rows, recon.dim())); w];
    let mut h0 = Array2::zeros((rows, hdim));
    for (s, &idx) in indices.iter().enumerate() {
        let last = buffer.get(idx).expect("sampled index");
        let mut chain = vec![last];
        while chain.len() < w {
            let age = idx + 1 - chain.len();
            if age == 0 {
                break;
            }
            let prev = buffer.get(age - 1).expect("older index");
            let head = chain.last().expect("non-empty");
            if prev.episode != head.episode || prev.step + 1 != head.step {
                break;
            }
            chain.push(prev);
        }
        chain.reverse();
        let pad = w - chain.len();
        for i in 0..n {
            let row = s * n + i;
            h0.row_mut(row)
                .assign(&ndarray::ArrayView1::from(&chain[0].hidden[i * hdim..(i + 1) * hdim]));
            for (c, tr) in chain.iter().enumerate() {
                let step = pad + c;
                mask[step][row] = 1.0;
                inputs[step]
                    .row_mut(row)
                    .assign(&ndarray::ArrayView1::from(&tr.obs_hat[i * OBS_DIM..(i + 1) * OBS_DIM]));
                prob_targets[step].row_mut(row).assign(&Array1::from(tr.prob_targets(i).to_vec()));
                recon_targets[step].row_mut(row).assign(&Array1::from(tr.recon_target(i, recon)));
            }
        }
    }
    TemporalSequence {
        inputs,
        mask,
        h0,
        prob_targets,
        recon_targets,
    }
}

fn noise_draw(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}
