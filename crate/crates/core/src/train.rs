//! Training-data synthesis, the replay buffer and the training loop.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use tensornet::{sgd_step, Architecture, FeatureMode, LstmConfig, Network};

use crate::control::{ClosedLoop, ControllerKind, LqrWeights, SafetySpec};
use crate::features::{feature_spec, fit_normalizer, window_features};
use crate::quadsim::{
    simulate, step_rk4, FaultSchedule, FaultVector, Output, QuadParams, SimConfig, State, Trajectory, INPUT_DIM,
    OUTPUT_DIM,
};
use crate::rng::substream;
use crate::window::{slice_windows, TrajectoryWindow};
use crate::{Error, Result};

/// Initial conditions: position uniform in a ball, Euler angles and body
/// rates uniform in symmetric boxes, zero velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialStateSampler {
    pub position_radius: f64,
    pub angle_bound: f64,
    pub rate_bound: f64,
}

impl Default for InitialStateSampler {
    fn default() -> Self {
        InitialStateSampler { position_radius: 0.5, angle_bound: 0.2, rate_bound: 0.2 }
    }
}

impl InitialStateSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> State {
        let mut x = State::hover();
        let r = self.position_radius;
        loop {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-r..=r));
            if p.iter().map(|v| v * v).sum::<f64>() <= r * r {
                x.0[..3].copy_from_slice(&p);
                break;
            }
        }
        for i in 6..9 {
            x.0[i] = rng.random_range(-self.angle_bound..=self.angle_bound);
        }
        for i in 9..12 {
            x.0[i] = rng.random_range(-self.rate_bound..=self.rate_bound);
        }
        x
    }
}

/// Everything needed to produce closed-loop rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Parameters of the simulated vehicle (and of the controller design).
    pub params: QuadParams,
    /// Parameters of the reference model used for residuals.
    pub reference: QuadParams,
    pub sim: SimConfig,
    pub controller: ControllerKind,
    pub lqr: LqrWeights,
    pub safety: SafetySpec,
    pub initial: InitialStateSampler,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            params: QuadParams::nominal(),
            reference: QuadParams::nominal(),
            sim: SimConfig::default(),
            controller: ControllerKind::Lqr,
            lqr: LqrWeights::default(),
            safety: SafetySpec::default(),
            initial: InitialStateSampler::default(),
        }
    }
}

impl Scenario {
    pub fn design(&self) -> Result<ClosedLoop> {
        ClosedLoop::design(self.controller, &self.params, self.sim.convention, &self.lqr, &self.safety)
    }
}

/// One-step resynchronized residuals: `ỹ(k) = y(k) − ρ(F(x(k−1), u(k−1)))`,
/// where `F` advances the reference model by one sample under the commanded
/// input. `ỹ(0) = 0`.
pub fn generate_residuals(traj: &Trajectory, reference: &QuadParams, sim: &SimConfig) -> Result<Vec<Output>> {
    let mut out = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        if k == 0 {
            out.push(Output([0.0; OUTPUT_DIM]));
            continue;
        }
        let pred = step_rk4(&traj.states[k - 1], &traj.inputs[k - 1], reference, sim.dt, sim.convention);
        if !pred.is_finite() {
            return Err(Error::Numeric(format!("reference model diverged at sample {k}")));
        }
        let (y, yr) = (traj.states[k].output(), pred.output());
        out.push(Output(std::array::from_fn(|i| y.0[i] - yr.0[i])));
    }
    Ok(out)
}

/// Algorithm 1 settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Initial conditions sampled per epoch.
    pub n1: usize,
    /// Effectiveness levels of the trained motor; `1.0` is the healthy class.
    pub fault_levels: Vec<f64>,
    pub trained_motor: usize,
    pub window_len: usize,
    pub onset_step: usize,
    /// Spacing between consecutive window end points.
    pub window_stride: usize,
    /// Replay buffer capacity in windows.
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_epochs: usize,
    pub loss_target: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Epochs without improvement before the learning rate is halved.
    pub plateau_patience: usize,
    pub mode: FeatureMode,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n1: 20,
            fault_levels: (0..=10).map(|i| i as f64 / 10.0).collect(),
            trained_motor: 2,
            window_len: 100,
            onset_step: 100,
            window_stride: 1,
            buffer_capacity: 50_000,
            batch_size: 512,
            max_epochs: 200,
            min_epochs: 10,
            loss_target: 1e-3,
            epsilon: 0.01,
            learning_rate: 1e-3,
            plateau_patience: 10,
            mode: FeatureMode::ModelFree,
            architecture: Architecture::Lstm(LstmConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n1 == 0 || self.fault_levels.is_empty() {
            return bad("need at least one initial condition and one fault level".into());
        }
        if !self.fault_levels.contains(&1.0) {
            return bad("fault levels must include the healthy level 1.0".into());
        }
        if self.fault_levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad(format!("fault levels outside [0, 1]: {:?}", self.fault_levels));
        }
        if !(1..=INPUT_DIM).contains(&self.trained_motor) {
            return bad(format!("trained motor {} outside 1..=4", self.trained_motor));
        }
        if self.window_len == 0 || self.window_len > self.onset_step + 1 || self.onset_step > sim.horizon {
            return bad(format!(
                "window length {} and onset {} do not fit a {}-step horizon",
                self.window_len, self.onset_step, sim.horizon
            ));
        }
        if self.window_stride == 0 || self.buffer_capacity == 0 || self.batch_size == 0 {
            return bad("stride, buffer capacity and batch size must be positive".into());
        }
        if self.max_epochs == 0 || self.min_epochs >= self.max_epochs {
            return bad(format!("need 0 ≤ min_epochs ({}) < max_epochs ({})", self.min_epochs, self.max_epochs));
        }
        if !(self.learning_rate > 0.0 && self.epsilon >= 0.0 && self.loss_target >= 0.0) {
            return bad("learning rate must be positive, margin and loss target non-negative".into());
        }
        Ok(())
    }

    pub fn uses_residuals(&self) -> bool {
        self.mode.uses_residuals()
    }
}

/// A closed-loop rollout with its generating fault.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutRecord {
    pub ic_index: usize,
    pub level_index: usize,
    pub schedule: FaultSchedule,
    pub traj: Trajectory,
    pub resid: Option<Vec<Output>>,
}

/// Rolls out every `(initial condition, fault level)` pair of one epoch.
/// The same initial states are reused across levels.
pub fn synthesize_rollouts(cfg: &TrainConfig, scenario: &Scenario, seed: u64, epoch: u64) -> Result<Vec<RolloutRecord>> {
    cfg.validate(&scenario.sim)?;
    let controller = scenario.design()?;
    let mut rng = substream(seed, "data", epoch);
    let initial: Vec<State> = (0..cfg.n1).map(|_| scenario.initial.sample(&mut rng)).collect();
    let mut out = Vec::with_capacity(cfg.n1 * cfg.fault_levels.len());
    for (ic_index, x0) in initial.iter().enumerate() {
        for (level_index, level) in cfg.fault_levels.iter().enumerate() {
            let schedule = FaultSchedule {
                fault: FaultVector::single(cfg.trained_motor, *level)?,
                onset_step: cfg.onset_step,
            };
            let traj = simulate(x0, &controller, &schedule, &scenario.sim, &scenario.params)?;
            let resid = if cfg.uses_residuals() && traj.is_valid() {
                Some(generate_residuals(&traj, &scenario.reference, &scenario.sim)?)
            } else {
                None
            };
            out.push(RolloutRecord { ic_index, level_index, schedule, traj, resid });
        }
    }
    Ok(out)
}

/// Windows ending at `onset, onset + stride, …, horizon` of one rollout.
pub fn rollout_windows(rec: &RolloutRecord, cfg: &TrainConfig, horizon: usize) -> Result<Vec<TrajectoryWindow>> {
    let all = slice_windows(
        &rec.traj,
        rec.resid.as_deref(),
        rec.schedule.fault,
        rec.schedule.onset_step,
        cfg.window_len,
        horizon,
    )?;
    Ok(all.into_iter().step_by(cfg.window_stride).collect())
}

/// A flattened training window.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: [f64; INPUT_DIM],
    pub onset_offset: usize,
    pub level_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochData {
    pub samples: Vec<Sample>,
    pub rollouts: usize,
    /// Rollouts discarded because they left the divergence bound.
    pub dropped: usize,
    /// Window count per fault level.
    pub per_level: Vec<usize>,
}

/// Flattens the valid rollouts of an epoch into samples.
pub fn rollouts_to_samples(records: &[RolloutRecord], cfg: &TrainConfig, horizon: usize) -> Result<EpochData> {
    let mut data = EpochData { per_level: vec![0; cfg.fault_levels.len()], ..EpochData::default() };
    for rec in records {
        data.rollouts += 1;
        if !rec.traj.is_valid() {
            data.dropped += 1;
            continue;
        }
        for win in rollout_windows(rec, cfg, horizon)? {
            data.per_level[rec.level_index] += 1;
            data.samples.push(Sample {
                features: window_features(&win, cfg.mode)?,
                label: win.label.0,
                onset_offset: win.onset_offset,
                level_index: rec.level_index,
            });
        }
    }
    Ok(data)
}

pub fn synthesize_epoch_data(cfg: &TrainConfig, scenario: &Scenario, seed: u64, epoch: u64) -> Result<EpochData> {
    let records = synthesize_rollouts(cfg, scenario, seed, epoch)?;
    rollouts_to_samples(&records, cfg, scenario.sim.horizon)
}

/// Bounded FIFO of training samples.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Sample>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends in order, evicting the oldest samples beyond capacity.
    pub fn append(&mut self, samples: impl IntoIterator<Item = Sample>) {
        for s in samples {
            if self.items.len() == self.capacity {
                self.items.pop_front();
            }
            self.items.push_back(s);
        }
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.items.iter()
    }

    /// Shuffled partition of all indices into batches of at most `batch_size`.
    pub fn sample_batches<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        idx.shuffle(rng);
        idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// One row of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub buffer_size: usize,
    pub dropped: usize,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub trace: Vec<EpochRecord>,
    /// Whether the loss target stopped training before the epoch cap.
    pub converged: bool,
}

pub fn write_loss_trace<W: Write>(trace: &[EpochRecord], mut w: W) -> Result<()> {
    writeln!(w, "epoch,mean_loss,buffer_size,dropped,learning_rate")?;
    for r in trace {
        writeln!(w, "{},{},{},{},{}", r.epoch, r.mean_loss, r.buffer_size, r.dropped, r.learning_rate)?;
    }
    Ok(())
}

/// Runs Algorithm 1 with fresh data synthesized every epoch.
pub fn train(cfg: &TrainConfig, scenario: &Scenario, seed: u64) -> Result<TrainOutcome> {
    train_with(cfg, seed, |epoch| synthesize_epoch_data(cfg, scenario, seed, epoch as u64).map(Some))
}

/// Algorithm 1 around an arbitrary data source. `next_data(epoch)` returns the
/// windows to append before that epoch, or `None` to keep the buffer as is.
/// The input scaling is fitted on the first batch of data.
pub fn train_with<F>(cfg: &TrainConfig, seed: u64, mut next_data: F) -> Result<TrainOutcome>
where
    F: FnMut(usize) -> Result<Option<EpochData>>,
{
    let spec = feature_spec(cfg.mode, cfg.window_len)?;
    let mut net = Network::new(spec, cfg.architecture.clone(), INPUT_DIM, &mut substream(seed, "init", 0))?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut trace = Vec::new();
    let mut lr = cfg.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut fitted = false;
    for epoch in 0..cfg.max_epochs {
        let mut dropped = 0;
        if let Some(data) = next_data(epoch)? {
            dropped = data.dropped;
            if !fitted && !data.samples.is_empty() {
                let healthy = |s: &Sample| s.label.iter().all(|v| *v == 1.0);
                let norm = fit_normalizer(data.samples.iter().map(|s| (s.features.as_slice(), healthy(s))), &spec);
                net.set_normalizer(norm)?;
                fitted = true;
            }
            buffer.append(data.samples);
        }
        if buffer.is_empty() {
            return Err(Error::Numeric(format!("no usable training windows at epoch {epoch}")));
        }
        let mut rng = substream(seed, "batch-order", epoch as u64);
        let mut total = 0.0;
        for batch in buffer.sample_batches(cfg.batch_size, &mut rng) {
            let mut grads = net.zero_gradients();
            for &i in &batch {
                let s = buffer.get(i);
                total += net.accumulate_gradient(&s.features, &s.label, cfg.epsilon, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at epoch {epoch} (learning rate {lr}, running loss {total})"
                )));
            }
            sgd_step(&mut net, &grads, lr)?;
            if !net.params().iter().all(|t| t.is_finite()) {
                return Err(Error::Numeric(format!("non-finite weights at epoch {epoch} (learning rate {lr})")));
            }
        }
        let mean_loss = total / buffer.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
        }
        trace.push(EpochRecord { epoch, mean_loss, buffer_size: buffer.len(), dropped, learning_rate: lr });
        if mean_loss < cfg.loss_target && epoch + 1 >= cfg.min_epochs {
            return Ok(TrainOutcome { network: net, trace, converged: true });
        }
        if mean_loss < best {
            best = mean_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr *= 0.5;
                stale = 0;
            }
        }
    }
    Ok(TrainOutcome { network: net, trace, converged: false })
}
