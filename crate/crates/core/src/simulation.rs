//! Slot-level event loop and run metrics.
//!
//! Every slot runs the same pipeline:
//!
//! ```text
//! 1. activate loops whose first sampling instant is this slot, then sample
//! 2. build the scheduler snapshot (deliveries up to the previous slot)
//! 3. schedule and commit UL/DL deliveries at the end of the slot
//! 4. loops at the last slot of a control step finalize x_hat[k], apply
//!    u[k] = -L x_hat[k] and commit x[k+1]
//! ```
//!
//! AoI and error are step-level quantities: they are fixed when a step is
//! finalized and charged to every slot of that step.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::estimation::{estimation_error, voi_downlink, voi_uplink, ErrorGrowth};
use crate::model::{
    control_input, draw_offset, sample_noise, ModelError, PlantState, RngStream, SubSystemParams,
    Substream,
};
use crate::network::{Network, NetworkError, ResourceGrid, ScheduleDecision};
use crate::scheduling::{DlCandidate, Scheduler, SchedulerKind, Snapshot, UlCandidate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("slot {slot}, loop {loop_id:?}: invariant violated: {invariant}")]
    InvariantViolation {
        slot: u64,
        loop_id: Option<usize>,
        invariant: String,
    },
}

impl SimError {
    pub fn is_invariant_violation(&self) -> bool {
        matches!(self, SimError::InvariantViolation { .. })
    }
}

// ============================================================================
// Configuration
// ============================================================================

/// One class of identical loops.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopClass {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub count: usize,
}

impl LoopClass {
    pub fn scalar(a: f64, b: f64, w: f64, l: f64, count: usize) -> Self {
        let one = |v| DMatrix::from_element(1, 1, v);
        Self {
            a: one(a),
            b: one(b),
            w: one(w),
            l: one(l),
            count,
        }
    }

    /// Scalar class with `B = 1` and deadbeat gain `L = A`.
    pub fn deadbeat(a: f64, w: f64, count: usize) -> Self {
        Self::scalar(a, 1.0, w, a, count)
    }

    /// Short description of `A` used in reports.
    pub fn label(&self) -> String {
        if self.a.len() == 1 {
            format!("{}", self.a[(0, 0)])
        } else {
            let rows: Vec<String> = self
                .a
                .row_iter()
                .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "))
                .collect();
            format!("[{}]", rows.join("; "))
        }
    }
}

/// A fully specified single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub classes: Vec<LoopClass>,
    /// Shared sampling period `T_s` in slots.
    pub sampling_period: u64,
    pub r_ul: usize,
    pub r_dl: usize,
    pub t_sim: u64,
    pub seed: u64,
    pub scheduler: SchedulerKind,
    /// Slots excluded from the metrics at the start of the run.
    pub warmup: u64,
    pub keep_traces: bool,
}

/// State matrices of the four reference plant classes.
pub const REFERENCE_CLASSES: [f64; 4] = [0.75, 1.0, 1.25, 1.5];
pub const REFERENCE_PERIOD: u64 = 10;
pub const REFERENCE_T_SIM: u64 = 20_000;
pub const REFERENCE_R_DL: usize = 3;

impl RunConfig {
    /// Reference setup: four equally sized deadbeat scalar classes with unit
    /// noise, `T_s = 10`, 20000 slots.
    pub fn reference(n: usize, r_ul: usize, r_dl: usize, scheduler: SchedulerKind, seed: u64) -> Self {
        let per_class = n / REFERENCE_CLASSES.len();
        Self {
            classes: REFERENCE_CLASSES
                .iter()
                .map(|&a| LoopClass::deadbeat(a, 1.0, per_class))
                .collect(),
            sampling_period: REFERENCE_PERIOD,
            r_ul,
            r_dl,
            t_sim: REFERENCE_T_SIM,
            seed,
            scheduler,
            warmup: 0,
            keep_traces: false,
        }
    }

    pub fn n_loops(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    /// Class index of every loop. Classes are interleaved round-robin so
    /// that loop `i` keeps its class when loops are appended.
    pub fn class_assignment(&self) -> Vec<usize> {
        let mut remaining: Vec<usize> = self.classes.iter().map(|c| c.count).collect();
        let mut out = Vec::with_capacity(self.n_loops());
        while remaining.iter().any(|&r| r > 0) {
            for (j, r) in remaining.iter_mut().enumerate() {
                if *r > 0 {
                    *r -= 1;
                    out.push(j);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.classes.is_empty() || self.n_loops() == 0 {
            return Err(SimError::Config("at least one loop is required".into()));
        }
        if self.t_sim == 0 {
            return Err(SimError::Config("T_sim must be at least one slot".into()));
        }
        if self.sampling_period == 0 {
            return Err(SimError::Config("sampling period must be at least one slot".into()));
        }
        if self.warmup >= self.t_sim {
            return Err(SimError::Config(format!(
                "warm-up {} leaves no measured slots out of {}",
                self.warmup, self.t_sim
            )));
        }
        ResourceGrid::new(self.r_ul, self.r_dl).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }

    /// Builds per-loop parameters, drawing each loop's offset from its own
    /// substream.
    pub fn build_params(&self) -> Result<(Vec<SubSystemParams>, Vec<usize>), SimError> {
        let assignment = self.class_assignment();
        let params = assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let class = &self.classes[j];
                let mut offsets = RngStream::for_role(self.seed, Substream::Offset(i));
                let offset = draw_offset(&mut offsets, self.sampling_period);
                SubSystemParams::new(
                    i,
                    class.a.clone(),
                    class.b.clone(),
                    class.w.clone(),
                    class.l.clone(),
                    self.sampling_period,
                    offset,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((params, assignment))
    }
}

// ============================================================================
// Metrics
// ============================================================================

/// Per-slot AoI and error-norm trace of one loop, starting at `start_slot`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopTrace {
    pub start_slot: u64,
    pub aoi: Vec<u64>,
    pub error_norm: Vec<f64>,
}

/// Mean AoI over loops and `slots` measured slots. Slots a loop was
/// inactive are absent from its trace and contribute nothing.
pub fn compute_avg_aoi(traces: &[LoopTrace], slots: u64) -> f64 {
    if traces.is_empty() || slots == 0 {
        return 0.0;
    }
    let total: u64 = traces.iter().map(|t| t.aoi.iter().sum::<u64>()).sum();
    total as f64 / (traces.len() as f64 * slots as f64)
}

/// Integrated absolute error per loop: `(1/N) sum_i sum_t ||e_i||`.
pub fn compute_iae(traces: &[LoopTrace]) -> f64 {
    if traces.is_empty() {
        return 0.0;
    }
    let total: f64 = traces.iter().map(|t| t.error_norm.iter().sum::<f64>()).sum();
    total / traces.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopMetrics {
    pub class: usize,
    pub offset: u64,
    pub avg_aoi: f64,
    pub iae: f64,
    /// Controller AoI at the end of the run, in steps.
    pub final_aoi: u64,
    pub ul_deliveries: u64,
    pub dl_deliveries: u64,
    pub last_dl_slot: Option<u64>,
    /// Fingerprint of every noise draw of the loop.
    pub noise_checksum: u64,
}

impl LoopMetrics {
    /// Whether the controller received anything at or after `slot`.
    pub fn delivered_since(&self, slot: u64) -> bool {
        self.last_dl_slot.is_some_and(|s| s >= slot)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub count: usize,
    pub avg_aoi: f64,
    pub iae: f64,
    /// Loops of the class without a DL delivery in the trailing half.
    pub starved: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub t_sim: u64,
    pub warmup: u64,
    pub avg_aoi: f64,
    pub iae: f64,
    pub loops: Vec<LoopMetrics>,
    pub classes: Vec<ClassMetrics>,
    pub traces: Option<Vec<LoopTrace>>,
}

impl RunMetrics {
    pub fn n_loops(&self) -> usize {
        self.loops.len()
    }

    /// First slot of the trailing half used for starvation flags.
    pub fn trailing_half_start(&self) -> u64 {
        self.t_sim - self.t_sim / 2
    }

    pub fn starved_loops(&self) -> usize {
        let from = self.trailing_half_start();
        self.loops.iter().filter(|l| !l.delivered_since(from)).count()
    }

    /// Combined fingerprint of all per-loop noise draws.
    pub fn noise_checksum(&self) -> u64 {
        self.loops
            .iter()
            .fold(FNV_OFFSET, |h, l| fnv_mix(h, l.noise_checksum))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_mix(h: u64, word: u64) -> u64 {
    word.to_le_bytes()
        .iter()
        .fold(h, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone)]
struct LoopAccumulator {
    aoi_sum: u64,
    error_sum: f64,
    ul_deliveries: u64,
    dl_deliveries: u64,
    last_dl_slot: Option<u64>,
    noise_checksum: u64,
}

impl Default for LoopAccumulator {
    fn default() -> Self {
        Self {
            aoi_sum: 0,
            error_sum: 0.0,
            ul_deliveries: 0,
            dl_deliveries: 0,
            last_dl_slot: None,
            noise_checksum: FNV_OFFSET,
        }
    }
}

// ============================================================================
// Simulation
// ============================================================================

/// A run that can be advanced one slot at a time.
pub struct Simulation {
    config: RunConfig,
    params: Vec<SubSystemParams>,
    class_of: Vec<usize>,
    plants: Vec<Option<PlantState>>,
    noise: Vec<RngStream>,
    growth: Vec<ErrorGrowth>,
    network: Network,
    scheduler: Scheduler,
    slot: u64,
    acc: Vec<LoopAccumulator>,
    traces: Option<Vec<LoopTrace>>,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self, SimError> {
        config.validate()?;
        let (params, class_of) = config.build_params()?;
        let grid = ResourceGrid::new(config.r_ul, config.r_dl)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let traces = config.keep_traces.then(|| {
            params
                .iter()
                .map(|p| LoopTrace {
                    start_slot: p.offset().max(config.warmup),
                    ..LoopTrace::default()
                })
                .collect()
        });
        Ok(Self {
            noise: (0..params.len())
                .map(|i| RngStream::for_role(config.seed, Substream::Noise(i)))
                .collect(),
            growth: params.iter().map(ErrorGrowth::new).collect(),
            network: Network::new(grid, &params),
            scheduler: Scheduler::new(config.scheduler, config.seed),
            plants: vec![None; params.len()],
            acc: vec![LoopAccumulator::default(); params.len()],
            slot: 0,
            traces,
            params,
            class_of,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn params(&self) -> &[SubSystemParams] {
        &self.params
    }

    pub fn class_of(&self, loop_id: usize) -> usize {
        self.class_of[loop_id]
    }

    /// Next slot to be executed.
    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.config.t_sim
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// True plant state, `None` while the loop is inactive.
    pub fn plant(&self, loop_id: usize) -> Option<&PlantState> {
        self.plants[loop_id].as_ref()
    }

    /// Builds the scheduler's view of the current slot. Must be called after
    /// this slot's sampling.
    fn snapshot(&mut self) -> Snapshot {
        let t = self.slot;
        let ul = self
            .network
            .ul_candidates()
            .into_iter()
            .map(|i| {
                let bs = self.network.bs_view(i);
                UlCandidate {
                    loop_id: i,
                    controller_latest_step: self.network.controller_view(i).latest_step_or_genesis(),
                    bs_latest_step: bs.latest_step_or_genesis(),
                    step: self.params[i].step_at(t).expect("active loop"),
                    controller_age_slots: {
                        let p = &self.params[i];
                        let held = self.network.controller_view(i).latest_step_or_genesis();
                        let generated = p.offset() as i64 + held * p.period() as i64;
                        (t as i64 - generated) as u64
                    },
                    value: voi_uplink(bs, &mut self.growth[i]),
                }
            })
            .collect();
        let dl = self
            .network
            .dl_candidates()
            .into_iter()
            .map(|i| DlCandidate {
                loop_id: i,
                buffered_step: self
                    .network
                    .bs_buffer()
                    .entry(i)
                    .packet
                    .as_ref()
                    .expect("DL candidate holds a packet")
                    .gen_step,
                value: voi_downlink(
                    self.network.bs_view(i).estimate(),
                    self.network.controller_view(i).estimate(),
                ),
            })
            .collect();
        Snapshot { slot: t, ul, dl }
    }

    fn draw_noise(&mut self, i: usize) -> DVector<f64> {
        let w = sample_noise(&mut self.noise[i], self.params[i].noise_std());
        let acc = &mut self.acc[i];
        for v in w.iter() {
            acc.noise_checksum = fnv_mix(acc.noise_checksum, v.to_bits());
        }
        w
    }

    /// Charges the step-level AoI and error of loop `i` to slots
    /// `first..=last`, skipping the warm-up.
    fn charge(&mut self, i: usize, first: u64, last: u64, aoi: u64, error_norm: f64) {
        let first = first.max(self.config.warmup);
        if first > last {
            return;
        }
        let acc = &mut self.acc[i];
        for _ in first..=last {
            acc.aoi_sum += aoi;
            acc.error_sum += error_norm;
        }
        if let Some(traces) = self.traces.as_mut() {
            let tr = &mut traces[i];
            debug_assert_eq!(tr.start_slot + tr.aoi.len() as u64, first);
            let count = (last - first + 1) as usize;
            tr.aoi.extend(std::iter::repeat_n(aoi, count));
            tr.error_norm.extend(std::iter::repeat_n(error_norm, count));
        }
    }

    fn violation(&self, loop_id: Option<usize>, invariant: impl Into<String>) -> SimError {
        SimError::InvariantViolation {
            slot: self.slot,
            loop_id,
            invariant: invariant.into(),
        }
    }

    /// Step-level AoI and error of loop `i` from its current information.
    fn step_metrics(&self, i: usize) -> Result<(u64, f64), SimError> {
        let plant = self.plants[i].as_ref().expect("active loop");
        let ctrl = self.network.controller_view(i);
        let bs = self.network.bs_view(i);
        if ctrl.current_step() != plant.k || bs.current_step() != plant.k {
            return Err(self.violation(Some(i), "information sets out of step with the plant"));
        }
        if bs.latest_step_or_genesis() < ctrl.latest_step_or_genesis() {
            return Err(self.violation(Some(i), "base station older than controller"));
        }
        let err = estimation_error(&plant.x, ctrl.estimate()).norm();
        Ok((ctrl.aoi(), err))
    }

    /// Finalizes the current control step of loop `i` at slot `t`.
    fn finish_step(&mut self, i: usize, t: u64) -> Result<(), SimError> {
        let (aoi, err) = self.step_metrics(i)?;
        let k = self.plants[i].as_ref().expect("active loop").k;
        let start = self.params[i].step_start(k);
        self.charge(i, start, t, aoi, err);

        let u = control_input(self.network.controller_view(i).estimate(), self.params[i].l());
        let w = self.draw_noise(i);
        let p = &self.params[i];
        self.plants[i].as_mut().expect("active loop").advance(&u, &w, p);
        self.network.advance_step(i, &u, p);
        Ok(())
    }

    /// Executes one slot and returns the decision that was committed.
    pub fn step(&mut self) -> Result<ScheduleDecision, SimError> {
        if self.is_done() {
            return Err(SimError::Config("run already finished".into()));
        }
        let t = self.slot;

        for i in 0..self.params.len() {
            if t == self.params[i].offset() {
                let x0 = self.draw_noise(i);
                self.plants[i] = Some(PlantState::genesis(x0));
            }
            if let Some(plant) = self.plants[i].as_ref() {
                self.network.maybe_generate(t, &self.params[i], plant);
            }
        }

        let snapshot = self.snapshot();
        let decision = self.scheduler.decide(&snapshot, &self.network.grid());
        self.network
            .deliver(&decision, &self.params)
            .map_err(|e| match e {
                NetworkError::NotACandidate { loop_id, .. }
                | NetworkError::DuplicateGrant { loop_id, .. }
                | NetworkError::Estimation { loop_id, .. } => {
                    self.violation(Some(loop_id), e.to_string())
                }
                other => self.violation(None, other.to_string()),
            })?;
        for &i in &decision.ul {
            self.acc[i].ul_deliveries += 1;
        }
        for &i in &decision.dl {
            self.acc[i].dl_deliveries += 1;
            self.acc[i].last_dl_slot = Some(t);
        }

        for i in 0..self.params.len() {
            if self.plants[i].is_some() && self.params[i].is_step_end(t) {
                self.finish_step(i, t)?;
            }
        }
        self.slot += 1;
        Ok(decision)
    }

    /// Charges the unfinished trailing step of every loop and aggregates.
    pub fn finish(mut self) -> Result<RunMetrics, SimError> {
        let last = self.slot.saturating_sub(1);
        for i in 0..self.params.len() {
            if self.plants[i].is_none() {
                continue;
            }
            let k = self.plants[i].as_ref().expect("active loop").k;
            let start = self.params[i].step_start(k);
            if start <= last {
                let (aoi, err) = self.step_metrics(i)?;
                self.charge(i, start, last, aoi, err);
            }
        }

        let measured = self.slot.saturating_sub(self.config.warmup).max(1);
        let n = self.params.len();
        let loops: Vec<LoopMetrics> = (0..n)
            .map(|i| {
                let acc = &self.acc[i];
                LoopMetrics {
                    class: self.class_of[i],
                    offset: self.params[i].offset(),
                    avg_aoi: acc.aoi_sum as f64 / measured as f64,
                    iae: acc.error_sum,
                    final_aoi: self.network.controller_view(i).aoi(),
                    ul_deliveries: acc.ul_deliveries,
                    dl_deliveries: acc.dl_deliveries,
                    last_dl_slot: acc.last_dl_slot,
                    noise_checksum: acc.noise_checksum,
                }
            })
            .collect();

        let total_aoi: u64 = self.acc.iter().map(|a| a.aoi_sum).sum();
        let total_err: f64 = self.acc.iter().map(|a| a.error_sum).sum();
        let trailing = self.config.t_sim - self.config.t_sim / 2;
        let classes = self
            .config
            .classes
            .iter()
            .enumerate()
            .map(|(j, class)| {
                let members: Vec<&LoopMetrics> = loops.iter().filter(|l| l.class == j).collect();
                let count = members.len();
                let mean = |f: fn(&LoopMetrics) -> f64| {
                    if count == 0 {
                        0.0
                    } else {
                        members.iter().map(|l| f(l)).sum::<f64>() / count as f64
                    }
                };
                ClassMetrics {
                    label: class.label(),
                    count,
                    avg_aoi: mean(|l| l.avg_aoi),
                    iae: mean(|l| l.iae),
                    starved: members.iter().filter(|l| !l.delivered_since(trailing)).count(),
                }
            })
            .collect();

        Ok(RunMetrics {
            t_sim: self.config.t_sim,
            warmup: self.config.warmup,
            avg_aoi: total_aoi as f64 / (n as f64 * measured as f64),
            iae: total_err / n as f64,
            loops,
            classes,
            traces: self.traces,
        })
    }
}

/// Runs all `T_sim` slots of `config`.
pub fn run_simulation(config: &RunConfig) -> Result<RunMetrics, SimError> {
    let mut sim = Simulation::new(config.clone())?;
    while !sim.is_done() {
        sim.step()?;
    }
    sim.finish()
}
