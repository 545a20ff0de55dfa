//! The slicing environment: per-class buffers drained by committed
//! allocations, budget computation and projection, loss accounting, and the
//! feature vectors the policy agents observe.

mod norm;

pub use norm::{FeatureNormalizer, DEFAULT_NORM_DECAY};

use crate::error::{Error, Result};
use crate::workload::{ClassSpec, EpisodeTrace, RequestEvent};

/// Service discipline: decide at every request arrival, or on a fixed
/// interval with arrivals batched in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    UponArrival,
    Batch,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::UponArrival => "arrival",
            Mode::Batch => "batch",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arrival" | "upon_arrival" => Ok(Mode::UponArrival),
            "batch" => Ok(Mode::Batch),
            other => Err(Error::InvalidArg(format!(
                "unknown mode {other:?}, expected `arrival` or `batch`"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The two sliced resources. Each has its own budget, buffers, and agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    Bandwidth,
    Compute,
}

impl Resource {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resource::Bandwidth => "bw",
            Resource::Compute => "vm",
        }
    }
}

impl std::fmt::Display for Resource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Total amounts available to split across classes at each decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budgets {
    pub bandwidth: f64,
    pub compute: f64,
}

impl Budgets {
    pub fn get(&self, resource: Resource) -> f64 {
        match resource {
            Resource::Bandwidth => self.bandwidth,
            Resource::Compute => self.compute,
        }
    }
}

/// Demand statistics of one class, the inputs to the budget formulas.
/// Analytic for synthetic workloads, empirical for real traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub mean_bw: f64,
    pub std_bw: f64,
    pub mean_vm: f64,
    pub std_vm: f64,
    pub arrival_rate: f64,
    pub service_interval: f64,
}

impl ClassStats {
    /// Uniform(a, b) closed forms: mean (a+b)/2, stddev (b-a)/sqrt(12).
    pub fn from_spec(spec: &ClassSpec) -> Result<ClassStats> {
        spec.validate()?;
        let uniform = |(lo, hi): (f64, f64)| ((lo + hi) / 2.0, (hi - lo) / 12f64.sqrt());
        let (mean_bw, std_bw) = uniform(spec.bw_range);
        let (mean_vm, std_vm) = uniform(spec.vm_range);
        Ok(ClassStats {
            mean_bw,
            std_bw,
            mean_vm,
            std_vm,
            arrival_rate: spec.arrival_rate,
            service_interval: spec.service_interval,
        })
    }

    /// Empirical mean and population stddev of one class's demands, with the
    /// arrival rate taken as events per unit time over the trace horizon.
    pub fn from_trace(
        trace: &EpisodeTrace,
        class: usize,
        service_interval: f64,
    ) -> Result<ClassStats> {
        let demands: Vec<&RequestEvent> =
            trace.events.iter().filter(|e| e.class == class).collect();
        if demands.is_empty() {
            return Err(Error::Empty(format!("class {class} has no events")));
        }
        if !(trace.horizon > 0.0) {
            return Err(Error::InvalidArg(
                "cannot estimate an arrival rate on a zero-length trace".into(),
            ));
        }
        let n = demands.len() as f64;
        let stats = |get: fn(&RequestEvent) -> f64| {
            let mean = demands.iter().map(|e| get(e)).sum::<f64>() / n;
            let var = demands
                .iter()
                .map(|e| {
                    let d = get(e) - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        };
        let (mean_bw, std_bw) = stats(|e| e.bw);
        let (mean_vm, std_vm) = stats(|e| e.vm);
        Ok(ClassStats {
            mean_bw,
            std_bw,
            mean_vm,
            std_vm,
            arrival_rate: n / trace.horizon,
            service_interval,
        })
    }
}

/// Budget at confidence level c in {0..3}: per-arrival provisioning sums
/// mean + c*stddev over classes; batch provisioning additionally multiplies
/// by the expected arrivals per service interval (rate * interval).
pub fn compute_budgets(stats: &[ClassStats], level: u8, mode: Mode) -> Result<Budgets> {
    if stats.is_empty() {
        return Err(Error::Empty("no class statistics".into()));
    }
    if level > 3 {
        return Err(Error::InvalidArg(format!(
            "budget level must be 0..=3, got {level}"
        )));
    }
    let c = level as f64;
    let mut bandwidth = 0.0;
    let mut compute = 0.0;
    for s in stats {
        let multiplier = match mode {
            Mode::UponArrival => 1.0,
            Mode::Batch => s.service_interval * s.arrival_rate,
        };
        bandwidth += multiplier * (s.mean_bw + c * s.std_bw);
        compute += multiplier * (s.mean_vm + c * s.std_vm);
    }
    Ok(Budgets { bandwidth, compute })
}

pub fn budgets_from_specs(specs: &[ClassSpec], level: u8, mode: Mode) -> Result<Budgets> {
    let stats: Vec<ClassStats> = specs
        .iter()
        .map(ClassStats::from_spec)
        .collect::<Result<_>>()?;
    compute_budgets(&stats, level, mode)
}

/// Next buffer level: arrivals join, the previously committed allocation
/// drains what it can, and the level never goes negative.
pub fn buffer_update(prev: f64, arrived: f64, served_prev: f64) -> f64 {
    (arrived + prev - served_prev).max(0.0)
}

/// Scales a non-negative allocation onto the budget only when its sum
/// exceeds it; feasible vectors pass through untouched, so the op is
/// idempotent and preserves ratios.
pub fn project_to_budget(raw: &[f64], budget: f64) -> Vec<f64> {
    debug_assert!(raw.iter().all(|r| *r >= 0.0), "allocations must be non-negative");
    let sum: f64 = raw.iter().sum();
    if sum > budget {
        let scale = budget / sum;
        raw.iter().map(|r| r * scale).collect()
    } else {
        raw.to_vec()
    }
}

/// Per-class amounts committed for one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub bandwidth: Vec<f64>,
    pub compute: Vec<f64>,
}

impl Allocation {
    pub fn zeros(classes: usize) -> Allocation {
        Allocation {
            bandwidth: vec![0.0; classes],
            compute: vec![0.0; classes],
        }
    }

    pub fn get(&self, resource: Resource) -> &[f64] {
        match resource {
            Resource::Bandwidth => &self.bandwidth,
            Resource::Compute => &self.compute,
        }
    }
}

/// Loss components of one decision: the buffers left after service (the
/// delay proxy) and the amounts committed (the reservation cost), per class
/// and resource. The scalar loss is qos + weight * cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub qos_bw: Vec<f64>,
    pub qos_vm: Vec<f64>,
    pub cost_bw: Vec<f64>,
    pub cost_vm: Vec<f64>,
    pub weight: f64,
}

impl LossBreakdown {
    pub fn classes(&self) -> usize {
        self.qos_bw.len()
    }

    /// Loss attributed to one class's bandwidth: buffer + weight * committed.
    pub fn bw_class(&self, i: usize) -> f64 {
        self.qos_bw[i] + self.weight * self.cost_bw[i]
    }

    pub fn vm_class(&self, i: usize) -> f64 {
        self.qos_vm[i] + self.weight * self.cost_vm[i]
    }

    pub fn bw_total(&self) -> f64 {
        (0..self.classes()).map(|i| self.bw_class(i)).sum()
    }

    pub fn vm_total(&self) -> f64 {
        (0..self.classes()).map(|i| self.vm_class(i)).sum()
    }

    pub fn total(&self) -> f64 {
        self.bw_total() + self.vm_total()
    }
}

/// Loss of one decision given post-service buffer levels and the committed
/// allocation.
pub fn compute_loss(
    bw_buffers: &[f64],
    vm_buffers: &[f64],
    action: &Allocation,
    weight: f64,
) -> LossBreakdown {
    LossBreakdown {
        qos_bw: bw_buffers.to_vec(),
        qos_vm: vm_buffers.to_vec(),
        cost_bw: action.bandwidth.clone(),
        cost_vm: action.compute.clone(),
        weight,
    }
}

/// Mutable per-episode state. Buffers are post-service levels; `pending`
/// holds the arrivals consumed by the latest service window and
/// `window_start_*` the buffer levels carried into that window. Cumulative
/// counters support conservation audits.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub clock: f64,
    pub last_decision_time: f64,
    pub bw_buffers: Vec<f64>,
    pub vm_buffers: Vec<f64>,
    pub window_start_bw: Vec<f64>,
    pub window_start_vm: Vec<f64>,
    pub pending: Vec<RequestEvent>,
    pub decisions: usize,
    pub cum_arrived_bw: Vec<f64>,
    pub cum_served_bw: Vec<f64>,
    pub cum_arrived_vm: Vec<f64>,
    pub cum_served_vm: Vec<f64>,
    cursor: usize,
    last_tick: f64,
}

impl EnvState {
    fn fresh(classes: usize) -> EnvState {
        EnvState {
            clock: 0.0,
            last_decision_time: 0.0,
            bw_buffers: vec![0.0; classes],
            vm_buffers: vec![0.0; classes],
            window_start_bw: vec![0.0; classes],
            window_start_vm: vec![0.0; classes],
            pending: Vec::new(),
            decisions: 0,
            cum_arrived_bw: vec![0.0; classes],
            cum_served_bw: vec![0.0; classes],
            cum_arrived_vm: vec![0.0; classes],
            cum_served_vm: vec![0.0; classes],
            cursor: 0,
            last_tick: 0.0,
        }
    }

    pub fn buffers(&self, resource: Resource) -> &[f64] {
        match resource {
            Resource::Bandwidth => &self.bw_buffers,
            Resource::Compute => &self.vm_buffers,
        }
    }
}

/// The simulation environment for one scenario: class count, discipline,
/// budgets, loss weight, and the running feature scalers (which persist
/// across episodes so the agents keep a stable input scale).
#[derive(Debug, Clone)]
pub struct SliceEnv {
    pub classes: usize,
    pub mode: Mode,
    pub budgets: Budgets,
    pub loss_weight: f64,
    pub service_interval: f64,
    norm_bw: FeatureNormalizer,
    norm_vm: FeatureNormalizer,
}

impl SliceEnv {
    pub fn new(
        classes: usize,
        mode: Mode,
        budgets: Budgets,
        loss_weight: f64,
        service_interval: f64,
        norm_decay: f64,
    ) -> Result<SliceEnv> {
        if classes == 0 {
            return Err(Error::InvalidArg("need at least one class".into()));
        }
        if !(loss_weight >= 0.0 && loss_weight.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "loss weight must be non-negative, got {loss_weight}"
            )));
        }
        if !(budgets.bandwidth >= 0.0 && budgets.compute >= 0.0) {
            return Err(Error::InvalidArg("budgets must be non-negative".into()));
        }
        if mode == Mode::Batch && !(service_interval > 0.0 && service_interval.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "batch mode needs a positive service interval, got {service_interval}"
            )));
        }
        let dim = feature_dim(mode, classes);
        Ok(SliceEnv {
            classes,
            mode,
            budgets,
            loss_weight,
            service_interval,
            norm_bw: FeatureNormalizer::new(dim, norm_decay)?,
            norm_vm: FeatureNormalizer::new(dim, norm_decay)?,
        })
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.mode, self.classes)
    }

    pub fn normalizer(&self, resource: Resource) -> &FeatureNormalizer {
        match resource {
            Resource::Bandwidth => &self.norm_bw,
            Resource::Compute => &self.norm_vm,
        }
    }

    /// Installs previously saved normalizer state (checkpoint restore).
    pub fn set_normalizer(&mut self, resource: Resource, norm: FeatureNormalizer) -> Result<()> {
        if norm.dim() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "normalizer has {} features, environment expects {}",
                norm.dim(),
                self.feature_dim()
            )));
        }
        match resource {
            Resource::Bandwidth => self.norm_bw = norm,
            Resource::Compute => self.norm_vm = norm,
        }
        Ok(())
    }

    pub fn reset(&self, trace: &EpisodeTrace) -> Result<EnvState> {
        for ev in &trace.events {
            if ev.class >= self.classes {
                return Err(Error::InvalidArg(format!(
                    "trace event has class {} but the environment knows {} classes",
                    ev.class, self.classes
                )));
            }
        }
        Ok(EnvState::fresh(self.classes))
    }

    /// Moves a fresh state to the first decision point, applying arrivals
    /// with nothing committed yet. Returns false when the episode offers no
    /// decision at all (empty trace or zero horizon).
    pub fn advance(&self, trace: &EpisodeTrace, state: &mut EnvState) -> bool {
        self.apply_window(trace, state, None);
        state.clock < trace.horizon
    }

    /// Commits `action` at the current decision point and advances to the
    /// next one: arrivals in between join the buffers, the action drains
    /// them, and the returned loss pairs the action's cost with the buffers
    /// it leaves behind. The flag is true when the episode is over.
    pub fn step(
        &self,
        trace: &EpisodeTrace,
        state: &mut EnvState,
        action: &Allocation,
    ) -> Result<(LossBreakdown, bool)> {
        if action.bandwidth.len() != self.classes || action.compute.len() != self.classes {
            return Err(Error::Shape(format!(
                "allocation covers {} bw / {} vm classes, environment has {}",
                action.bandwidth.len(),
                action.compute.len(),
                self.classes
            )));
        }
        self.apply_window(trace, state, Some(action));
        state.decisions += 1;
        let loss = compute_loss(&state.bw_buffers, &state.vm_buffers, action, self.loss_weight);
        Ok((loss, state.clock >= trace.horizon))
    }

    /// Consumes the trace window up to the next decision point. In arrival
    /// mode that is the next event (or the horizon when none remain); in
    /// batch mode the next tick, capped at the horizon so a trailing
    /// partial window still gets served.
    fn apply_window(&self, trace: &EpisodeTrace, state: &mut EnvState, action: Option<&Allocation>) {
        let target = match self.mode {
            Mode::UponArrival => trace
                .events
                .get(state.cursor)
                .map_or(trace.horizon, |e| e.time),
            Mode::Batch => (state.last_tick + self.service_interval).min(trace.horizon),
        };

        let start = state.cursor;
        let mut arrived_bw = vec![0.0; self.classes];
        let mut arrived_vm = vec![0.0; self.classes];
        while state.cursor < trace.events.len() && trace.events[state.cursor].time <= target {
            let ev = trace.events[state.cursor];
            arrived_bw[ev.class] += ev.bw;
            arrived_vm[ev.class] += ev.vm;
            state.cursor += 1;
        }
        state.pending = trace.events[start..state.cursor].to_vec();

        state.window_start_bw.copy_from_slice(&state.bw_buffers);
        state.window_start_vm.copy_from_slice(&state.vm_buffers);
        let zero = Allocation::zeros(0);
        let (serve_bw, serve_vm) = match action {
            Some(a) => (&a.bandwidth, &a.compute),
            None => (&zero.bandwidth, &zero.compute),
        };
        for i in 0..self.classes {
            let commit = serve_bw.get(i).copied().unwrap_or(0.0);
            let available = state.bw_buffers[i] + arrived_bw[i];
            let served = commit.min(available);
            state.bw_buffers[i] = available - served;
            state.cum_arrived_bw[i] += arrived_bw[i];
            state.cum_served_bw[i] += served;

            let commit = serve_vm.get(i).copied().unwrap_or(0.0);
            let available = state.vm_buffers[i] + arrived_vm[i];
            let served = commit.min(available);
            state.vm_buffers[i] = available - served;
            state.cum_arrived_vm[i] += arrived_vm[i];
            state.cum_served_vm[i] += served;
        }

        state.last_decision_time = state.clock;
        state.clock = target;
        if self.mode == Mode::Batch {
            state.last_tick = target;
        }
    }

    /// Raw (unnormalized) observation for one resource agent at the current
    /// decision point.
    ///
    /// Arrival mode, length 2K+1: per-class amounts received since the last
    /// decision, per-class buffer levels, and the elapsed time.
    ///
    /// Batch mode, length 9K: per class the (mean, max, stddev) of the
    /// window's request amounts, of the running buffer level as each
    /// request joined, and of the inter-arrival gaps (first gap measured
    /// from the window start). Classes silent in the window contribute
    /// zeros. Stddevs are population stddevs.
    pub fn raw_features(&self, state: &EnvState, resource: Resource) -> Vec<f64> {
        let amount = |ev: &RequestEvent| match resource {
            Resource::Bandwidth => ev.bw,
            Resource::Compute => ev.vm,
        };
        match self.mode {
            Mode::UponArrival => {
                let mut feats = vec![0.0; 2 * self.classes + 1];
                for ev in &state.pending {
                    feats[ev.class] += amount(ev);
                }
                feats[self.classes..2 * self.classes].copy_from_slice(state.buffers(resource));
                feats[2 * self.classes] = state.clock - state.last_decision_time;
                feats
            }
            Mode::Batch => {
                let window_start_level = match resource {
                    Resource::Bandwidth => &state.window_start_bw,
                    Resource::Compute => &state.window_start_vm,
                };
                let mut feats = Vec::with_capacity(9 * self.classes);
                for class in 0..self.classes {
                    let events: Vec<&RequestEvent> =
                        state.pending.iter().filter(|e| e.class == class).collect();
                    if events.is_empty() {
                        feats.extend_from_slice(&[0.0; 9]);
                        continue;
                    }
                    let amounts: Vec<f64> = events.iter().map(|e| amount(e)).collect();
                    let mut level = window_start_level[class];
                    let levels: Vec<f64> = amounts
                        .iter()
                        .map(|a| {
                            level += a;
                            level
                        })
                        .collect();
                    let mut prev_time = state.last_decision_time;
                    let gaps: Vec<f64> = events
                        .iter()
                        .map(|e| {
                            let gap = e.time - prev_time;
                            prev_time = e.time;
                            gap
                        })
                        .collect();
                    for series in [&amounts, &levels, &gaps] {
                        let (mean, max, std) = summary(series);
                        feats.extend_from_slice(&[mean, max, std]);
                    }
                }
                feats
            }
        }
    }

    /// Normalized observation; updates the resource's running peaks.
    pub fn features(&mut self, state: &EnvState, resource: Resource) -> Vec<f64> {
        let raw = self.raw_features(state, resource);
        match resource {
            Resource::Bandwidth => self.norm_bw.apply(&raw),
            Resource::Compute => self.norm_vm.apply(&raw),
        }
    }
}

fn feature_dim(mode: Mode, classes: usize) -> usize {
    match mode {
        Mode::UponArrival => 2 * classes + 1,
        Mode::Batch => 9 * classes,
    }
}

/// Mean, max, and population stddev of a non-empty series.
fn summary(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let max = values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let var = values
        .iter()
        .map(|v| {
            let d = v - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, max, var.sqrt())
}
