//! Request workloads: synthetic episode generation, real-trace ingestion,
//! and the episode trace container shared by the simulator.

mod synthetic;
mod trace;

pub use synthetic::gen_synthetic_episode;
pub use trace::{
    load_bandwidth_trace, load_bandwidth_trace_with, load_job_trace, load_job_trace_with,
    merge_traces, ColumnMap,
};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One traffic class: Poisson arrivals with uniformly distributed demands.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    /// Position of the class in the scenario list (0-based; written to trace files as-is).
    pub class: usize,
    /// Expected arrivals per unit time.
    pub arrival_rate: f64,
    /// Inclusive bounds of the uniform bandwidth demand per request.
    pub bw_range: (f64, f64),
    /// Inclusive bounds of the uniform compute demand per request.
    pub vm_range: (f64, f64),
    /// Service interval the class is provisioned over in batch mode.
    pub service_interval: f64,
}

impl ClassSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate > 0.0 && self.arrival_rate.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "class {}: arrival rate must be positive, got {}",
                self.class, self.arrival_rate
            )));
        }
        for (label, (lo, hi)) in [("bw", self.bw_range), ("vm", self.vm_range)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(Error::InvalidArg(format!(
                    "class {}: {label} bounds must satisfy 0 <= lo <= hi, got ({lo}, {hi})",
                    self.class
                )));
            }
        }
        if !(self.service_interval > 0.0 && self.service_interval.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "class {}: service interval must be positive",
                self.class
            )));
        }
        Ok(())
    }
}

/// A single slice request: when it lands, whose it is, what it asks for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequestEvent {
    pub time: f64,
    pub class: usize,
    pub bw: f64,
    pub vm: f64,
}

/// Arrival events of one episode, sorted by time, all within [0, horizon].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub horizon: f64,
    pub events: Vec<RequestEvent>,
}

impl EpisodeTrace {
    /// Validates and sorts the events (by time, ties by class).
    pub fn new(horizon: f64, mut events: Vec<RequestEvent>) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "horizon must be finite and non-negative, got {horizon}"
            )));
        }
        for ev in &events {
            if !(ev.time.is_finite() && ev.time >= 0.0 && ev.time <= horizon) {
                return Err(Error::InvalidArg(format!(
                    "event time {} outside [0, {horizon}]",
                    ev.time
                )));
            }
            if !(ev.bw.is_finite() && ev.bw >= 0.0 && ev.vm.is_finite() && ev.vm >= 0.0) {
                return Err(Error::InvalidArg(format!(
                    "event at t={} has negative or non-finite demand",
                    ev.time
                )));
            }
        }
        events.sort_by(|a, b| {
            a.time
                .partial_cmp(&b.time)
                .unwrap()
                .then(a.class.cmp(&b.class))
        });
        Ok(EpisodeTrace { horizon, events })
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Scale factors that map the largest demand of each resource to
    /// `target` units. Resources with no demand map to factor 1.
    pub fn normalization_factors(&self, target: f64) -> (f64, f64) {
        let max_of = |f: fn(&RequestEvent) -> f64| {
            self.events.iter().map(f).fold(0.0_f64, f64::max)
        };
        let (max_bw, max_vm) = (max_of(|e| e.bw), max_of(|e| e.vm));
        let factor = |m: f64| if m > 0.0 { target / m } else { 1.0 };
        (factor(max_bw), factor(max_vm))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# horizon={}", self.horizon)?;
        writeln!(w, "time,class,bw,vm")?;
        for ev in &self.events {
            writeln!(w, "{},{},{},{}", ev.time, ev.class, ev.bw, ev.vm)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        Self::read_from(BufReader::new(File::open(path)?), &origin)
    }

    /// Parses the delimited form written by [`EpisodeTrace::save`]. Leading
    /// `#` comments may carry the horizon; one non-numeric header line is
    /// tolerated. Without a horizon comment the last event time is used.
    pub fn read_from<R: BufRead>(reader: R, origin: &str) -> Result<Self> {
        let mut horizon: Option<f64> = None;
        let mut events = Vec::new();
        let mut header_allowance = true;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            if let Some(comment) = text.strip_prefix('#') {
                if let Some(value) = comment.trim().strip_prefix("horizon=") {
                    horizon = value.trim().parse::<f64>().ok();
                }
                continue;
            }
            let fields = split_fields(text);
            match parse_event(&fields) {
                Ok(ev) => {
                    header_allowance = false;
                    events.push(ev);
                }
                Err(msg) => {
                    if header_allowance {
                        // One leading non-numeric header line is fine.
                        header_allowance = false;
                        continue;
                    }
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line: idx + 1,
                        msg,
                    });
                }
            }
        }
        if events.is_empty() && horizon.is_none() {
            return Err(Error::Empty(origin.to_string()));
        }
        let horizon = horizon.unwrap_or_else(|| {
            events.iter().map(|e| e.time).fold(0.0_f64, f64::max)
        });
        EpisodeTrace::new(horizon, events)
    }
}

/// Splits a data row on commas when present, otherwise on whitespace.
pub(crate) fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_event(fields: &[&str]) -> std::result::Result<RequestEvent, String> {
    if fields.len() < 4 {
        return Err(format!("expected 4 columns time,class,bw,vm, got {}", fields.len()));
    }
    let time: f64 = fields[0]
        .parse()
        .map_err(|_| format!("bad time value {:?}", fields[0]))?;
    let class: usize = fields[1]
        .parse()
        .map_err(|_| format!("bad class value {:?}", fields[1]))?;
    let bw: f64 = fields[2]
        .parse()
        .map_err(|_| format!("bad bw value {:?}", fields[2]))?;
    let vm: f64 = fields[3]
        .parse()
        .map_err(|_| format!("bad vm value {:?}", fields[3]))?;
    Ok(RequestEvent { time, class, bw, vm })
}

/// First ceil(fraction * n) events (by time) go to training; the rest form
/// the test trace with times re-based so its first event sits at zero.
pub fn split_trace(trace: &EpisodeTrace, fraction: f64) -> Result<(EpisodeTrace, EpisodeTrace)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArg(format!(
            "split fraction must lie strictly inside (0, 1), got {fraction}"
        )));
    }
    if trace.is_empty() {
        return Err(Error::Empty("cannot split a trace with no events".into()));
    }
    let n = trace.events.len();
    // Nudge below the exact product so 0.9 * 10 does not ceil to 10 through
    // float representation error.
    let cut = ((fraction * n as f64) - 1e-9).ceil() as usize;
    let cut = cut.clamp(1, n);

    let train_events = trace.events[..cut].to_vec();
    let (train_horizon, test) = if cut < n {
        let shift = trace.events[cut].time;
        let test_events = trace.events[cut..]
            .iter()
            .map(|ev| RequestEvent {
                time: ev.time - shift,
                ..*ev
            })
            .collect();
        (
            shift,
            EpisodeTrace::new(trace.horizon - shift, test_events)?,
        )
    } else {
        (trace.horizon, EpisodeTrace::new(0.0, Vec::new())?)
    };
    Ok((EpisodeTrace::new(train_horizon, train_events)?, test))
}

/// Multiplies every demand by the per-resource factor (both must be positive).
pub fn scale_trace(trace: &EpisodeTrace, bw_factor: f64, vm_factor: f64) -> Result<EpisodeTrace> {
    for (label, f) in [("bw", bw_factor), ("vm", vm_factor)] {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "{label} scale factor must be positive and finite, got {f}"
            )));
        }
    }
    let events = trace
        .events
        .iter()
        .map(|ev| RequestEvent {
            bw: ev.bw * bw_factor,
            vm: ev.vm * vm_factor,
            ..*ev
        })
        .collect();
    EpisodeTrace::new(trace.horizon, events)
}

/// Union of several per-class traces on a shared clock; the horizon is the
/// longest of the parts.
pub fn combine_traces(parts: &[EpisodeTrace]) -> Result<EpisodeTrace> {
    if parts.is_empty() {
        return Err(Error::Empty("no traces to combine".into()));
    }
    let horizon = parts.iter().map(|t| t.horizon).fold(0.0_f64, f64::max);
    let events = parts.iter().flat_map(|t| t.events.iter().copied()).collect();
    EpisodeTrace::new(horizon, events)
}
