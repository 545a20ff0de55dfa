//! Real-trace ingestion: two-column delimited files for job arrivals and
//! bandwidth measurements, plus the merge that pairs them into requests.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{split_fields, EpisodeTrace, RequestEvent};
use crate::error::{Error, Result};

/// Where to find the two columns of interest in a wider trace file, and how
/// to bring its clock into simulation units. Defaults fit plain
/// `time,value` files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnMap {
    pub time: usize,
    pub value: usize,
    pub time_scale: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            time: 0,
            value: 1,
            time_scale: 1.0,
        }
    }
}

/// Loads (arrival time, job size) pairs sorted by arrival time.
pub fn load_job_trace(path: &Path) -> Result<Vec<(f64, f64)>> {
    load_job_trace_with(path, &ColumnMap::default())
}

pub fn load_job_trace_with(path: &Path, map: &ColumnMap) -> Result<Vec<(f64, f64)>> {
    load_columns(path, map, "job size")
}

/// Loads (timestamp, bandwidth) samples sorted by timestamp.
pub fn load_bandwidth_trace(path: &Path) -> Result<Vec<(f64, f64)>> {
    load_bandwidth_trace_with(path, &ColumnMap::default())
}

pub fn load_bandwidth_trace_with(path: &Path, map: &ColumnMap) -> Result<Vec<(f64, f64)>> {
    load_columns(path, map, "bandwidth")
}

fn load_columns(path: &Path, map: &ColumnMap, value_label: &str) -> Result<Vec<(f64, f64)>> {
    if !(map.time_scale > 0.0 && map.time_scale.is_finite()) {
        return Err(Error::InvalidArg(format!(
            "time scale must be positive, got {}",
            map.time_scale
        )));
    }
    let origin = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<(f64, f64)> = Vec::new();
    let mut header_allowance = true;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields = split_fields(text);
        match parse_row(&fields, map, value_label) {
            Ok(row) => {
                header_allowance = false;
                rows.push(row);
            }
            Err(msg) => {
                if header_allowance {
                    header_allowance = false;
                    continue;
                }
                return Err(Error::Parse {
                    path: origin,
                    line: idx + 1,
                    msg,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty(origin));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(rows)
}

fn parse_row(
    fields: &[&str],
    map: &ColumnMap,
    value_label: &str,
) -> std::result::Result<(f64, f64), String> {
    let needed = map.time.max(map.value) + 1;
    if fields.len() < needed {
        return Err(format!(
            "expected at least {needed} columns, got {}",
            fields.len()
        ));
    }
    let time: f64 = fields[map.time]
        .parse()
        .map_err(|_| format!("bad time value {:?}", fields[map.time]))?;
    let value: f64 = fields[map.value]
        .parse()
        .map_err(|_| format!("bad {value_label} value {:?}", fields[map.value]))?;
    if !time.is_finite() || time < 0.0 {
        return Err(format!("time {time} must be finite and non-negative"));
    }
    if !value.is_finite() || value < 0.0 {
        return Err(format!("{value_label} {value} must be finite and non-negative"));
    }
    Ok((time * map.time_scale, value))
}

/// Pairs each job arrival with a bandwidth demand: the maximum sample in
/// the window since the previous arrival (half-open, closing at the
/// arrival). The first window opens at the start of the bandwidth trace.
/// A window with no samples carries the most recent earlier sample
/// forward; a job earlier than every sample takes the first one.
pub fn merge_traces(
    jobs: &[(f64, f64)],
    bandwidth: &[(f64, f64)],
    class: usize,
) -> Result<EpisodeTrace> {
    if jobs.is_empty() {
        return Err(Error::Empty("job trace has no rows".into()));
    }
    if bandwidth.is_empty() {
        return Err(Error::Empty("bandwidth trace has no rows".into()));
    }
    let mut jobs = jobs.to_vec();
    jobs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut samples = bandwidth.to_vec();
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut events = Vec::with_capacity(jobs.len());
    let mut next = 0; // first sample not yet consumed by an earlier window
    let mut carry: Option<f64> = None;
    for &(arrival, size) in &jobs {
        let mut window_max: Option<f64> = None;
        while next < samples.len() && samples[next].0 <= arrival {
            let v = samples[next].1;
            window_max = Some(window_max.map_or(v, |m: f64| m.max(v)));
            carry = Some(v);
            next += 1;
        }
        let bw = window_max
            .or(carry)
            // No sample at or before this window: fall forward to the
            // earliest one in the trace.
            .unwrap_or(samples[0].1);
        events.push(RequestEvent {
            time: arrival,
            class,
            bw,
            vm: size,
        });
    }
    let horizon = jobs.last().unwrap().0;
    EpisodeTrace::new(horizon, events)
}
