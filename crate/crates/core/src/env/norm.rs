//! Running feature normalization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_NORM_DECAY: f64 = 0.999;

/// Per-feature running maximum with exponential decay. Dividing each raw
/// feature by its decayed peak keeps policy inputs near [0, 1] whatever the
/// traffic scale, while still letting the scale adapt when load drops.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNormalizer {
    decay: f64,
    running_max: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn new(dim: usize, decay: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArg("normalizer needs at least one feature".into()));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::InvalidArg(format!(
                "normalization decay must lie in (0, 1], got {decay}"
            )));
        }
        Ok(FeatureNormalizer {
            decay,
            running_max: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.running_max.len()
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Updates the running peaks with `raw` and returns the scaled vector.
    /// A feature whose peak is still zero passes through as zero.
    pub fn apply(&mut self, raw: &[f64]) -> Vec<f64> {
        assert_eq!(raw.len(), self.running_max.len(), "feature width changed");
        raw.iter()
            .zip(self.running_max.iter_mut())
            .map(|(&x, m)| {
                *m = (*m * self.decay).max(x.abs());
                if *m > 0.0 {
                    x / *m
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "decay {}", self.decay)?;
        let peaks: Vec<String> = self.running_max.iter().map(|v| v.to_string()).collect();
        writeln!(w, "max {}", peaks.join(" "))?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let origin = path.display().to_string();
        let parse_err = |line: usize, msg: &str| Error::Parse {
            path: origin.clone(),
            line,
            msg: msg.to_string(),
        };
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing decay line"))??;
        let decay: f64 = first
            .strip_prefix("decay ")
            .ok_or_else(|| parse_err(1, "expected `decay <value>`"))?
            .trim()
            .parse()
            .map_err(|_| parse_err(1, "bad decay value"))?;
        let second = lines
            .next()
            .ok_or_else(|| parse_err(2, "missing max line"))??;
        let body = second
            .strip_prefix("max")
            .ok_or_else(|| parse_err(2, "expected `max <values>`"))?;
        let mut running_max = Vec::new();
        for tok in body.split_whitespace() {
            running_max.push(
                tok.parse::<f64>()
                    .map_err(|_| parse_err(2, "bad peak value"))?,
            );
        }
        if running_max.is_empty() {
            return Err(parse_err(2, "no peak values"));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(parse_err(1, "decay out of range"));
        }
        Ok(FeatureNormalizer { decay, running_max })
    }
}
