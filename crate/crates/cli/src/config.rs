//! TOML run configuration with CLI overrides.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use slicesim::learner::{BaselineMode, GradientEstimator};
use slicesim::{ClassSpec, Mode};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub network: Network,
    #[serde(default)]
    pub training: Training,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// "arrival" or "batch".
    #[serde(default = "defaults::mode")]
    pub mode: String,
    /// Confidence level c in the budget formula, 0..=3.
    #[serde(default)]
    pub budget_level: u8,
    /// Levels swept by `compare`.
    #[serde(default = "defaults::budget_levels")]
    pub budget_levels: Vec<u8>,
    #[serde(default = "defaults::one")]
    pub loss_weight: f64,
    #[serde(default = "defaults::service_interval")]
    pub service_interval: f64,
    #[serde(default = "defaults::horizon")]
    pub horizon: f64,
    #[serde(default = "defaults::norm_decay")]
    pub norm_decay: f64,
    /// Synthetic traffic classes; ignored when `traces` is set.
    #[serde(default)]
    pub classes: Vec<ClassConfig>,
    /// Real-trace ingestion; its presence switches the workload source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traces: Option<TracesConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    pub arrival_rate: f64,
    pub bw_min: f64,
    pub bw_max: f64,
    pub vm_min: f64,
    pub vm_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracesConfig {
    /// One job-arrival file per class.
    pub job_paths: Vec<String>,
    /// One bandwidth file shared by all classes, or one per class.
    pub bandwidth_paths: Vec<String>,
    #[serde(default)]
    pub job_time_column: usize,
    #[serde(default = "defaults::col_one")]
    pub job_value_column: usize,
    #[serde(default = "defaults::one")]
    pub job_time_scale: f64,
    #[serde(default)]
    pub bw_time_column: usize,
    #[serde(default = "defaults::col_one")]
    pub bw_value_column: usize,
    #[serde(default = "defaults::one")]
    pub bw_time_scale: f64,
    #[serde(default = "defaults::train_fraction")]
    pub train_fraction: f64,
    /// Demands are rescaled so the largest is this big.
    #[serde(default = "defaults::scale_target")]
    pub scale_target: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Network {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    /// Exploration stddev as a fraction of budget per class.
    pub explore_frac: f64,
}

impl Default for Network {
    fn default() -> Self {
        Network {
            hidden: vec![1000, 1000, 1000],
            leaky_slope: 0.01,
            explore_frac: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Training {
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub learning_rate: f64,
    pub discount: f64,
    pub seed_workload: u64,
    pub seed_init: u64,
    pub seed_explore: u64,
    /// "mean" or "none".
    pub baseline: String,
    /// "score" or "pathwise".
    pub estimator: String,
    /// Evaluation threads.
    pub workers: usize,
}

impl Default for Training {
    fn default() -> Self {
        Training {
            train_episodes: 300,
            test_episodes: 50,
            learning_rate: 1e-3,
            discount: 0.99,
            seed_workload: 1,
            seed_init: 2,
            seed_explore: 3,
            baseline: "mean".into(),
            estimator: "score".into(),
            workers: 1,
        }
    }
}

mod defaults {
    pub fn mode() -> String {
        "arrival".into()
    }
    pub fn budget_levels() -> Vec<u8> {
        vec![0, 1, 2, 3]
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn col_one() -> usize {
        1
    }
    pub fn service_interval() -> f64 {
        10.0
    }
    pub fn horizon() -> f64 {
        100.0
    }
    pub fn norm_decay() -> f64 {
        slicesim::env::DEFAULT_NORM_DECAY
    }
    pub fn train_fraction() -> f64 {
        0.9
    }
    pub fn scale_target() -> f64 {
        1000.0
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.mode()?;
        self.baseline()?;
        self.estimator()?;
        if self.scenario.budget_level > 3 {
            bail!("scenario.budget_level must be 0..=3");
        }
        if self.scenario.budget_levels.iter().any(|l| *l > 3) {
            bail!("scenario.budget_levels entries must be 0..=3");
        }
        if self.scenario.budget_levels.is_empty() {
            bail!("scenario.budget_levels must not be empty");
        }
        if !(self.scenario.horizon > 0.0 && self.scenario.horizon.is_finite()) {
            bail!("scenario.horizon must be positive");
        }
        if self.network.hidden.is_empty() || self.network.hidden.iter().any(|h| *h == 0) {
            bail!("network.hidden needs at least one positive layer width");
        }
        if !(self.training.learning_rate > 0.0) {
            bail!("training.learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.training.discount) {
            bail!("training.discount must lie in [0, 1]");
        }
        if self.training.workers == 0 {
            bail!("training.workers must be at least 1");
        }
        match &self.scenario.traces {
            None => {
                if self.scenario.classes.is_empty() {
                    bail!("scenario.classes must list at least one class (or set scenario.traces)");
                }
                self.class_specs()?;
            }
            Some(t) => {
                if t.job_paths.is_empty() {
                    bail!("scenario.traces.job_paths must not be empty");
                }
                if t.bandwidth_paths.len() != 1 && t.bandwidth_paths.len() != t.job_paths.len() {
                    bail!(
                        "scenario.traces.bandwidth_paths needs one entry or one per class ({} classes, {} entries)",
                        t.job_paths.len(),
                        t.bandwidth_paths.len()
                    );
                }
                if !(t.train_fraction > 0.0 && t.train_fraction < 1.0) {
                    bail!("scenario.traces.train_fraction must lie strictly inside (0, 1)");
                }
                if !(t.scale_target > 0.0) {
                    bail!("scenario.traces.scale_target must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> Result<Mode> {
        self.scenario
            .mode
            .parse()
            .map_err(|e: slicesim::Error| anyhow::anyhow!(e))
    }

    pub fn baseline(&self) -> Result<BaselineMode> {
        match self.training.baseline.as_str() {
            "mean" => Ok(BaselineMode::EpisodeMean),
            "none" => Ok(BaselineMode::Zero),
            other => bail!("training.baseline must be `mean` or `none`, got {other:?}"),
        }
    }

    pub fn estimator(&self) -> Result<GradientEstimator> {
        match self.training.estimator.as_str() {
            "score" => Ok(GradientEstimator::Score),
            "pathwise" => Ok(GradientEstimator::Pathwise),
            other => bail!("training.estimator must be `score` or `pathwise`, got {other:?}"),
        }
    }

    /// Number of traffic classes, whichever workload source is active.
    pub fn class_count(&self) -> usize {
        match &self.scenario.traces {
            Some(t) => t.job_paths.len(),
            None => self.scenario.classes.len(),
        }
    }

    pub fn class_specs(&self) -> Result<Vec<ClassSpec>> {
        let specs: Vec<ClassSpec> = self
            .scenario
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| ClassSpec {
                class: i,
                arrival_rate: c.arrival_rate,
                bw_range: (c.bw_min, c.bw_max),
                vm_range: (c.vm_min, c.vm_max),
                service_interval: self.scenario.service_interval,
            })
            .collect();
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }

    /// Serialized form written next to the outputs of every run.
    pub fn resolved_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Flag overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed_workload: Option<u64>,
    pub seed_init: Option<u64>,
    pub seed_explore: Option<u64>,
    pub mode: Option<String>,
    pub budget_level: Option<u8>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed_workload {
            cfg.training.seed_workload = s;
        }
        if let Some(s) = self.seed_init {
            cfg.training.seed_init = s;
        }
        if let Some(s) = self.seed_explore {
            cfg.training.seed_explore = s;
        }
        if let Some(m) = &self.mode {
            cfg.scenario.mode = m.clone();
        }
        if let Some(l) = self.budget_level {
            cfg.scenario.budget_level = l;
        }
        if let Some(w) = self.workers {
            cfg.training.workers = w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[scenario]
[[scenario.classes]]
arrival_rate = 2.0
bw_min = 100.0
bw_max = 150.0
vm_min = 500.0
vm_max = 600.0
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.scenario.mode, "arrival");
        assert_eq!(cfg.network.hidden, vec![1000, 1000, 1000]);
        assert_eq!(cfg.training.train_episodes, 300);
        assert_eq!(cfg.training.workers, 1);
        assert_eq!(cfg.class_count(), 1);
        let specs = cfg.class_specs().unwrap();
        assert_eq!(specs[0].bw_range, (100.0, 150.0));
        assert_eq!(specs[0].service_interval, 10.0);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("{MINIMAL}\n[training]\nlerning_rate = 0.1\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        let ov = Overrides {
            seed_workload: Some(99),
            mode: Some("batch".into()),
            budget_level: Some(2),
            ..Overrides::default()
        };
        ov.apply(&mut cfg);
        assert_eq!(cfg.training.seed_workload, 99);
        assert_eq!(cfg.mode().unwrap(), Mode::Batch);
        assert_eq!(cfg.scenario.budget_level, 2);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.scenario.budget_level = 7;
        assert!(cfg.validate().is_err());

        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.training.baseline = "median".into();
        assert!(cfg.validate().is_err());

        let mut cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.scenario.classes.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        let text = cfg.resolved_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.training.train_episodes, cfg.training.train_episodes);
        assert_eq!(back.scenario.classes.len(), 1);
    }
}
