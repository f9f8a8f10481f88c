//! Experiment configuration files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use qpd_strat::circuits::InstanceSpec;
use qpd_strat::sampling::MeasurementModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Design {
    #[serde(rename = "naive")]
    Naive,
    #[serde(rename = "stratified-counts")]
    Counts,
    #[serde(rename = "stratified-parity")]
    Parity,
    #[serde(rename = "stratified-neyman")]
    Neyman,
}

impl Design {
    pub fn name(self) -> &'static str {
        match self {
            Design::Naive => "naive",
            Design::Counts => "stratified-counts",
            Design::Parity => "stratified-parity",
            Design::Neyman => "stratified-neyman",
        }
    }

    /// Stratification statistic recorded in the CSV `statistic` column.
    pub fn statistic(self) -> &'static str {
        match self {
            Design::Naive => "none",
            Design::Counts | Design::Neyman => "counts",
            Design::Parity => "parity",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "naive" => Design::Naive,
            "stratified-counts" | "counts" => Design::Counts,
            "stratified-parity" | "parity" => Design::Parity,
            "stratified-neyman" | "neyman" => Design::Neyman,
            other => bail!("unknown design {other:?}"),
        })
    }
}

fn default_designs() -> Vec<Design> {
    vec![Design::Naive, Design::Counts]
}
fn default_k() -> usize {
    8192
}
fn default_models() -> Vec<String> {
    vec!["oracle".into()]
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_b() -> usize {
    1024
}
fn default_level() -> f64 {
    0.95
}

/// One experiment: an instance, optional depth sweep, designs, budget,
/// measurement models, seeds and bootstrap settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    /// Depths to sweep; empty means the instance's own `L`.
    #[serde(default)]
    pub depths: Vec<usize>,
    #[serde(default = "default_designs")]
    pub designs: Vec<Design>,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    /// `"oracle"`, `"shots:R"` or `"single-shot"`.
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Bootstrap resamples.
    #[serde(rename = "B", default = "default_b")]
    pub b: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn new(instance: InstanceSpec) -> Self {
        Self {
            instance,
            depths: Vec::new(),
            designs: default_designs(),
            k: default_k(),
            models: default_models(),
            seeds: default_seeds(),
            b: default_b(),
            level: default_level(),
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            bail!("K must be at least 2, got {}", self.k);
        }
        if self.designs.is_empty() {
            bail!("designs must be non-empty");
        }
        if self.seeds.is_empty() {
            bail!("seeds must be non-empty");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            bail!("level must lie in (0, 1), got {}", self.level);
        }
        self.parsed_models()?;
        Ok(())
    }

    pub fn parsed_models(&self) -> Result<Vec<MeasurementModel>> {
        if self.models.is_empty() {
            bail!("models must be non-empty");
        }
        self.models
            .iter()
            .map(|m| m.parse::<MeasurementModel>().map_err(|e| anyhow::anyhow!("{e}")))
            .collect()
    }

    /// Instances for every depth in the sweep.
    pub fn instances(&self) -> Vec<InstanceSpec> {
        if self.depths.is_empty() {
            return vec![self.instance.clone()];
        }
        self.depths.iter().map(|&depth| InstanceSpec { depth, ..self.instance.clone() }).collect()
    }
}

/// Reads an instance from a file path or an inline JSON object.
pub fn load_instance(arg: &str) -> Result<InstanceSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?
    };
    InstanceSpec::from_json(&text).map_err(|e| anyhow::anyhow!("parsing instance: {e}"))
}
