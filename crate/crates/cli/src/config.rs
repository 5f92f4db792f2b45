//! TOML run configuration.
//!
//! ```toml
//! [design]
//! model = "model1"
//! n = 200
//! periods = 5
//! replications = 500
//! full_replications = 1000
//! seed = 20240601
//!
//! [[methods]]
//! method = "giicov"
//! reps = 10
//!
//! [output]
//! dir = "results/table1_model1"
//! ```
//!
//! `[design]` describes the data-generating process, each `[[methods]]`
//! table is one estimator (any key of `EstimOptions`), `[estimate]` holds
//! the start value for single estimations and `[output]` the destination.
//! Unknown keys are rejected by name.

use std::path::{Path, PathBuf};

use giicov::estimate::EstimOptions;
use giicov::mc::McDesign;
use serde::Deserialize;

/// Data-generating process and replication plan.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub model: String,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    pub n: Option<usize>,
    /// Total periods per unit, including unobserved initial ones.
    pub periods: Option<usize>,
    pub replications: Option<usize>,
    /// Replications used with `--full`.
    pub full_replications: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub start: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub design: DesignSection,
    #[serde(default)]
    pub methods: Vec<EstimOptions>,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub output: OutputSection,
}

pub const DEFAULT_REPLICATIONS: usize = 500;
pub const FULL_REPLICATIONS: usize = 1000;

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Monte Carlo design, with `--full` selecting the long replication count.
    pub fn mc_design(&self, full: bool) -> anyhow::Result<McDesign> {
        let d = &self.design;
        let replications = if full {
            d.full_replications.unwrap_or(FULL_REPLICATIONS)
        } else {
            d.replications.unwrap_or(DEFAULT_REPLICATIONS)
        };
        let methods = if self.methods.is_empty() {
            vec![EstimOptions::default()]
        } else {
            self.methods.clone()
        };
        Ok(McDesign {
            model: d.model.clone(),
            theta0: d.theta0.clone(),
            n: d.n.ok_or_else(|| anyhow::anyhow!("[design] needs n"))?,
            periods: d.periods.ok_or_else(|| anyhow::anyhow!("[design] needs periods"))?,
            replications,
            seed: d.seed,
            threads: d.threads,
            methods,
        })
    }
}
