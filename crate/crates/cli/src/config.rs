//! Run configuration file: every field optional, command-line flags win.

use std::path::{Path, PathBuf};

use pflat_core::evaluation::{MetricName, SweepVariable};
use pflat_core::flat_prefix::SamConfig;
use pflat_core::io::load_json;
use pflat_core::metrics::{DivergenceKind, LossKind};
use pflat_core::model::{LogisticBagConfig, TransformerConfig};
use pflat_core::perturb::{PerturbationConfig, SensitivitySetConfig};
use pflat_core::selection::AlphaGrid;
use pflat_core::Result;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub variable: Option<SweepVariable>,
    pub values: Option<Vec<f64>>,
    pub repeats: Option<usize>,
    pub metric: Option<MetricName>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: Option<PathBuf>,
    pub verbalizer: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub perturbation: PerturbationConfig,
    pub sensitivity: SensitivitySetConfig,
    pub loss_kind: LossKind,
    pub divergence: DivergenceKind,
    pub alpha: Option<f64>,
    pub grid: Option<AlphaGrid>,
    pub metrics: Option<Vec<MetricName>>,
    pub sam: SamConfig,
    pub fit: LogisticBagConfig,
    pub transformer: Option<TransformerConfig>,
    pub sweep: SweepSection,
}

impl RunConfig {
    /// Read a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = load_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.model,
            &mut cfg.verbalizer,
            &mut cfg.pool,
            &mut cfg.data,
            &mut cfg.train,
            &mut cfg.dev,
            &mut cfg.test,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Push one master seed into every seeded sub-config.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.perturbation.master_seed = seed;
        self.sensitivity.seed = seed;
        self.sam.seed = seed;
        self.fit.seed = seed;
    }
}
