//! Experiment configuration, read from and echoed as TOML.
//!
//! ```toml
//! seed = 0
//! rounds = 10
//! participation_fraction = 1.0
//! server_pool_fraction = 0.2     # 0 keeps all training data on clients
//! eval_every = 1
//!
//! [dataset]
//! kind = "swiss_roll"            # or "csv" with `train`, `test` paths
//! train_per_class = 400
//!
//! [partition]
//! kind = "step"                  # "iid" | "step" | "dirichlet"
//! client_count = 3
//! step_major_classes = 1
//! step_major_count = 320
//! step_minor_count = 40
//!
//! [model]
//! hidden = [32]
//! activation = "relu"
//!
//! [client]
//! local_epochs = 2
//!
//! [strategy]
//! kind = "fed_be"                # "fed_avg" | "fed_avg_m" | "v_distill" | "fed_be"
//!
//! [heterogeneity]
//! kind = "off"                   # or "uniform" with `max_epochs`
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PartitionSpec, SwissRollSpec};
use crate::error::{Error, Result};
use crate::fed::{ClientConfig, ServerStrategy};
use crate::nn::{Activation, MlpArch};
use crate::posterior::ModelSetSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    SwissRoll(SwissRollSpec),
    /// CSV files with `x0..x{d-1},label` columns.
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        class_count: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, input_dim: usize, classes: usize) -> Result<MlpArch> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(classes);
        MlpArch::new(sizes, self.activation)
    }
}

/// Systems heterogeneity: per-client effective epochs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Heterogeneity {
    #[default]
    Off,
    /// Effective epochs drawn uniformly from `(0, max_epochs]`.
    Uniform { max_epochs: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub rounds: usize,
    #[serde(default = "one_f64")]
    pub participation_fraction: f64,
    #[serde(default)]
    pub server_pool_fraction: f64,
    #[serde(default = "one_usize")]
    pub eval_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; 0 uses the rayon default. Results do not depend on it.
    #[serde(default)]
    pub threads: usize,
    /// Fill the `wall_ms` metrics column. Off by default because timings
    /// make the metrics file non-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "ten")]
    pub histogram_bins: usize,
    /// Write the final round's pseudo-labeled set to `pseudo_labels.csv`.
    #[serde(default)]
    pub dump_pseudo_labels: bool,
    pub dataset: DatasetConfig,
    pub partition: PartitionSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub client: ClientConfig,
    pub strategy: ServerStrategy,
    #[serde(default)]
    pub heterogeneity: Heterogeneity,
    /// Observe a Bayesian ensemble every evaluated round without feeding it
    /// back into training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<ModelSetSpec>,
}

fn one_f64() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn ten() -> usize {
    10
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn clients_per_round(&self) -> usize {
        (self.participation_fraction * self.partition.client_count as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(Error::Config("participation_fraction must lie in (0, 1]".into()));
        }
        if self.clients_per_round() < 1 || self.partition.client_count == 0 {
            return Err(Error::Config("at least one client must participate".into()));
        }
        if !(0.0..1.0).contains(&self.server_pool_fraction) {
            return Err(Error::Config("server_pool_fraction must lie in [0, 1)".into()));
        }
        if self.strategy.needs_unlabeled() && self.server_pool_fraction == 0.0 {
            return Err(Error::Config(format!(
                "strategy {} needs server_pool_fraction > 0",
                self.strategy.name()
            )));
        }
        if self.eval_every == 0 || self.histogram_bins == 0 {
            return Err(Error::Config("eval_every and histogram_bins must be positive".into()));
        }
        if let Heterogeneity::Uniform { max_epochs } = self.heterogeneity {
            if !(max_epochs > 0.0) {
                return Err(Error::Config("heterogeneity max_epochs must be positive".into()));
            }
        }
        if self.monitor.is_some() && self.strategy != ServerStrategy::FedAvg {
            return Err(Error::Config("monitoring is defined for the fed_avg strategy".into()));
        }
        self.client.validate()?;
        self.strategy.validate()
    }
}
