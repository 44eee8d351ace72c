use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackKind, AttackSchedule};
use crate::baselines::AggregatorKind;
use crate::data::{self, BlobSpec, LabeledDataset};
use crate::error::{FedFgError, Result};
use crate::model::ArchConfig;
use crate::nn::TrainConfig;
use crate::rng::{derive_seed, Stream};
use crate::server::ServerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        #[serde(default = "defaults::classes")]
        classes: usize,
        #[serde(default = "defaults::dim")]
        dim: usize,
        #[serde(default = "defaults::per_class")]
        per_class: usize,
        #[serde(default = "defaults::separation")]
        separation: f64,
        #[serde(default = "defaults::noise_std")]
        noise_std: f64,
    },
    /// Uncompressed IDX image/label pair; `limit` keeps the first samples only.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

mod defaults {
    pub fn classes() -> usize {
        10
    }
    pub fn dim() -> usize {
        16
    }
    pub fn per_class() -> usize {
        200
    }
    pub fn separation() -> f64 {
        6.0
    }
    pub fn noise_std() -> f64 {
        1.0
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
}

impl Default for DatasetSpec {
    fn default() -> Self {
        let b = BlobSpec::default();
        DatasetSpec::Blobs {
            classes: b.classes,
            dim: b.dim,
            per_class: b.per_class,
            separation: b.separation,
            noise_std: b.noise_std,
        }
    }
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<LabeledDataset> {
        match self {
            DatasetSpec::Blobs {
                classes,
                dim,
                per_class,
                separation,
                noise_std,
            } => data::make_blobs(
                &BlobSpec {
                    classes: *classes,
                    dim: *dim,
                    per_class: *per_class,
                    separation: *separation,
                    noise_std: *noise_std,
                },
                derive_seed(seed, Stream::Data, 0, 0),
            ),
            DatasetSpec::Idx { images, labels, limit } => {
                let ds = data::load_idx(images, labels)?;
                match limit {
                    Some(n) if *n < ds.len() => ds.subset(&(0..*n).collect::<Vec<_>>()),
                    _ => Ok(ds),
                }
            }
        }
    }
}

/// Complete description of one experiment. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub clients: usize,
    pub rounds: usize,
    /// Dirichlet concentration of the client split; absent means IID.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Share of each client shard held out for evaluation.
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    /// Worker threads; 0 uses the rayon default.
    #[serde(default)]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub aggregator: AggregatorKind,
    #[serde(default)]
    pub attack: AttackKind,
    #[serde(default)]
    pub schedule: AttackSchedule,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub arch: ArchConfig,
}

impl Default for RunConfig {
    /// Ten clients, 100 rounds, attacks from round 20, batch 64, `eta1 = 0.001`.
    fn default() -> Self {
        Self {
            seed: 0,
            clients: 10,
            rounds: 100,
            beta: None,
            test_fraction: defaults::test_fraction(),
            threads: 0,
            output: None,
            dataset: DatasetSpec::default(),
            aggregator: AggregatorKind::default(),
            attack: AttackKind::default(),
            schedule: AttackSchedule::default(),
            train: TrainConfig::default(),
            server: ServerConfig::default(),
            arch: ArchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text.get(s).unwrap_or("").trim().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "<config>".to_string());
            FedFgError::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FedFgError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn kappa(&self) -> f64 {
        self.server.kappa_for(self.clients)
    }

    /// Trim fraction actually used by the trimmed-mean aggregator.
    pub fn trim_fraction(&self) -> Option<f64> {
        match self.aggregator {
            AggregatorKind::TrimmedMean { trim_fraction } => {
                Some(trim_fraction.unwrap_or(if self.attack.is_none() {
                    0.0
                } else {
                    self.schedule.malicious_fraction
                }))
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients < 2 {
            return Err(FedFgError::config("clients", "need at least 2 clients"));
        }
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(FedFgError::config("beta", "must be a positive finite number"));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(FedFgError::config("test_fraction", "must lie in [0, 1)"));
        }
        if let DatasetSpec::Blobs {
            classes,
            dim,
            per_class,
            noise_std,
            ..
        } = self.dataset
        {
            if classes < 2 {
                return Err(FedFgError::config("dataset.classes", "need at least 2 classes"));
            }
            if dim == 0 || per_class == 0 {
                return Err(FedFgError::config("dataset", "dim and per_class must be positive"));
            }
            if !(noise_std >= 0.0) {
                return Err(FedFgError::config("dataset.noise_std", "must be >= 0"));
            }
        }
        self.aggregator.validate()?;
        self.attack.validate()?;
        self.schedule.validate()?;
        self.train.validate()?;
        self.server.validate()?;
        if self.arch.feature_dim == 0 || self.arch.extractor_hidden.is_empty() || self.arch.field_hidden.is_empty() {
            return Err(FedFgError::config(
                "arch",
                "feature_dim must be positive; extractor and field need hidden layers",
            ));
        }
        if let Some(b) = self.trim_fraction() {
            crate::baselines::trim_count(self.clients, b)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_reference_setup() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.clients, 10);
        assert_eq!(cfg.rounds, 100);
        assert_eq!(cfg.schedule.start_round, 20);
        assert_eq!(cfg.train.local_epochs, 10);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.train.eta1, 0.001);
        assert_eq!(cfg.server.gamma, 3.0);
        assert_eq!(cfg.kappa(), 0.05);
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let cfg = RunConfig {
            beta: Some(0.5),
            attack: AttackKind::Sf { scale: 2.0 },
            ..RunConfig::default()
        };
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);

        let bad = format!("{text}\nbogus = 1\n");
        let err = RunConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");

        let nested = text.replace("[server]", "[server]\ngama = 3.0");
        assert!(RunConfig::from_toml_str(&nested).is_err());
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 3\nclients = 4\nrounds = 2\n[attack]\nkind = \"ipm\"\n").unwrap();
        assert_eq!(cfg.attack, AttackKind::Ipm { epsilon: 0.5 });
        assert_eq!(cfg.clients, 4);
    }

    #[test]
    fn validation_messages_name_fields() {
        let cfg = RunConfig {
            clients: 1,
            ..RunConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("clients"));
        let cfg = RunConfig {
            beta: Some(-1.0),
            ..RunConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("beta"));
    }
}
