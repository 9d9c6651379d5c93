//! Flat TOML run configuration.
//!
//! ```toml
//! data = "data/glass.csv"
//! seed = 42
//! architecture = "64,32,16"
//! sigma = 4.0
//! rff_dim = 250
//! rank = 50
//! alpha = 0.0
//!
//! [grid]            # optional, used by `gridsearch`
//! sigma = [1.0, 4.0]
//! alpha = [0.0, 0.5]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::{Activation, Architecture};
use crate::dataset::{CsvOptions, LabelColumn, LabelEncoding, Scaling};
use crate::density::KernelFamily;
use crate::detector::LeandConfig;
use crate::evaluation::{GridSpec, KdeSearch};
use crate::fourier::AffConfig;
use crate::optim::{OptimizerKind, StageConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub label: String,
    /// Label value that marks an anomaly, for columns not coded 0/1.
    pub anomaly_label: Option<String>,
    pub seed: u64,
    pub train_fraction: f64,
    pub scaling: Scaling,
    pub architecture: String,
    pub activation: Activation,
    pub allow_overcomplete: bool,
    pub sigma: f64,
    pub gamma: Option<f64>,
    pub rff_dim: usize,
    pub rank: usize,
    pub alpha: f64,
    pub recon_weight: f64,
    pub anomaly_rate: Option<f64>,
    pub normal_only: bool,
    pub train_map_jointly: bool,
    pub optimizer: OptimizerKind,
    pub tolerance: f64,
    pub patience: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub aff_epochs: usize,
    pub aff_lr: f64,
    pub aff_batch: usize,
    pub aff_pairs: Option<usize>,
    pub joint_epochs: usize,
    pub joint_lr: f64,
    pub joint_batch: usize,
    /// Share of the test split kept aside from grid ranking and reported separately.
    pub holdout_fraction: f64,
    pub kde_kernels: Vec<KernelFamily>,
    pub kde_sigmas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = LeandConfig::default();
        Self {
            data: None,
            label: "label".into(),
            anomaly_label: None,
            seed: d.seed,
            train_fraction: 0.7,
            scaling: d.scaling,
            architecture: join_sizes(&d.architecture),
            activation: d.activation,
            allow_overcomplete: d.allow_overcomplete,
            sigma: d.sigma,
            gamma: d.gamma,
            rff_dim: d.rff_dim,
            rank: d.rank,
            alpha: d.alpha,
            recon_weight: d.recon_weight,
            anomaly_rate: d.anomaly_rate,
            normal_only: d.normal_only,
            train_map_jointly: d.train_map_jointly,
            optimizer: d.pretrain.optimizer,
            tolerance: d.pretrain.tolerance,
            patience: d.pretrain.patience,
            pretrain_epochs: d.pretrain.epochs,
            pretrain_lr: d.pretrain.lr,
            pretrain_batch: d.pretrain.batch_size,
            aff_epochs: d.aff.epochs,
            aff_lr: d.aff.lr,
            aff_batch: d.aff.batch_size,
            aff_pairs: d.aff.pairs,
            joint_epochs: d.joint.epochs,
            joint_lr: d.joint.lr,
            joint_batch: d.joint.batch_size,
            holdout_fraction: 0.0,
            kde_kernels: KdeSearch::default().families,
            kde_sigmas: Vec::new(),
            grid: None,
        }
    }
}

fn join_sizes(s: &[usize]) -> String {
    s.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        Architecture::parse_sizes(&self.architecture)?;
        self.leand_config()?.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        Ok(())
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            label: LabelColumn::parse(&self.label),
            encoding: match &self.anomaly_label {
                Some(v) => LabelEncoding::AnomalyValue(v.clone()),
                None => LabelEncoding::Binary,
            },
        }
    }

    fn stage(&self, epochs: usize, lr: f64, batch_size: usize) -> StageConfig {
        StageConfig {
            epochs,
            lr,
            batch_size,
            optimizer: self.optimizer,
            tolerance: self.tolerance,
            patience: self.patience,
        }
    }

    pub fn leand_config(&self) -> Result<LeandConfig> {
        Ok(LeandConfig {
            seed: self.seed,
            scaling: self.scaling,
            architecture: Architecture::parse_sizes(&self.architecture)?,
            activation: self.activation,
            allow_overcomplete: self.allow_overcomplete,
            sigma: self.sigma,
            gamma: self.gamma,
            rff_dim: self.rff_dim,
            rank: self.rank,
            alpha: self.alpha,
            recon_weight: self.recon_weight,
            anomaly_rate: self.anomaly_rate,
            normal_only: self.normal_only,
            train_map_jointly: self.train_map_jointly,
            pretrain: self.stage(self.pretrain_epochs, self.pretrain_lr, self.pretrain_batch),
            aff: AffConfig {
                epochs: self.aff_epochs,
                lr: self.aff_lr,
                batch_size: self.aff_batch,
                optimizer: self.optimizer,
                pairs: self.aff_pairs,
                holdout_fraction: AffConfig::default().holdout_fraction,
            },
            joint: self.stage(self.joint_epochs, self.joint_lr, self.joint_batch),
        })
    }

    pub fn kde_search(&self) -> KdeSearch {
        KdeSearch {
            families: self.kde_kernels.clone(),
            sigmas: self.kde_sigmas.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let s = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&s).unwrap(), c);
    }

    #[test]
    fn parses_flat_keys_and_grid() {
        let c = RunConfig::from_toml_str(
            r#"
            data = "data/glass.csv"
            architecture = "(64,32,16)"
            allow_overcomplete = true
            sigma = 4.0
            rff_dim = 250
            rank = 50
            alpha = 0.0
            [grid]
            sigma = [1.0, 2.0]
            architecture = [[64, 32, 16], [128, 32, 2]]
            cap = 3
            "#,
        )
        .unwrap();
        let l = c.leand_config().unwrap();
        assert_eq!(l.architecture, vec![64, 32, 16]);
        assert_eq!(l.bandwidth().unwrap(), 1.0 / 32.0);
        let g = c.grid.unwrap();
        assert_eq!(g.size(), 4);
        assert_eq!(g.points(0).unwrap().len(), 3);
    }

    #[test]
    fn rejects_unknown_and_invalid_values() {
        assert!(matches!(RunConfig::from_toml_str("sigmaa = 1.0"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml_str("alpha = 2.0").is_err());
        assert!(RunConfig::from_toml_str("architecture = \"a,b\"").is_err());
        assert!(RunConfig::from_toml_str("train_fraction = 1.0").is_err());
    }
}
