//! Run configuration: one TOML file drives every CLI command.
//!
//! Unknown keys are rejected everywhere and every nested section is
//! validated before any compute starts. The resolved (post-default) config
//! is written into the run directory for auditability.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balance::BalanceConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::gcn::EncoderConfig;
use crate::optim::TrainParams;
use crate::pipeline::{BaselineSettings, ReductionSettings};
use crate::snf::SnfParams;

/// SNF section; `k_neighbors` defaults to `max(N/10, 10)` when omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SnfConfig {
    pub mu: f64,
    pub k_neighbors: Option<usize>,
    pub iterations: usize,
    pub convergence_tol: f64,
    /// Modalities contributing to the fused edge network; all when omitted.
    pub fuse_modalities: Option<Vec<String>>,
}

impl Default for SnfConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            k_neighbors: None,
            iterations: 20,
            convergence_tol: 1e-6,
            fuse_modalities: None,
        }
    }
}

impl SnfConfig {
    pub fn to_params(&self, n_samples: usize) -> SnfParams {
        let defaults = SnfParams::defaults_for(n_samples);
        SnfParams {
            mu: self.mu,
            k_neighbors: self.k_neighbors.unwrap_or(defaults.k_neighbors),
            iterations: self.iterations,
            convergence_tol: self.convergence_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjacencyConfig {
    pub avg_edges_per_node: f64,
}

impl Default for AdjacencyConfig {
    fn default() -> Self {
        Self {
            avg_edges_per_node: 10.0,
        }
    }
}

/// Split fractions; remainders go to train.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitConfig {
    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.train, self.val, self.test)
    }
}

/// MI gate applied to low-information modalities before distillation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiGateConfig {
    /// Threshold in nats.
    pub threshold: f64,
    pub quantizer: MiQuantizerKind,
    /// Bin count for the principal-axis quantizer.
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiQuantizerKind {
    /// Use the modality's own unimodal predictions (the default).
    PredictedLabels,
    /// Quantile-bin the leading principal axis.
    PrincipalAxisBins,
}

impl Default for MiGateConfig {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            quantizer: MiQuantizerKind::PredictedLabels,
            bins: 8,
        }
    }
}

/// Where the dataset comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Generated in memory; `spec` points at a synthetic spec TOML, or the
    /// built-in default spec is used with the run seed.
    Synthetic {
        #[serde(default)]
        spec: Option<PathBuf>,
    },
    /// Loaded from per-modality CSVs listed in a manifest.
    Csv { manifest: PathBuf },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic { spec: None }
    }
}

/// Manifest describing an on-disk CSV dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub modalities: Vec<ManifestModality>,
    pub labels: PathBuf,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestModality {
    pub name: String,
    pub path: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }

    /// Modality paths resolved relative to the manifest's directory.
    pub fn resolved_paths(&self, manifest_path: &Path) -> (Vec<(String, PathBuf)>, PathBuf) {
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        (
            self.modalities
                .iter()
                .map(|m| (m.name.clone(), resolve(&m.path)))
                .collect(),
            resolve(&self.labels),
        )
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub reduction: ReductionSettings,
    pub snf: SnfConfig,
    pub adjacency: AdjacencyConfig,
    pub encoder: EncoderConfig,
    /// Unimodal (teacher-style) training.
    pub train: TrainParams,
    pub distill: DistillConfig,
    pub mi_gate: MiGateConfig,
    pub balance: BalanceConfig,
    /// Joint balanced training loop.
    pub balance_train: TrainParams,
    pub baseline: BaselineSettings,
    pub split: SplitConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Validates every nested section before any compute.
    pub fn validate(&self) -> Result<()> {
        let check = |cond: bool, msg: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::config(msg.to_string()))
            }
        };
        check(self.snf.mu > 0.0, "snf.mu must be positive")?;
        check(self.snf.iterations >= 1, "snf.iterations must be >= 1")?;
        if let Some(k) = self.snf.k_neighbors {
            check(k >= 1, "snf.k_neighbors must be >= 1")?;
        }
        check(
            self.adjacency.avg_edges_per_node >= 1.0,
            "adjacency.avg_edges_per_node must be >= 1",
        )?;
        check(
            self.encoder.representation_dim >= 1,
            "encoder.representation_dim must be >= 1",
        )?;
        check(
            self.encoder.hidden_dims.iter().all(|&d| d >= 1),
            "encoder.hidden_dims must be positive",
        )?;
        self.train
            .validate()
            .map_err(|e| Error::config(format!("train: {e}")))?;
        self.balance_train
            .validate()
            .map_err(|e| Error::config(format!("balance_train: {e}")))?;
        self.distill
            .validate()
            .map_err(|e| Error::config(format!("distill: {e}")))?;
        self.balance
            .validate()
            .map_err(|e| Error::config(format!("balance: {e}")))?;
        check(
            self.mi_gate.threshold >= 0.0,
            "mi_gate.threshold must be >= 0",
        )?;
        check(self.mi_gate.bins >= 2, "mi_gate.bins must be >= 2")?;
        check(
            self.reduction.target_dim >= 1,
            "reduction.target_dim must be >= 1",
        )?;
        check(self.baseline.repeats >= 1, "baseline.repeats must be >= 1")?;
        check(self.baseline.l2 >= 0.0, "baseline.l2 must be >= 0")?;
        let (t, v, e) = self.split.fractions();
        check(
            t > 0.0 && v > 0.0 && e > 0.0 && (t + v + e - 1.0).abs() <= 1e-9,
            "split fractions must be positive and sum to 1",
        )?;
        Ok(())
    }

    /// Serialized resolved config (after defaulting), written to run dirs.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// FNV-1a over the resolved config text; stamps run directories.
pub fn config_hash(resolved: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in resolved.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    format!("{hash:016x}")
}
