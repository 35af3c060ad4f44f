//! Checkpoint containers and report writers.
//!
//! Checkpoints are versioned JSON holding layer/head matrices plus dims and
//! seed; the adjacency is rebuilt from the run config at load time. Report
//! files use fixed float formatting so identical runs are byte-identical.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::balance::JointModel;
use crate::error::{Error, Result};
use crate::gcn::GcnModel;
use crate::numeric::Matrix;
use crate::snf::SimilarityNetwork;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which network supplies the encoder's edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSource {
    /// The modality's own similarity network (plain GCN).
    SelfSimilarity,
    /// The SNF-fused network (revised GCN).
    Fused,
}

impl std::fmt::Display for EdgeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EdgeSource::SelfSimilarity => f.write_str("self"),
            EdgeSource::Fused => f.write_str("fused"),
        }
    }
}

/// Serialized encoder: everything except the adjacency.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnCheckpoint {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub node_modality: String,
    pub edges: EdgeSource,
    pub dims: Vec<usize>,
    pub num_classes: usize,
    pub layer_weights: Vec<Matrix>,
    pub head_weights: Matrix,
}

impl GcnCheckpoint {
    pub fn from_model(model: &GcnModel, edges: EdgeSource) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: "gcn".into(),
            seed: model.seed,
            node_modality: model.node_modality.clone(),
            edges,
            dims: model.dims.clone(),
            num_classes: model.num_classes,
            layer_weights: model.layer_weights.clone(),
            head_weights: model.head_weights.clone(),
        }
    }

    /// Rebuilds the model against a freshly computed adjacency. The network
    /// must match the checkpoint's edge source.
    pub fn into_model(
        self,
        edges: &SimilarityNetwork,
        avg_edges_per_node: f64,
    ) -> Result<GcnModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let thresholded = crate::gcn::threshold_adjacency(edges, avg_edges_per_node)?;
        let normalized = crate::gcn::normalize_adjacency(&thresholded.matrix)?;
        let repr_dim = *self
            .dims
            .last()
            .ok_or_else(|| Error::config("empty dims"))?;
        for (w, pair) in self.layer_weights.iter().zip(self.dims.windows(2)) {
            if w.rows() != pair[0] || w.cols() != pair[1] {
                return Err(Error::config("checkpoint dims do not match weights"));
            }
        }
        Ok(GcnModel {
            dims: self.dims,
            layer_weights: self.layer_weights,
            head_weights: self.head_weights,
            normalized_adjacency: normalized,
            representation_dim: repr_dim,
            num_classes: self.num_classes,
            seed: self.seed,
            node_modality: self.node_modality,
        })
    }
}

/// Serialized joint model: per-modality encoders plus the fusion head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointCheckpoint {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub modality_names: Vec<String>,
    pub encoders: Vec<GcnCheckpoint>,
    pub fusion_head: Matrix,
}

impl JointCheckpoint {
    pub fn from_model(model: &JointModel, seed: u64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: "joint".into(),
            seed,
            modality_names: model.modality_names.clone(),
            encoders: model
                .encoders
                .iter()
                .map(|e| GcnCheckpoint::from_model(e, EdgeSource::Fused))
                .collect(),
            fusion_head: model.fusion_head.clone(),
        }
    }

    pub fn into_model(
        self,
        fused: &SimilarityNetwork,
        avg_edges_per_node: f64,
    ) -> Result<JointModel> {
        let encoders = self
            .encoders
            .into_iter()
            .map(|c| c.into_model(fused, avg_edges_per_node))
            .collect::<Result<Vec<_>>>()?;
        Ok(JointModel {
            encoders,
            fusion_head: self.fusion_head,
            modality_names: self.modality_names,
        })
    }
}

/// Peek at a checkpoint's `kind` field without committing to a type.
#[derive(Deserialize)]
pub struct CheckpointKind {
    pub kind: String,
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::config(format!("serialization failed: {e}")))?;
    write_text(path, &text)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(content.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Fixed-precision float cell; reports must be byte-identical across runs.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.10}")
}

pub fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// `key = value` block, machine-parsable.
pub fn kv_block(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}
