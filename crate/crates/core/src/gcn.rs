//! Graph-convolutional encoders over similarity networks.
//!
//! Adjacency comes from thresholding a similarity network at a value chosen
//! to hit a target average degree, then degree-normalizing with self-loops.
//! The revised encoder (r-GCN) relaxes the node/edge coupling: node features
//! may come from a single modality while edges come from the fused network.

use crate::dataset::ModalityMatrix;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, NodeId, Rng, Tape};
use crate::snf::SimilarityNetwork;

/// How the adjacency was derived from a similarity network.
#[derive(Debug, Clone)]
pub struct AdjacencySpec {
    pub avg_edges_per_node: f64,
    /// Threshold actually applied; entries below it are dropped.
    pub epsilon: f64,
    /// Self-loops are always added at encoding time (via normalization).
    pub self_loops: bool,
}

/// Output of [`threshold_adjacency`].
#[derive(Debug, Clone)]
pub struct ThresholdedAdjacency {
    pub spec: AdjacencySpec,
    /// Symmetric, nonnegative, zero-diagonal weighted adjacency.
    pub matrix: Matrix,
    pub warning: Option<String>,
}

/// Picks the smallest threshold epsilon such that the mean off-diagonal
/// degree does not exceed `avg_edges_per_node`, then zeroes entries below
/// it. If no threshold drawn from the entries achieves the target (all
/// off-diagonal entries equal), every positive edge is kept and a warning
/// is returned.
pub fn threshold_adjacency(
    s: &SimilarityNetwork,
    avg_edges_per_node: f64,
) -> Result<ThresholdedAdjacency> {
    let n = s.n_samples();
    if !(1.0..(n as f64)).contains(&avg_edges_per_node) {
        return Err(Error::contract(format!(
            "avg_edges_per_node must be in [1, {n}), got {avg_edges_per_node}"
        )));
    }
    if !s.matrix.is_symmetric(1e-9) {
        return Err(Error::contract(
            "threshold_adjacency requires a symmetric network",
        ));
    }

    let mut positives: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && s.matrix.get(i, j) > 0.0 {
                positives.push(s.matrix.get(i, j));
            }
        }
    }
    if positives.is_empty() {
        return Err(Error::contract(
            "similarity network has no positive off-diagonal entries",
        ));
    }
    positives.sort_by(|a, b| a.partial_cmp(b).expect("finite"));

    let budget = avg_edges_per_node * n as f64;
    // Scan distinct values ascending; count(x >= v) = positives.len() - first
    // index of v. The smallest v whose count fits the budget wins.
    let mut epsilon = None;
    let mut idx = 0;
    while idx < positives.len() {
        let v = positives[idx];
        let kept = positives.len() - idx;
        if kept as f64 <= budget {
            epsilon = Some(v);
            break;
        }
        // Skip over the tie block for this value.
        let mut next = idx + 1;
        while next < positives.len() && positives[next] == v {
            next += 1;
        }
        idx = next;
    }

    let (eps, warning) = match epsilon {
        Some(e) => (e, None),
        None => (
            0.0,
            Some(format!(
                "target degree {avg_edges_per_node} unachievable (tied off-diagonal entries); keeping all {} edges",
                positives.len()
            )),
        ),
    };

    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = s.matrix.get(i, j);
                if v > 0.0 && v >= eps {
                    a.set(i, j, v);
                }
            }
        }
    }
    Ok(ThresholdedAdjacency {
        spec: AdjacencySpec {
            avg_edges_per_node,
            epsilon: eps,
            self_loops: true,
        },
        matrix: a,
        warning,
    })
}

/// Degree-normalizes with self-loops: `D^{-1/2} (A + I) D^{-1/2}`.
/// Isolated nodes end up with a unit self-loop.
pub fn normalize_adjacency(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::contract("adjacency must be square"));
    }
    for i in 0..n {
        if a.get(i, i) != 0.0 {
            return Err(Error::contract(format!(
                "adjacency must have a zero diagonal (row {i})"
            )));
        }
    }
    if !a.is_symmetric(1e-9) {
        return Err(Error::contract("adjacency must be symmetric"));
    }
    if a.data().iter().any(|&v| v < 0.0) {
        return Err(Error::contract("adjacency must be nonnegative"));
    }

    let mut inv_sqrt_deg = vec![0.0; n];
    for (i, inv) in inv_sqrt_deg.iter_mut().enumerate() {
        let deg: f64 = a.row(i).iter().sum::<f64>() + 1.0; // self-loop
        *inv = 1.0 / deg.sqrt();
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let tilde = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
            if tilde != 0.0 {
                out.set(i, j, inv_sqrt_deg[i] * tilde * inv_sqrt_deg[j]);
            }
        }
    }
    Ok(out)
}

/// Encoder architecture knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Hidden layer widths between the input and the representation.
    pub hidden_dims: Vec<usize>,
    /// Dimension d of the representation h_i.
    pub representation_dim: usize,
    /// Target mean degree for the thresholded adjacency.
    pub avg_edges_per_node: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![64],
            representation_dim: 64,
            avg_edges_per_node: 10.0,
        }
    }
}

/// A GCN encoder plus its affine classifier head. The normalized adjacency
/// is precomputed and owned by the model; checkpoints serialize only the
/// weights, dims and seed.
#[derive(Debug, Clone)]
pub struct GcnModel {
    /// Full dimension chain: input, hidden..., representation.
    pub dims: Vec<usize>,
    pub layer_weights: Vec<Matrix>,
    /// `(d + 1) x C`; the appended constant column provides the bias.
    pub head_weights: Matrix,
    pub normalized_adjacency: Matrix,
    pub representation_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Modality supplying node features.
    pub node_modality: String,
}

/// Representations and head logits for all N samples.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub representations: Matrix,
    pub logits: Matrix,
}

pub(crate) fn init_weight(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.range(-a, a))
}

/// Builds a (revised) GCN: node features from `node`, edges from `edges`.
/// With `edges` built from the node's own modality this is a plain GCN; with
/// the fused network it is the revised variant. Weight init is the scaled
/// uniform scheme, deterministic per seed.
pub fn build_rgcn(
    node: &ModalityMatrix,
    edges: &SimilarityNetwork,
    cfg: &EncoderConfig,
    num_classes: usize,
    seed: u64,
) -> Result<GcnModel> {
    if edges.n_samples() != node.n_samples() {
        return Err(Error::SampleCount {
            left_name: format!("node features '{}'", node.name),
            left_n: node.n_samples(),
            right_name: "edge network".into(),
            right_n: edges.n_samples(),
        });
    }
    if cfg.representation_dim == 0 || cfg.hidden_dims.contains(&0) {
        return Err(Error::config("encoder dims must be positive".to_string()));
    }
    let thresholded = threshold_adjacency(edges, cfg.avg_edges_per_node)?;
    let normalized = normalize_adjacency(&thresholded.matrix)?;

    let mut dims = vec![node.dim()];
    dims.extend(&cfg.hidden_dims);
    dims.push(cfg.representation_dim);

    let mut rng = Rng::new(seed);
    let layer_weights: Vec<Matrix> = dims
        .windows(2)
        .map(|w| init_weight(w[0], w[1], &mut rng))
        .collect();
    let head_weights = init_weight(cfg.representation_dim + 1, num_classes, &mut rng);

    Ok(GcnModel {
        dims,
        layer_weights,
        head_weights,
        normalized_adjacency: normalized,
        representation_dim: cfg.representation_dim,
        num_classes,
        seed,
        node_modality: node.name.clone(),
    })
}

/// Tape handles for one encoder's forward pass.
pub(crate) struct GcnGraph {
    pub weight_ids: Vec<NodeId>,
    pub head_id: NodeId,
    pub representation: NodeId,
    pub logits: NodeId,
}

/// Records the encoder forward pass on a tape. Each propagation layer is
/// `relu(A_hat (H W))`; the head is affine over `[H | 1]`. The product is
/// right-associated so the N x N multiply always runs at the layer's output
/// width.
pub(crate) fn gcn_graph(tape: &mut Tape, model: &GcnModel, x: &Matrix) -> Result<GcnGraph> {
    if x.rows() != model.normalized_adjacency.rows() || x.cols() != model.dims[0] {
        return Err(Error::Dimension {
            op: "gcn_forward",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: model.normalized_adjacency.rows(),
            right_cols: model.dims[0],
        });
    }
    let adj = tape.constant(model.normalized_adjacency.clone());
    let mut h = tape.constant(x.clone());
    let mut weight_ids = Vec::with_capacity(model.layer_weights.len());
    for w in &model.layer_weights {
        let w_id = tape.param(w.clone());
        weight_ids.push(w_id);
        let hw = tape.matmul(h, w_id)?;
        let propagated = tape.matmul(adj, hw)?;
        h = tape.relu(propagated);
    }
    let ones = tape.constant(Matrix::filled(x.rows(), 1, 1.0));
    let h1 = tape.concat_cols(&[h, ones])?;
    let head_id = tape.param(model.head_weights.clone());
    let logits = tape.matmul(h1, head_id)?;
    Ok(GcnGraph {
        weight_ids,
        head_id,
        representation: h,
        logits,
    })
}

/// Runs the encoder on features for all N samples.
pub fn gcn_forward(model: &GcnModel, x: &Matrix) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let graph = gcn_graph(&mut tape, model, x)?;
    Ok(EncoderOutput {
        representations: tape.value(graph.representation).clone(),
        logits: tape.value(graph.logits).clone(),
    })
}
