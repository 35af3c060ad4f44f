//! Similarity Network Fusion: per-modality scaled-exponential similarity
//! networks, their normalized and kNN-sparsified forms, and the
//! cross-diffusion that fuses them into one network.

use std::io::Write;
use std::path::Path;

use crate::dataset::ModalityMatrix;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Hyperparameters of the fusion process.
#[derive(Debug, Clone)]
pub struct SnfParams {
    /// Kernel bandwidth multiplier (conventionally in [0.3, 0.8]).
    pub mu: f64,
    /// K for both the local-scale estimate and the kNN sparsification.
    pub k_neighbors: usize,
    /// Diffusion iteration budget.
    pub iterations: usize,
    /// Relative Frobenius change below which diffusion stops early.
    /// Non-positive disables early stopping.
    pub convergence_tol: f64,
}

impl SnfParams {
    /// Literature defaults: mu = 0.5, K = max(N/10, 10) clamped below N,
    /// 20 iterations, tol 1e-6.
    pub fn defaults_for(n_samples: usize) -> Self {
        let k = (n_samples / 10)
            .max(10)
            .min(n_samples.saturating_sub(1))
            .max(1);
        Self {
            mu: 0.5,
            k_neighbors: k,
            iterations: 20,
            convergence_tol: 1e-6,
        }
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if self.mu <= 0.0 {
            return Err(Error::contract("snf: mu must be positive"));
        }
        if self.k_neighbors < 1 || self.k_neighbors >= n_samples {
            return Err(Error::contract(format!(
                "snf: k_neighbors must be in [1, {}), got {}",
                n_samples, self.k_neighbors
            )));
        }
        if self.iterations < 1 {
            return Err(Error::contract("snf: iterations must be >= 1"));
        }
        Ok(())
    }
}

/// Which stage of the SNF pipeline a network belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    RawW,
    NormalizedP,
    KnnS,
    Fused,
}

impl std::fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NetworkKind::RawW => "raw_W",
            NetworkKind::NormalizedP => "normalized_P",
            NetworkKind::KnnS => "knn_S",
            NetworkKind::Fused => "fused",
        };
        f.write_str(s)
    }
}

/// N x N nonnegative sample-similarity matrix at a known pipeline stage.
#[derive(Debug, Clone)]
pub struct SimilarityNetwork {
    pub kind: NetworkKind,
    pub matrix: Matrix,
    /// Non-fatal anomalies observed while building (degenerate local scales,
    /// unachievable thresholds, ...).
    pub warnings: Vec<String>,
}

impl SimilarityNetwork {
    pub fn n_samples(&self) -> usize {
        self.matrix.rows()
    }

    fn expect_kind(&self, expected: NetworkKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::NetworkKind {
                expected: expected.to_string(),
                got: self.kind.to_string(),
            });
        }
        Ok(())
    }

    /// Writes the network as CSV with a header row of sample IDs.
    pub fn write_csv(&self, sample_ids: &[String], path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("id");
        for id in sample_ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in sample_ids.iter().enumerate().take(self.matrix.rows()) {
            out.push_str(id);
            for &v in self.matrix.row(i) {
                out.push_str(&format!(",{v:.12e}"));
            }
            out.push('\n');
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Euclidean distance matrix between sample rows.
fn distance_matrix(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d.set(i, j, dist);
            d.set(j, i, dist);
        }
    }
    d
}

/// Mean distance to the K nearest neighbors of each sample (self excluded,
/// ties broken toward lower index).
fn knn_mean_distances(dist: &Matrix, k: usize) -> Vec<f64> {
    let n = dist.rows();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist.get(i, j), j))
                .collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
            others.iter().take(k).map(|&(d, _)| d).sum::<f64>() / k as f64
        })
        .collect()
}

/// Scaled exponential similarity kernel:
/// `W(i,j) = exp(-rho^2(x_i, x_j) / (mu * eps_ij))` with the local scale
/// `eps_ij = (mean_{k in N_i} rho(x_i,x_k) + mean_{k in N_j} rho(x_j,x_k) + rho(x_i,x_j)) / 3`.
pub fn scaled_exponential_similarity(
    x: &ModalityMatrix,
    params: &SnfParams,
) -> Result<SimilarityNetwork> {
    let n = x.n_samples();
    if n < 2 {
        return Err(Error::contract("similarity needs at least 2 samples"));
    }
    params.validate(n)?;

    let dist = distance_matrix(&x.features);
    let local = knn_mean_distances(&dist, params.k_neighbors);

    let mut w = Matrix::zeros(n, n);
    let mut floored = 0usize;
    for i in 0..n {
        w.set(i, i, 1.0);
        for j in (i + 1)..n {
            let rho = dist.get(i, j);
            let mut eps = (local[i] + local[j] + rho) / 3.0;
            if eps < 1e-12 {
                eps = 1e-12;
                floored += 1;
            }
            let v = (-(rho * rho) / (params.mu * eps)).exp();
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    let mut warnings = Vec::new();
    if floored > 0 {
        warnings.push(format!(
            "modality '{}': {floored} pair(s) had a degenerate local scale; floored eps at 1e-12",
            x.name
        ));
    }
    Ok(SimilarityNetwork {
        kind: NetworkKind::RawW,
        matrix: w,
        warnings,
    })
}

/// Full-kernel normalization: off-diagonal entries are scaled so each row's
/// off-diagonal mass is 1/2, and the diagonal is set to exactly 1/2. Every
/// row then sums to 1.
pub fn normalize_p(w: &SimilarityNetwork) -> Result<SimilarityNetwork> {
    w.expect_kind(NetworkKind::RawW)?;
    let p = normalize_rows_half(&w.matrix)?;
    Ok(SimilarityNetwork {
        kind: NetworkKind::NormalizedP,
        matrix: p,
        warnings: w.warnings.clone(),
    })
}

fn normalize_rows_half(w: &Matrix) -> Result<Matrix> {
    let n = w.rows();
    let mut p = Matrix::zeros(n, n);
    for i in 0..n {
        let off_mass: f64 = w
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &v)| v)
            .sum();
        if off_mass <= 0.0 {
            return Err(Error::IsolatedSample { row: i });
        }
        for j in 0..n {
            if j == i {
                p.set(i, j, 0.5);
            } else {
                p.set(i, j, w.get(i, j) / (2.0 * off_mass));
            }
        }
    }
    Ok(p)
}

/// Local kNN kernel: row i keeps only its K most similar neighbors
/// (self excluded, ties toward the lower index), renormalized to sum 1.
pub fn knn_s(w: &SimilarityNetwork, k: usize) -> Result<SimilarityNetwork> {
    w.expect_kind(NetworkKind::RawW)?;
    let n = w.n_samples();
    if k < 1 || k >= n {
        return Err(Error::contract(format!(
            "knn_s: k must be in [1, {n}), got {k}"
        )));
    }
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (w.matrix.get(i, j), j))
            .collect();
        // Most similar first; equal similarities keep the lower index.
        others.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        let neighbors = &others[..k];
        let denom: f64 = neighbors.iter().map(|&(v, _)| v).sum();
        if denom <= 0.0 {
            return Err(Error::IsolatedSample { row: i });
        }
        for &(v, j) in neighbors {
            s.set(i, j, v / denom);
        }
    }
    Ok(SimilarityNetwork {
        kind: NetworkKind::KnnS,
        matrix: s,
        warnings: w.warnings.clone(),
    })
}

/// Result of [`snf_fuse`]: the fused network plus convergence diagnostics.
#[derive(Debug, Clone)]
pub struct SnfOutcome {
    pub fused: SimilarityNetwork,
    /// Max over modalities of the relative Frobenius change per iteration.
    pub iteration_deltas: Vec<f64>,
    pub converged: bool,
}

/// Cross-diffusion fusion. Each modality's status matrix diffuses against
/// the mean of the others through its own kNN kernel:
/// `P^m <- S^m * mean_{j != m}(P^j) * (S^m)^T`, then is renormalized and
/// symmetrized. For two modalities this is exactly the classic pair of
/// updates. The fused output is the elementwise mean of the final status
/// matrices, symmetry enforced.
pub fn snf_fuse(networks: &[SimilarityNetwork], params: &SnfParams) -> Result<SnfOutcome> {
    if networks.len() < 2 {
        return Err(Error::contract(format!(
            "snf_fuse needs at least 2 networks, got {}",
            networks.len()
        )));
    }
    let n = networks[0].n_samples();
    params.validate(n)?;
    for (idx, net) in networks.iter().enumerate() {
        net.expect_kind(NetworkKind::RawW)?;
        if net.n_samples() != n {
            return Err(Error::SampleCount {
                left_name: "modality 0".into(),
                left_n: n,
                right_name: format!("modality {idx}"),
                right_n: net.n_samples(),
            });
        }
    }

    let m = networks.len();
    let mut status: Vec<Matrix> = networks
        .iter()
        .map(|w| normalize_rows_half(&w.matrix))
        .collect::<Result<_>>()?;
    let kernels: Vec<Matrix> = networks
        .iter()
        .map(|w| knn_s(w, params.k_neighbors).map(|s| s.matrix))
        .collect::<Result<_>>()?;
    let kernels_t: Vec<Matrix> = kernels.iter().map(Matrix::transpose).collect();

    let mut deltas = Vec::with_capacity(params.iterations);
    let mut converged = false;
    let mut warnings: Vec<String> = networks.iter().flat_map(|w| w.warnings.clone()).collect();

    for _iter in 0..params.iterations {
        let mut next: Vec<Matrix> = Vec::with_capacity(m);
        for i in 0..m {
            let mut mean_others = Matrix::zeros(n, n);
            for (j, p) in status.iter().enumerate() {
                if j != i {
                    mean_others.axpy(1.0 / (m - 1) as f64, p)?;
                }
            }
            let diffused = kernels[i].matmul(&mean_others)?.matmul(&kernels_t[i])?;
            let renorm = normalize_rows_half(&diffused)?;
            let sym = renorm.add(&renorm.transpose())?.scale(0.5);
            next.push(sym);
        }
        let delta = status
            .iter()
            .zip(&next)
            .map(|(old, new)| {
                let diff = new.sub(old).expect("same shape");
                diff.frob_norm() / old.frob_norm().max(1e-300)
            })
            .fold(0.0_f64, f64::max);
        deltas.push(delta);
        status = next;
        if params.convergence_tol > 0.0 && delta < params.convergence_tol {
            converged = true;
            break;
        }
    }
    if !converged && params.convergence_tol > 0.0 {
        warnings.push(format!(
            "snf did not reach tol {} within {} iterations (last delta {:.3e})",
            params.convergence_tol,
            params.iterations,
            deltas.last().copied().unwrap_or(f64::NAN)
        ));
    }

    let mut fused = Matrix::zeros(n, n);
    for p in &status {
        fused.axpy(1.0 / m as f64, p)?;
    }
    let fused = fused.add(&fused.transpose())?.scale(0.5);

    Ok(SnfOutcome {
        fused: SimilarityNetwork {
            kind: NetworkKind::Fused,
            matrix: fused,
            warnings,
        },
        iteration_deltas: deltas,
        converged,
    })
}
