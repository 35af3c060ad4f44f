//! Python bindings: the similarity-fusion, metric, coefficient-schedule and
//! synthetic-data operations, with matrices exchanged as nested lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use balmo::balance::{self, BalanceConfig};
use balmo::dataset::ModalityMatrix;
use balmo::gcn;
use balmo::metrics;
use balmo::numeric::Matrix;
use balmo::pipeline::{self, SyntheticSpec};
use balmo::snf;

fn err(e: balmo::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(err)
}

fn from_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn raw_network(matrix: Vec<Vec<f64>>) -> PyResult<snf::SimilarityNetwork> {
    Ok(snf::SimilarityNetwork {
        kind: snf::NetworkKind::RawW,
        matrix: to_matrix(matrix)?,
        warnings: vec![],
    })
}

fn snf_params(
    n: usize,
    mu: f64,
    k_neighbors: Option<usize>,
    iterations: usize,
    tol: f64,
) -> snf::SnfParams {
    let defaults = snf::SnfParams::defaults_for(n);
    snf::SnfParams {
        mu,
        k_neighbors: k_neighbors.unwrap_or(defaults.k_neighbors),
        iterations,
        convergence_tol: tol,
    }
}

/// Macro F1 over `num_classes` classes.
#[pyfunction]
fn macro_f1(truth: Vec<usize>, pred: Vec<usize>, num_classes: usize) -> PyResult<f64> {
    metrics::macro_f1(&truth, &pred, num_classes).map_err(err)
}

#[pyfunction]
fn accuracy(truth: Vec<usize>, pred: Vec<usize>) -> PyResult<f64> {
    metrics::accuracy(&truth, &pred).map_err(err)
}

/// Macro one-vs-rest AUC; `scores` rows must be probability vectors.
#[pyfunction]
fn macro_ovr_auc(truth: Vec<usize>, scores: Vec<Vec<f64>>) -> PyResult<f64> {
    let scores = to_matrix(scores)?;
    metrics::macro_ovr_auc(&truth, &scores)
        .map(|o| o.value)
        .map_err(err)
}

/// Plug-in mutual information between discrete label vectors, in nats.
#[pyfunction]
fn mutual_information(a: Vec<usize>, b: Vec<usize>) -> PyResult<f64> {
    metrics::mutual_information(&a, &b).map_err(err)
}

/// Relative macro-F1 ratios `r^m`.
#[pyfunction]
fn compute_r(f_scores: Vec<f64>) -> PyResult<Vec<f64>> {
    balance::compute_r(&f_scores).map_err(err)
}

/// Piecewise tanh loss coefficients `k^m`; returns `(r, k)`.
#[pyfunction]
#[pyo3(signature = (f_scores, alpha=0.25, beta=0.1, gamma=1.5, num_classes=4))]
fn compute_k(
    f_scores: Vec<f64>,
    alpha: f64,
    beta: f64,
    gamma: f64,
    num_classes: usize,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let cfg = BalanceConfig {
        alpha,
        beta,
        gamma,
        ..BalanceConfig::default()
    };
    let r = balance::compute_r(&f_scores).map_err(err)?;
    let state = balance::compute_k(&r, &f_scores, &cfg, num_classes).map_err(err)?;
    Ok((state.r, state.k))
}

/// Scaled exponential similarity kernel over sample rows.
#[pyfunction]
#[pyo3(signature = (features, mu=0.5, k_neighbors=None))]
fn scaled_exponential_similarity(
    features: Vec<Vec<f64>>,
    mu: f64,
    k_neighbors: Option<usize>,
) -> PyResult<Vec<Vec<f64>>> {
    let x = ModalityMatrix::new("py", to_matrix(features)?);
    let params = snf_params(x.n_samples(), mu, k_neighbors, 20, 1e-6);
    snf::scaled_exponential_similarity(&x, &params)
        .map(|net| from_matrix(&net.matrix))
        .map_err(err)
}

/// Full-kernel normalization (rows sum to 1, diagonal 1/2).
#[pyfunction]
fn normalize_p(w: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let net = raw_network(w)?;
    snf::normalize_p(&net)
        .map(|p| from_matrix(&p.matrix))
        .map_err(err)
}

/// kNN-sparsified kernel (rows sum to 1 over at most k entries).
#[pyfunction]
fn knn_s(w: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let net = raw_network(w)?;
    snf::knn_s(&net, k)
        .map(|s| from_matrix(&s.matrix))
        .map_err(err)
}

/// SNF cross-diffusion of raw similarity networks into one fused network.
#[pyfunction]
#[pyo3(signature = (networks, mu=0.5, k_neighbors=None, iterations=20, convergence_tol=1e-6))]
fn snf_fuse(
    networks: Vec<Vec<Vec<f64>>>,
    mu: f64,
    k_neighbors: Option<usize>,
    iterations: usize,
    convergence_tol: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let nets: Vec<snf::SimilarityNetwork> = networks
        .into_iter()
        .map(raw_network)
        .collect::<PyResult<_>>()?;
    if nets.is_empty() {
        return Err(PyValueError::new_err("snf_fuse needs at least 2 networks"));
    }
    let params = snf_params(
        nets[0].n_samples(),
        mu,
        k_neighbors,
        iterations,
        convergence_tol,
    );
    snf::snf_fuse(&nets, &params)
        .map(|o| from_matrix(&o.fused.matrix))
        .map_err(err)
}

/// Degree-normalized adjacency with self-loops from a thresholded network.
#[pyfunction]
fn normalized_adjacency(
    similarity: Vec<Vec<f64>>,
    avg_edges_per_node: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let net = snf::SimilarityNetwork {
        kind: snf::NetworkKind::Fused,
        matrix: to_matrix(similarity)?,
        warnings: vec![],
    };
    let thresholded = gcn::threshold_adjacency(&net, avg_edges_per_node).map_err(err)?;
    gcn::normalize_adjacency(&thresholded.matrix)
        .map(|m| from_matrix(&m))
        .map_err(err)
}

/// Synthetic multi-omics dataset from the built-in strong/weak/low spec.
/// Returns a dict with `modalities`, `labels`, `sample_ids`, `class_names`.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn generate_synthetic(py: Python<'_>, seed: u64) -> PyResult<Py<PyDict>> {
    let spec = SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    };
    let ds = pipeline::generate_synthetic(&spec).map_err(err)?;
    let dict = PyDict::new(py);
    let modalities = PyDict::new(py);
    for m in &ds.modalities {
        modalities.set_item(&m.name, from_matrix(&m.features))?;
    }
    dict.set_item("modalities", modalities)?;
    dict.set_item("labels", &ds.labels)?;
    dict.set_item("sample_ids", &ds.sample_ids)?;
    dict.set_item("class_names", &ds.class_names)?;
    Ok(dict.unbind())
}

#[pymodule]
fn balmo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(macro_ovr_auc, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(compute_r, m)?)?;
    m.add_function(wrap_pyfunction!(compute_k, m)?)?;
    m.add_function(wrap_pyfunction!(scaled_exponential_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_p, m)?)?;
    m.add_function(wrap_pyfunction!(knn_s, m)?)?;
    m.add_function(wrap_pyfunction!(snf_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_adjacency, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    Ok(())
}
