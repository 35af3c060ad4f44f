//! Dimensionality reduction: PCA and a linear autoencoder.
//!
//! Both are fit on the train-mask samples only and applied to all samples,
//! so the reducer never sees validation or test data even though the graph
//! stage downstream is transductive.

use crate::dataset::ModalityMatrix;
use crate::error::{Error, Result};
use crate::numeric::{eigh, Matrix, Rng, Tape};
use crate::optim::Sgd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionMethod {
    Autoencoder,
    Pca,
}

/// Reduction knobs; the epochs/learning-rate pair applies to the
/// autoencoder only.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionSettings {
    pub method: ReductionMethod,
    pub target_dim: usize,
    pub ae_epochs: usize,
    pub ae_learning_rate: f64,
}

impl Default for ReductionSettings {
    fn default() -> Self {
        Self {
            method: ReductionMethod::Autoencoder,
            target_dim: 100,
            ae_epochs: 150,
            ae_learning_rate: 0.01,
        }
    }
}

/// Reduced modality plus diagnostics.
#[derive(Debug, Clone)]
pub struct ReductionOutcome {
    pub modality: ModalityMatrix,
    /// Mean squared reconstruction error over the train rows; `None` when
    /// the reduction was a pass-through.
    pub reconstruction_error: Option<f64>,
    pub warning: Option<String>,
}

/// Reduces a modality to `target_dim` features. A target at or above the
/// current dimension passes the data through unchanged with a warning.
pub fn reduce_features(
    x: &ModalityMatrix,
    settings: &ReductionSettings,
    train_mask: &[bool],
    seed: u64,
) -> Result<ReductionOutcome> {
    let d = x.dim();
    let k = settings.target_dim;
    if k == 0 {
        return Err(Error::contract("target_dim must be positive"));
    }
    if train_mask.len() != x.n_samples() {
        return Err(Error::contract("train mask length differs from modality"));
    }
    if k >= d {
        return Ok(ReductionOutcome {
            modality: x.clone(),
            reconstruction_error: None,
            warning: Some(format!(
                "modality '{}': target_dim {k} >= feature dim {d}; passing features through",
                x.name
            )),
        });
    }

    let train_rows = x.features.select_rows(train_mask);
    if train_rows.rows() < 2 {
        return Err(Error::contract(
            "reduction needs at least 2 training samples",
        ));
    }
    let mean = column_means(&train_rows);
    let centered_train = center(&train_rows, &mean);
    let centered_all = center(&x.features, &mean);

    let (encoded, recon_err) = match settings.method {
        ReductionMethod::Pca => pca_encode(&centered_train, &centered_all, k)?,
        ReductionMethod::Autoencoder => autoencoder_encode(
            &centered_train,
            &centered_all,
            k,
            settings.ae_epochs,
            settings.ae_learning_rate,
            seed,
        )?,
    };

    Ok(ReductionOutcome {
        modality: ModalityMatrix::new(x.name.clone(), encoded),
        reconstruction_error: Some(recon_err),
        warning: None,
    })
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut means = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (mean, &v) in means.iter_mut().zip(m.row(i)) {
            *mean += v;
        }
    }
    for mean in &mut means {
        *mean /= m.rows() as f64;
    }
    means
}

fn center(m: &Matrix, means: &[f64]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) - means[j])
}

fn mean_sq_error(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).expect("same shape");
    diff.data().iter().map(|v| v * v).sum::<f64>() / (a.rows() * a.cols()) as f64
}

/// Top-k principal directions of the (centered) train rows. When the
/// feature dimension exceeds the train count the Gram trick keeps the
/// eigenproblem at n x n.
fn pca_encode(train: &Matrix, all: &Matrix, k: usize) -> Result<(Matrix, f64)> {
    let n = train.rows();
    let d = train.cols();
    let components = if d <= n {
        let cov = train.transpose().matmul(train)?; // d x d (unnormalized)
        let (_, vectors) = eigh(&cov)?;
        Matrix::from_fn(d, k, |i, j| vectors.get(i, j))
    } else {
        let gram = train.matmul(&train.transpose())?; // n x n
        let (values, vectors) = eigh(&gram)?;
        // u_j = X^T v_j / sqrt(lambda_j)
        let mut comp = Matrix::zeros(d, k);
        let xt = train.transpose();
        for (j, &value) in values.iter().take(k).enumerate() {
            let lambda = value.max(0.0);
            let vj = Matrix::from_fn(n, 1, |i, _| vectors.get(i, j));
            let uj = xt.matmul(&vj)?;
            let scale = if lambda > 1e-12 {
                1.0 / lambda.sqrt()
            } else {
                0.0
            };
            for i in 0..d {
                comp.set(i, j, uj.get(i, 0) * scale);
            }
        }
        comp
    };
    let encoded_train = train.matmul(&components)?;
    let reconstructed = encoded_train.matmul(&components.transpose())?;
    let err = mean_sq_error(train, &reconstructed);
    Ok((all.matmul(&components)?, err))
}

/// Single hidden linear layer of width k trained by squared reconstruction
/// error with full-batch gradient descent.
fn autoencoder_encode(
    train: &Matrix,
    all: &Matrix,
    k: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(Matrix, f64)> {
    if epochs == 0 || learning_rate <= 0.0 {
        return Err(Error::contract(
            "autoencoder needs epochs >= 1 and a positive learning rate",
        ));
    }
    let d = train.cols();
    let n = train.rows();
    let mut rng = Rng::new(seed);
    let scale_e = (6.0 / (d + k) as f64).sqrt();
    let mut w_enc = Matrix::from_fn(d, k, |_, _| rng.range(-scale_e, scale_e));
    let mut w_dec = Matrix::from_fn(k, d, |_, _| rng.range(-scale_e, scale_e));
    let mut opt = Sgd::new(learning_rate, 0.9);
    let inv = 1.0 / (n * d) as f64;

    let mut last_loss = f64::INFINITY;
    for epoch in 0..epochs {
        let mut tape = Tape::new();
        let x = tape.constant(train.clone());
        let we = tape.param(w_enc.clone());
        let wd = tape.param(w_dec.clone());
        let code = tape.matmul(x, we)?;
        let recon = tape.matmul(code, wd)?;
        let diff = tape.sub(recon, x)?;
        let sq = tape.mul(diff, diff)?;
        let sum = tape.sum(sq);
        let loss = tape.scale(sum, inv);
        last_loss = tape.value(loss).get(0, 0);
        if !last_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate,
                detail: "autoencoder reconstruction loss is not finite".into(),
            });
        }
        tape.backward(loss)?;
        let grads = [tape.grad(we).unwrap(), tape.grad(wd).unwrap()];
        opt.step(&mut [&mut w_enc, &mut w_dec], &grads)?;
    }
    // Reconstruction error at the final weights.
    let encoded_train = train.matmul(&w_enc)?;
    let recon = encoded_train.matmul(&w_dec)?;
    let final_err = mean_sq_error(train, &recon);
    let _ = last_loss;
    Ok((all.matmul(&w_enc)?, final_err))
}
