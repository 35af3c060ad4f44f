//! Multinomial logistic-regression baseline over modality combinations.
//!
//! For each repeat the dataset is re-split, reduced on the train mask, and
//! a softmax affine model is fit by full-batch gradient descent with an L2
//! penalty on each requested modality combination. Metrics are reported as
//! mean +/- std over the repeats.

use crate::dataset::{stratified_split, MultiOmicsDataset};
use crate::error::{Error, Result};
use crate::losses::masked_ce_graph;
use crate::metrics::{evaluate_logits, EvalMetrics};
use crate::numeric::{Matrix, Rng, Tape};
use crate::optim::Sgd;
use crate::pipeline::{reduce_features, ReductionSettings};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSettings {
    pub repeats: usize,
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            repeats: 10,
            l2: 1e-3,
            epochs: 400,
            learning_rate: 0.5,
        }
    }
}

/// One modality combination's aggregated metrics, `(mean, std)` per column.
#[derive(Debug, Clone)]
pub struct BaselineRow {
    pub combo: String,
    pub accuracy: (f64, f64),
    pub auc: (f64, f64),
    pub macro_f1: (f64, f64),
}

impl BaselineRow {
    /// `0.8338 +/- 0.0340`-style cells.
    pub fn formatted(&self) -> [String; 4] {
        let fmt = |(m, s): (f64, f64)| format!("{m:.4} \u{00b1} {s:.4}");
        [
            self.combo.clone(),
            fmt(self.accuracy),
            fmt(self.auc),
            fmt(self.macro_f1),
        ]
    }
}

/// All non-empty modality subsets, singletons first, each named by joining
/// member names with `+`.
pub fn all_combinations(n_modalities: usize) -> Vec<Vec<usize>> {
    let mut combos: Vec<Vec<usize>> = (1u32..(1 << n_modalities))
        .map(|bits| {
            (0..n_modalities)
                .filter(|&m| bits & (1 << m) != 0)
                .collect()
        })
        .collect();
    combos.sort_by_key(|c| (c.len(), c.clone()));
    combos
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains the softmax affine model on the masked rows and returns logits
/// for all rows.
fn fit_logistic(
    features: &Matrix,
    labels: &[usize],
    train_mask: &[bool],
    num_classes: usize,
    settings: &BaselineSettings,
) -> Result<Matrix> {
    let with_bias = features.append_ones_col();
    let mut weights = Matrix::zeros(with_bias.cols(), num_classes);
    let mut opt = Sgd::new(settings.learning_rate, 0.0);
    for epoch in 0..settings.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(with_bias.clone());
        let w = tape.param(weights.clone());
        let logits = tape.matmul(x, w)?;
        let ce = masked_ce_graph(&mut tape, logits, labels, train_mask, num_classes)?;
        let total = if settings.l2 > 0.0 {
            let sq = tape.mul(w, w)?;
            let sum = tape.sum(sq);
            let penalty = tape.scale(sum, settings.l2);
            tape.add(ce, penalty)?
        } else {
            ce
        };
        let loss = tape.value(total).get(0, 0);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                learning_rate: settings.learning_rate,
                detail: "logistic baseline loss is not finite".into(),
            });
        }
        tape.backward(total)?;
        let grad = tape.grad(w).expect("weights carry gradients");
        opt.step(&mut [&mut weights], &[grad])?;
    }
    with_bias.matmul(&weights)
}

/// Runs the baseline over the given modality combinations. Reduction is
/// refit per repeat on that repeat's train mask.
pub fn logistic_baseline(
    ds: &MultiOmicsDataset,
    combos: &[Vec<usize>],
    reduction: &ReductionSettings,
    settings: &BaselineSettings,
    split_fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<BaselineRow>> {
    if settings.repeats == 0 {
        return Err(Error::contract("baseline needs at least one repeat"));
    }
    for combo in combos {
        if combo.is_empty() || combo.iter().any(|&m| m >= ds.n_modalities()) {
            return Err(Error::contract(
                "baseline combination indexes an unknown modality",
            ));
        }
    }
    let c = ds.n_classes();
    let base_rng = Rng::new(seed);

    let mut per_combo: Vec<Vec<EvalMetrics>> = vec![Vec::new(); combos.len()];
    for rep in 0..settings.repeats {
        let mut split_rng = base_rng.derive(rep as u64);
        let masks = stratified_split(&ds.labels, split_fractions, &mut split_rng)?;
        let reduced: Vec<Matrix> = ds
            .modalities
            .iter()
            .enumerate()
            .map(|(m_idx, m)| {
                reduce_features(
                    m,
                    reduction,
                    &masks.train,
                    base_rng
                        .derive(1000 + (rep * ds.n_modalities() + m_idx) as u64)
                        .seed(),
                )
                .map(|out| out.modality.features)
            })
            .collect::<Result<_>>()?;

        for (combo_idx, combo) in combos.iter().enumerate() {
            let parts: Vec<&Matrix> = combo.iter().map(|&m| &reduced[m]).collect();
            let features = Matrix::concat_cols(&parts)?;
            let logits = fit_logistic(&features, &ds.labels, &masks.train, c, settings)?;
            let metrics = evaluate_logits(&logits, &ds.labels, &masks.test, c)?;
            per_combo[combo_idx].push(metrics);
        }
    }

    Ok(combos
        .iter()
        .zip(per_combo)
        .map(|(combo, metrics)| {
            let name = combo
                .iter()
                .map(|&m| ds.modalities[m].name.as_str())
                .collect::<Vec<_>>()
                .join("+");
            BaselineRow {
                combo: name,
                accuracy: mean_std(&metrics.iter().map(|m| m.accuracy).collect::<Vec<_>>()),
                auc: mean_std(&metrics.iter().map(|m| m.auc).collect::<Vec<_>>()),
                macro_f1: mean_std(&metrics.iter().map(|m| m.macro_f1).collect::<Vec<_>>()),
            }
        })
        .collect())
}
