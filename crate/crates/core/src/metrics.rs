//! Evaluation metrics, learning-state diagnostics, and discrete mutual
//! information.
//!
//! Macro F1 is the pipeline's learning-state signal: it picks the strong
//! modality, flags low-information ones against the random-guess level 1/C,
//! and drives the loss reweighting schedule.

use crate::dataset::ModalityMatrix;
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// C x C contingency counts, rows = truth, cols = prediction.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::contract(
                "confusion matrix needs at least one sample",
            ));
        }
        if truth.len() != pred.len() {
            return Err(Error::contract("truth and prediction lengths differ"));
        }
        let mut counts = vec![vec![0usize; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::contract(format!(
                    "label out of range: ({t}, {p}) with {num_classes} classes"
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

/// Unweighted mean of per-class F1. A class with zero true and zero
/// predicted instances contributes F1 = 0.
pub fn macro_f1(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<f64> {
    let cm = ConfusionMatrix::from_labels(truth, pred, num_classes)?;
    let mut sum = 0.0;
    for c in 0..num_classes {
        let tp = cm.counts[c][c] as f64;
        let fp: f64 = (0..num_classes)
            .filter(|&t| t != c)
            .map(|t| cm.counts[t][c] as f64)
            .sum();
        let fneg: f64 = (0..num_classes)
            .filter(|&p| p != c)
            .map(|p| cm.counts[c][p] as f64)
            .sum();
        let denom = 2.0 * tp + fp + fneg;
        if denom > 0.0 {
            sum += 2.0 * tp / denom;
        }
    }
    Ok(sum / num_classes as f64)
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::contract(
            "accuracy needs non-empty, equal-length labels",
        ));
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Macro one-vs-rest AUC with its warning channel.
#[derive(Debug, Clone)]
pub struct AucOutcome {
    pub value: f64,
    /// Classes absent from the truth vector, skipped from the mean.
    pub skipped_classes: Vec<usize>,
}

/// Rank-based one-vs-rest AUC, tie-corrected (ties contribute 1/2),
/// averaged over the classes present in `truth`. `scores` rows must be
/// probability vectors (sum to 1 within 1e-6).
pub fn macro_ovr_auc(truth: &[usize], scores: &Matrix) -> Result<AucOutcome> {
    let n = truth.len();
    if n == 0 || scores.rows() != n {
        return Err(Error::contract("auc needs one score row per sample"));
    }
    let c = scores.cols();
    for i in 0..n {
        let sum: f64 = scores.row(i).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "score row {i} sums to {sum}, expected 1"
            )));
        }
    }

    let mut skipped = Vec::new();
    let mut total = 0.0;
    let mut scored = 0usize;
    for class in 0..c {
        let n_pos = truth.iter().filter(|&&t| t == class).count();
        let n_neg = n - n_pos;
        if n_pos == 0 {
            skipped.push(class);
            continue;
        }
        if n_neg == 0 {
            // degenerate single-class truth: AUC undefined for this class too
            skipped.push(class);
            continue;
        }
        // Average ranks with tie correction.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores
                .get(a, class)
                .partial_cmp(&scores.get(b, class))
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        let mut ranks = vec![0.0_f64; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && scores.get(order[j + 1], class) == scores.get(order[i], class) {
                j += 1;
            }
            let avg_rank = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                ranks[idx] = avg_rank;
            }
            i = j + 1;
        }
        let rank_sum: f64 = truth
            .iter()
            .enumerate()
            .filter(|&(_, &t)| t == class)
            .map(|(i, _)| ranks[i])
            .sum();
        let auc =
            (rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64);
        total += auc;
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::contract("auc: no class could be scored"));
    }
    Ok(AucOutcome {
        value: total / scored as f64,
        skipped_classes: skipped,
    })
}

/// Category assigned to a modality by its macro F1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateCategory {
    Strong,
    Weak,
    LowInformation,
}

impl std::fmt::Display for StateCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StateCategory::Strong => "strong",
            StateCategory::Weak => "weak",
            StateCategory::LowInformation => "low_information",
        };
        f.write_str(s)
    }
}

/// Per-modality learning state.
#[derive(Debug, Clone)]
pub struct LearningState {
    pub macro_f1: f64,
    pub category: StateCategory,
}

/// Categorizes modalities: the highest macro F1 is strong (ties resolve to
/// the lowest index), scores at or below `gamma / C` are low-information,
/// the rest are weak. Exactly one modality comes out strong.
pub fn categorize(f_scores: &[f64], gamma: f64, num_classes: usize) -> Result<Vec<LearningState>> {
    if f_scores.is_empty() {
        return Err(Error::contract("categorize needs at least one modality"));
    }
    if gamma < 1.0 {
        return Err(Error::contract("gamma must be >= 1"));
    }
    if num_classes == 0 {
        return Err(Error::contract("num_classes must be positive"));
    }
    let mut strong = 0;
    for (i, &f) in f_scores.iter().enumerate() {
        if f > f_scores[strong] {
            strong = i;
        }
    }
    let threshold = gamma / num_classes as f64;
    Ok(f_scores
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let category = if i == strong {
                StateCategory::Strong
            } else if f <= threshold {
                StateCategory::LowInformation
            } else {
                StateCategory::Weak
            };
            LearningState {
                macro_f1: f,
                category,
            }
        })
        .collect())
}

/// Per-epoch train/validation loss trace.
#[derive(Debug, Clone)]
pub struct OgrTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Overfitting-to-generalization ratio between epochs `e` and `e + n`:
/// `O_e = L^Va_e - L^Tr_e`, ratio = `|(O_{e+n} - O_e) / (L^Va_e - L^Va_{e+n})|`.
/// Offered as an optional diagnostic; the pipeline itself keys on macro F1.
pub fn ogr_ratio(trace: &OgrTrace, epoch: usize, window: usize) -> Result<f64> {
    if trace.train_loss.len() != trace.val_loss.len() {
        return Err(Error::contract("ogr trace lengths differ"));
    }
    if window < 1 {
        return Err(Error::contract("ogr window must be >= 1"));
    }
    let last = epoch + window;
    if last >= trace.val_loss.len() {
        return Err(Error::contract(format!(
            "ogr needs epochs up to {last}, trace has {}",
            trace.val_loss.len()
        )));
    }
    let o_e = trace.val_loss[epoch] - trace.train_loss[epoch];
    let o_n = trace.val_loss[last] - trace.train_loss[last];
    let denom = trace.val_loss[epoch] - trace.val_loss[last];
    if denom.abs() < 1e-12 {
        return Err(Error::OgrPlateau);
    }
    Ok(((o_n - o_e) / denom).abs())
}

/// Plug-in mutual information between two discrete label vectors, in nats.
pub fn mutual_information(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::contract(
            "mutual_information needs equal lengths >= 2",
        ));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let n = a.len() as f64;
    let mut joint = vec![vec![0usize; kb]; ka];
    let mut pa = vec![0usize; ka];
    let mut pb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let j = joint[x][y];
            if j == 0 {
                continue; // 0 * ln 0 == 0
            }
            let pxy = j as f64 / n;
            let px = pa[x] as f64 / n;
            let py = pb[y] as f64 / n;
            mi += pxy * (pxy / (px * py)).ln();
        }
    }
    Ok(mi.max(0.0))
}

/// How a modality is reduced to a 1-D discrete variable for the MI gate.
#[derive(Debug, Clone)]
pub enum Quantizer {
    /// The modality's own unimodal classifier predictions (the default in
    /// the pipeline, where those predictions already exist).
    PredictedLabels(Vec<usize>),
    /// Quantile bins along the first principal axis; needs no classifier.
    PrincipalAxisBins { bins: usize },
}

/// MI value plus the degenerate-quantizer warning channel.
#[derive(Debug, Clone)]
pub struct MiOutcome {
    pub value: f64,
    pub warning: Option<String>,
}

/// Mutual information between a (quantized) modality and the strong
/// modality's predicted labels. A constant quantization yields MI = 0 with
/// a warning instead of an error.
pub fn modality_mi(
    modality: &ModalityMatrix,
    strong_predictions: &[usize],
    quantizer: &Quantizer,
) -> Result<MiOutcome> {
    let n = modality.n_samples();
    if strong_predictions.len() != n {
        return Err(Error::SampleCount {
            left_name: modality.name.clone(),
            left_n: n,
            right_name: "strong predictions".into(),
            right_n: strong_predictions.len(),
        });
    }
    let quantized: Vec<usize> = match quantizer {
        Quantizer::PredictedLabels(labels) => {
            if labels.len() != n {
                return Err(Error::contract(
                    "quantizer labels length differs from modality",
                ));
            }
            labels.clone()
        }
        Quantizer::PrincipalAxisBins { bins } => {
            if *bins < 2 {
                return Err(Error::contract("quantizer needs at least 2 bins"));
            }
            principal_axis_bins(&modality.features, *bins)
        }
    };
    let first = quantized[0];
    if quantized.iter().all(|&q| q == first) {
        return Ok(MiOutcome {
            value: 0.0,
            warning: Some(format!(
                "quantizer for modality '{}' produced a constant; MI set to 0",
                modality.name
            )),
        });
    }
    Ok(MiOutcome {
        value: mutual_information(&quantized, strong_predictions)?,
        warning: None,
    })
}

/// Projects samples on the leading principal axis (power iteration on the
/// centered Gram direction) and assigns equal-count quantile bins.
fn principal_axis_bins(features: &Matrix, bins: usize) -> Vec<usize> {
    let n = features.rows();
    let d = features.cols();
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (j, m) in means.iter_mut().enumerate() {
            *m += features.get(i, j);
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let centered = Matrix::from_fn(n, d, |i, j| features.get(i, j) - means[j]);
    let ct = centered.transpose();

    let mut v = Matrix::filled(d, 1, 1.0 / (d as f64).sqrt());
    for _ in 0..100 {
        let xv = centered.matmul(&v).expect("shapes chain");
        let xtxv = ct.matmul(&xv).expect("shapes chain");
        let norm = xtxv.frob_norm();
        if norm <= 1e-300 {
            break;
        }
        v = xtxv.scale(1.0 / norm);
    }
    let projected = centered.matmul(&v).expect("shapes chain");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        projected
            .get(a, 0)
            .partial_cmp(&projected.get(b, 0))
            .expect("finite")
            .then(a.cmp(&b))
    });
    // Equal projections must land in the same bin or constant inputs would
    // fan out across bins by index.
    let mut out = vec![0usize; n];
    let mut prev_value = f64::NAN;
    let mut prev_bin = 0usize;
    for (rank, &idx) in order.iter().enumerate() {
        let value = projected.get(idx, 0);
        let bin = if value == prev_value {
            prev_bin
        } else {
            rank * bins / n
        };
        out[idx] = bin;
        prev_value = value;
        prev_bin = bin;
    }
    out
}

/// Accuracy, macro one-vs-rest AUC and macro F1 in one bundle.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub auc: f64,
    pub macro_f1: f64,
}

/// Scores head logits on the masked subset: softmax probabilities for AUC,
/// argmax predictions for accuracy and macro F1.
pub fn evaluate_logits(
    logits: &Matrix,
    labels: &[usize],
    mask: &[bool],
    num_classes: usize,
) -> Result<EvalMetrics> {
    let subset = logits.select_rows(mask);
    let truth = crate::dataset::select_labels(labels, mask);
    if truth.is_empty() {
        return Err(Error::contract("evaluation mask selects no samples"));
    }
    let probs = subset.row_softmax();
    let pred = probs.argmax_rows();
    Ok(EvalMetrics {
        accuracy: accuracy(&truth, &pred)?,
        auc: macro_ovr_auc(&truth, &probs)?.value,
        macro_f1: macro_f1(&truth, &pred, num_classes)?,
    })
}
