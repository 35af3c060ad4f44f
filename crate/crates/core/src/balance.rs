//! Multitask-like joint training with dynamic per-modality loss
//! reweighting.
//!
//! Each modality keeps its own encoder and unimodal head; representations
//! are fused by concatenation into a multimodal head. The total loss is
//! `L^{M+1} + sum_m k^m L^m` where the multimodal coefficient is fixed at 1
//! and each `k^m` follows the piecewise tanh rule over the modality's
//! relative validation macro F1.

use crate::dataset::{ModalityMatrix, SplitMasks};
use crate::error::{Error, Result};
use crate::gcn::{gcn_graph, init_weight, GcnModel};
use crate::losses::{masked_ce_graph, masked_ce_value};
use crate::metrics::{evaluate_logits, EvalMetrics};
use crate::numeric::{Matrix, Rng, Tape};
use crate::optim::{Sgd, TrainParams};

/// Fusion operator for the multimodal head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Concatenation,
}

/// Reweighting hyperparameters: `alpha` damps strong/weak modalities,
/// `beta` damps low-information ones, `gamma` scales the 1/C threshold
/// between the two branches.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Epochs between coefficient refreshes.
    pub reweight_interval: usize,
    pub fusion: FusionKind,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            beta: 0.1,
            gamma: 1.5,
            reweight_interval: 5,
            fusion: FusionKind::Concatenation,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::contract("balance alpha and beta must be positive"));
        }
        if self.gamma < 1.0 {
            return Err(Error::contract("balance gamma must be >= 1"));
        }
        if self.reweight_interval == 0 {
            return Err(Error::contract("reweight interval must be >= 1"));
        }
        Ok(())
    }
}

/// Coefficients in force at an epoch: the relative ratios `r^m`, the head
/// weights `k^m`, and the fixed multimodal weight.
#[derive(Debug, Clone)]
pub struct CoefficientState {
    pub r: Vec<f64>,
    pub k: Vec<f64>,
    pub multimodal_k: f64,
    pub epoch: usize,
}

fn r_for(f_scores: &[f64], m: usize) -> Option<f64> {
    let others: f64 = f_scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != m)
        .map(|(_, &f)| f)
        .sum();
    let mean_others = others / (f_scores.len() - 1) as f64;
    (mean_others > 0.0).then(|| f_scores[m] / mean_others)
}

/// `r^m = F^m / mean_{j != m} F^j` for every modality. Errors when some
/// modality faces an all-zero complement; callers fall back to k = 0.5 for
/// that modality.
pub fn compute_r(f_scores: &[f64]) -> Result<Vec<f64>> {
    if f_scores.len() < 2 {
        return Err(Error::contract("compute_r needs at least 2 modalities"));
    }
    if f_scores.iter().any(|&f| f < 0.0) {
        return Err(Error::contract("macro F1 scores must be nonnegative"));
    }
    f_scores
        .iter()
        .enumerate()
        .map(|(m, _)| r_for(f_scores, m).ok_or(Error::SingularRatio { modality: m }))
        .collect()
}

fn k_for(r: f64, f: f64, cfg: &BalanceConfig, num_classes: usize) -> f64 {
    if f > cfg.gamma / num_classes as f64 {
        1.0 - (cfg.alpha * r).tanh()
    } else {
        (cfg.beta * r).tanh()
    }
}

/// Piecewise tanh weights: `k^m = 1 - tanh(alpha r^m)` above the `gamma/C`
/// threshold, `tanh(beta r^m)` below. The multimodal head weight is fixed
/// at 1; the ratio formula is only defined for modalities.
pub fn compute_k(
    r: &[f64],
    f_scores: &[f64],
    cfg: &BalanceConfig,
    num_classes: usize,
) -> Result<CoefficientState> {
    cfg.validate()?;
    if r.len() != f_scores.len() {
        return Err(Error::contract("compute_k: r and f_scores lengths differ"));
    }
    if num_classes == 0 {
        return Err(Error::contract("compute_k: num_classes must be positive"));
    }
    let k = r
        .iter()
        .zip(f_scores)
        .map(|(&rm, &fm)| k_for(rm, fm, cfg, num_classes))
        .collect();
    Ok(CoefficientState {
        r: r.to_vec(),
        k,
        multimodal_k: 1.0,
        epoch: 0,
    })
}

/// Coefficient refresh used by the trainer: computes `r` and `k`, and for
/// any modality with a singular ratio falls back to k = 0.5 with a logged
/// warning instead of failing the run.
pub fn compute_k_schedule(
    f_scores: &[f64],
    cfg: &BalanceConfig,
    num_classes: usize,
    epoch: usize,
) -> Result<(CoefficientState, Vec<String>)> {
    cfg.validate()?;
    if f_scores.len() < 2 {
        return Err(Error::contract(
            "coefficient schedule needs at least 2 modalities",
        ));
    }
    let mut warnings = Vec::new();
    let mut r = Vec::with_capacity(f_scores.len());
    let mut k = Vec::with_capacity(f_scores.len());
    for m in 0..f_scores.len() {
        match r_for(f_scores, m) {
            Some(rm) => {
                r.push(rm);
                k.push(k_for(rm, f_scores[m], cfg, num_classes));
            }
            None => {
                warnings.push(format!(
                    "epoch {epoch}: ratio undefined for modality {m} (all other macro F1 are 0); falling back to k = 0.5"
                ));
                r.push(1.0);
                k.push(0.5);
            }
        }
    }
    Ok((
        CoefficientState {
            r,
            k,
            multimodal_k: 1.0,
            epoch,
        },
        warnings,
    ))
}

/// The jointly trained model: per-modality encoders plus the fused head.
#[derive(Debug, Clone)]
pub struct JointModel {
    pub encoders: Vec<GcnModel>,
    /// `(sum of representation dims + 1) x C`.
    pub fusion_head: Matrix,
    pub modality_names: Vec<String>,
}

/// Per-head logits for all N samples.
#[derive(Debug, Clone)]
pub struct JointOutput {
    pub head_logits: Vec<Matrix>,
    pub fusion_logits: Matrix,
}

/// Evaluation forward pass (no gradients recorded).
pub fn joint_forward(joint: &JointModel, xs: &[&Matrix]) -> Result<JointOutput> {
    if xs.len() != joint.encoders.len() {
        return Err(Error::contract(
            "joint_forward: one feature matrix per encoder",
        ));
    }
    let mut reprs = Vec::with_capacity(xs.len());
    let mut head_logits = Vec::with_capacity(xs.len());
    for (enc, &x) in joint.encoders.iter().zip(xs) {
        let out = crate::gcn::gcn_forward(enc, x)?;
        reprs.push(out.representations);
        head_logits.push(out.logits);
    }
    let repr_refs: Vec<&Matrix> = reprs.iter().collect();
    let fused = Matrix::concat_cols(&repr_refs)?;
    let fusion_logits = fused.append_ones_col().matmul(&joint.fusion_head)?;
    Ok(JointOutput {
        head_logits,
        fusion_logits,
    })
}

/// Losses and logits observed by one joint step (state before the update).
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Unimodal CE per modality; reported even for heads whose term was
    /// dropped (coefficient 0).
    pub per_head_loss: Vec<f64>,
    pub fusion_loss: f64,
    /// The weighted total actually backpropagated.
    pub total_loss: f64,
    pub head_logits: Vec<Matrix>,
    pub fusion_logits: Matrix,
}

/// One full-batch update of all encoders, unimodal heads and the fusion
/// head under the weighted multitask loss. Zero-coefficient unimodal terms
/// are omitted from the graph; those heads then receive gradient only
/// through the fusion path (which does not touch the head weights at all).
#[allow(clippy::too_many_arguments)]
pub fn joint_step(
    joint: &mut JointModel,
    xs: &[&Matrix],
    labels: &[usize],
    train_mask: &[bool],
    coeffs: &CoefficientState,
    num_classes: usize,
    opt: &mut Sgd,
    epoch: usize,
    learning_rate: f64,
) -> Result<StepOutcome> {
    let m = joint.encoders.len();
    if xs.len() != m || (m > 1 && coeffs.k.len() != m) {
        return Err(Error::contract("joint_step: modality count mismatch"));
    }

    let mut tape = Tape::new();
    let mut graphs = Vec::with_capacity(m);
    for (enc, &x) in joint.encoders.iter().zip(xs) {
        graphs.push(gcn_graph(&mut tape, enc, x)?);
    }
    let reprs: Vec<_> = graphs.iter().map(|g| g.representation).collect();
    let fused = tape.concat_cols(&reprs)?;
    let ones = tape.constant(Matrix::filled(xs[0].rows(), 1, 1.0));
    let fused1 = tape.concat_cols(&[fused, ones])?;
    let fusion_head = tape.param(joint.fusion_head.clone());
    let fusion_logits = tape.matmul(fused1, fusion_head)?;

    let fusion_ce = masked_ce_graph(&mut tape, fusion_logits, labels, train_mask, num_classes)?;
    let mut total = fusion_ce;
    let mut per_head_loss = vec![0.0; m];
    if m > 1 {
        for (idx, graph) in graphs.iter().enumerate() {
            let k = coeffs.k[idx];
            if k != 0.0 {
                let ce = masked_ce_graph(&mut tape, graph.logits, labels, train_mask, num_classes)?;
                per_head_loss[idx] = tape.value(ce).get(0, 0);
                let weighted = tape.scale(ce, k);
                total = tape.add(total, weighted)?;
            } else {
                per_head_loss[idx] =
                    masked_ce_value(tape.value(graph.logits), labels, train_mask, num_classes)?;
            }
        }
    } else {
        per_head_loss[0] = masked_ce_value(
            tape.value(graphs[0].logits),
            labels,
            train_mask,
            num_classes,
        )?;
    }

    let fusion_loss = tape.value(fusion_ce).get(0, 0);
    let total_loss = tape.value(total).get(0, 0);
    if !total_loss.is_finite() {
        return Err(Error::Divergence {
            epoch,
            learning_rate,
            detail: format!(
                "total loss is not finite (fusion {fusion_loss}, per-head {per_head_loss:?})"
            ),
        });
    }

    let outcome = StepOutcome {
        per_head_loss,
        fusion_loss,
        total_loss,
        head_logits: graphs
            .iter()
            .map(|g| tape.value(g.logits).clone())
            .collect(),
        fusion_logits: tape.value(fusion_logits).clone(),
    };

    tape.backward(total)?;
    let mut grads: Vec<&Matrix> = Vec::new();
    for graph in &graphs {
        for &w in &graph.weight_ids {
            grads.push(tape.grad(w).expect("weights carry gradients"));
        }
        grads.push(tape.grad(graph.head_id).expect("heads carry gradients"));
    }
    grads.push(
        tape.grad(fusion_head)
            .expect("fusion head carries gradients"),
    );

    let mut params: Vec<&mut Matrix> = Vec::new();
    for enc in &mut joint.encoders {
        for w in enc.layer_weights.iter_mut() {
            params.push(w);
        }
        params.push(&mut enc.head_weights);
    }
    params.push(&mut joint.fusion_head);
    opt.step(&mut params, &grads)?;

    Ok(outcome)
}

/// One epoch of the training report.
#[derive(Debug, Clone)]
pub struct BalanceEpochRow {
    pub epoch: usize,
    pub k: Vec<f64>,
    pub multimodal_k: f64,
    pub head_losses: Vec<f64>,
    pub fusion_loss: f64,
    pub total_loss: f64,
    pub head_val_f1: Vec<f64>,
    pub fusion_val_f1: f64,
}

/// Final per-head test metrics.
#[derive(Debug, Clone)]
pub struct HeadReport {
    pub name: String,
    pub test: EvalMetrics,
}

/// Full record of a balanced training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<BalanceEpochRow>,
    pub final_test: Vec<HeadReport>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub warnings: Vec<String>,
}

/// Report plus the best-validation model.
#[derive(Debug)]
pub struct BalancedRun {
    pub report: TrainReport,
    pub model: JointModel,
}

/// The joint training loop. Encoders arrive pre-initialized (typically
/// distillation-pretrained); the fusion head is seeded here. Coefficients
/// refresh every `reweight_interval` epochs from per-head validation macro
/// F1. With a single modality balancing is disabled and the run reduces to
/// plain cross-entropy training of that encoder. `naive` freezes every
/// k at 1 (the unweighted ablation).
#[allow(clippy::too_many_arguments)]
pub fn train_balanced(
    modalities: &[ModalityMatrix],
    encoders: Vec<GcnModel>,
    labels: &[usize],
    masks: &SplitMasks,
    num_classes: usize,
    cfg: &BalanceConfig,
    train: &TrainParams,
    seed: u64,
    naive: bool,
) -> Result<BalancedRun> {
    cfg.validate()?;
    train.validate()?;
    let m = modalities.len();
    if m == 0 || encoders.len() != m {
        return Err(Error::contract("train_balanced: one encoder per modality"));
    }
    let n = modalities[0].n_samples();
    for modality in modalities {
        if modality.n_samples() != n {
            return Err(Error::SampleCount {
                left_name: modalities[0].name.clone(),
                left_n: n,
                right_name: modality.name.clone(),
                right_n: modality.n_samples(),
            });
        }
    }

    let fused_dim: usize = encoders.iter().map(|e| e.representation_dim).sum();
    let fusion_head = if m == 1 {
        encoders[0].head_weights.clone()
    } else {
        let mut rng = Rng::new(seed);
        init_weight(fused_dim + 1, num_classes, &mut rng)
    };
    let mut joint = JointModel {
        encoders,
        fusion_head,
        modality_names: modalities.iter().map(|mm| mm.name.clone()).collect(),
    };
    let xs: Vec<&Matrix> = modalities.iter().map(|mm| &mm.features).collect();
    let mut opt = Sgd::new(train.learning_rate, train.momentum);

    let mut warnings = Vec::new();
    let mut coeffs = CoefficientState {
        r: vec![1.0; m],
        k: vec![1.0; m],
        multimodal_k: 1.0,
        epoch: 0,
    };

    let mut rows = Vec::with_capacity(train.epochs + 1);
    let mut best: Option<(f64, usize, ParamSnapshot)> = None;

    for epoch in 0..=train.epochs {
        let refresh_due = m > 1 && !naive && epoch % cfg.reweight_interval == 0;
        let eval_out = if refresh_due || epoch == train.epochs {
            Some(joint_forward(&joint, &xs)?)
        } else {
            None
        };
        if refresh_due {
            let out = eval_out.as_ref().expect("eval ran");
            let f_scores: Vec<f64> = out
                .head_logits
                .iter()
                .map(|logits| {
                    evaluate_logits(logits, labels, &masks.val, num_classes).map(|e| e.macro_f1)
                })
                .collect::<Result<_>>()?;
            let (state, mut warns) = compute_k_schedule(&f_scores, cfg, num_classes, epoch)?;
            warnings.append(&mut warns);
            coeffs = state;
        }

        if epoch == train.epochs {
            // Final evaluation row: state after the last update.
            let out = eval_out.expect("eval ran");
            let row = report_row(&out, &coeffs, labels, masks, num_classes, epoch, None)?;
            consider_best(&mut best, row.fusion_val_f1, epoch, &joint);
            rows.push(row);
            break;
        }

        // The step's losses and logits describe the pre-update state, so the
        // snapshot for best-model selection is taken before stepping.
        let pre_step = ParamSnapshot::capture(&joint);
        let outcome = joint_step(
            &mut joint,
            &xs,
            labels,
            &masks.train,
            &coeffs,
            num_classes,
            &mut opt,
            epoch,
            train.learning_rate,
        )?;
        let out = JointOutput {
            head_logits: outcome.head_logits.clone(),
            fusion_logits: outcome.fusion_logits.clone(),
        };
        let row = report_row(
            &out,
            &coeffs,
            labels,
            masks,
            num_classes,
            epoch,
            Some(&outcome),
        )?;
        if best.as_ref().is_none_or(|(b, ..)| row.fusion_val_f1 > *b) {
            best = Some((row.fusion_val_f1, epoch, pre_step));
        }
        rows.push(row);
    }

    let (best_val, best_epoch, best_params) = best.expect("at least one epoch evaluated");
    best_params.restore(&mut joint);

    // Final test metrics from the selected model.
    let out = joint_forward(&joint, &xs)?;
    let mut final_test = Vec::with_capacity(m + 1);
    for (idx, name) in joint.modality_names.iter().enumerate() {
        final_test.push(HeadReport {
            name: name.clone(),
            test: evaluate_logits(&out.head_logits[idx], labels, &masks.test, num_classes)?,
        });
    }
    final_test.push(HeadReport {
        name: "multimodal".into(),
        test: evaluate_logits(&out.fusion_logits, labels, &masks.test, num_classes)?,
    });

    Ok(BalancedRun {
        report: TrainReport {
            rows,
            final_test,
            best_epoch,
            best_val_macro_f1: best_val,
            warnings,
        },
        model: joint,
    })
}

/// Trainable parameters only; excludes the (large, immutable) adjacency so
/// per-epoch snapshots stay cheap.
struct ParamSnapshot {
    layer_weights: Vec<Vec<Matrix>>,
    head_weights: Vec<Matrix>,
    fusion_head: Matrix,
}

impl ParamSnapshot {
    fn capture(joint: &JointModel) -> Self {
        Self {
            layer_weights: joint
                .encoders
                .iter()
                .map(|e| e.layer_weights.clone())
                .collect(),
            head_weights: joint
                .encoders
                .iter()
                .map(|e| e.head_weights.clone())
                .collect(),
            fusion_head: joint.fusion_head.clone(),
        }
    }

    fn restore(self, joint: &mut JointModel) {
        for ((enc, weights), head) in joint
            .encoders
            .iter_mut()
            .zip(self.layer_weights)
            .zip(self.head_weights)
        {
            enc.layer_weights = weights;
            enc.head_weights = head;
        }
        joint.fusion_head = self.fusion_head;
    }
}

fn report_row(
    out: &JointOutput,
    coeffs: &CoefficientState,
    labels: &[usize],
    masks: &SplitMasks,
    num_classes: usize,
    epoch: usize,
    outcome: Option<&StepOutcome>,
) -> Result<BalanceEpochRow> {
    let head_val_f1: Vec<f64> = out
        .head_logits
        .iter()
        .map(|l| evaluate_logits(l, labels, &masks.val, num_classes).map(|e| e.macro_f1))
        .collect::<Result<_>>()?;
    let fusion_val_f1 =
        evaluate_logits(&out.fusion_logits, labels, &masks.val, num_classes)?.macro_f1;
    let (head_losses, fusion_loss, total_loss) = match outcome {
        Some(o) => (o.per_head_loss.clone(), o.fusion_loss, o.total_loss),
        None => {
            // Evaluation-only row: recompute the loss values at this state.
            let m = out.head_logits.len();
            let mut head_losses = Vec::with_capacity(m);
            for logits in &out.head_logits {
                head_losses.push(masked_ce_value(logits, labels, &masks.train, num_classes)?);
            }
            let fusion_loss =
                masked_ce_value(&out.fusion_logits, labels, &masks.train, num_classes)?;
            let total = if m > 1 {
                fusion_loss
                    + coeffs
                        .k
                        .iter()
                        .zip(&head_losses)
                        .map(|(&k, &l)| k * l)
                        .sum::<f64>()
            } else {
                fusion_loss
            };
            (head_losses, fusion_loss, total)
        }
    };
    Ok(BalanceEpochRow {
        epoch,
        k: coeffs.k.clone(),
        multimodal_k: coeffs.multimodal_k,
        head_losses,
        fusion_loss,
        total_loss,
        head_val_f1,
        fusion_val_f1,
    })
}

fn consider_best(
    best: &mut Option<(f64, usize, ParamSnapshot)>,
    val: f64,
    epoch: usize,
    joint: &JointModel,
) {
    if best.as_ref().is_none_or(|(b, ..)| val > *b) {
        *best = Some((val, epoch, ParamSnapshot::capture(joint)));
    }
}
