//! Loss graphs shared by the trainers: masked cross-entropy, teacher-student
//! KL divergence, and representation matching. All are built from the tape's
//! primitive ops so one gradient implementation per op covers every loss.

use crate::error::{Error, Result};
use crate::numeric::{Matrix, NodeId, Tape, LOG_FLOOR};

pub(crate) fn one_hot(labels: &[usize], num_classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (i, &y) in labels.iter().enumerate() {
        m.set(i, y, 1.0);
    }
    m
}

fn mask_count(mask: &[bool]) -> Result<f64> {
    let n = mask.iter().filter(|&&b| b).count();
    if n == 0 {
        return Err(Error::contract("loss mask selects no samples"));
    }
    Ok(n as f64)
}

/// Mean cross-entropy over masked samples:
/// `-(1/|mask|) sum_i sum_c y_ic ln p_ic` with `p = row_softmax(logits)`.
pub fn masked_ce_graph(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
    mask: &[bool],
    num_classes: usize,
) -> Result<NodeId> {
    let n_mask = mask_count(mask)?;
    let probs = tape.row_softmax(logits);
    let log_probs = tape.log_clamped(probs);
    let mut weights = one_hot(labels, num_classes);
    for (i, &keep) in mask.iter().enumerate() {
        let scale = if keep { -1.0 / n_mask } else { 0.0 };
        for v in weights.row_mut(i) {
            *v *= scale;
        }
    }
    let w = tape.constant(weights);
    let weighted = tape.mul(log_probs, w)?;
    Ok(tape.sum(weighted))
}

/// Plain-matrix version of the masked cross-entropy, for reporting heads
/// whose loss term is dropped from the graph (coefficient zero).
pub fn masked_ce_value(
    logits: &Matrix,
    labels: &[usize],
    mask: &[bool],
    num_classes: usize,
) -> Result<f64> {
    let n_mask = mask_count(mask)?;
    let probs = logits.row_softmax();
    let mut total = 0.0;
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            let y = labels[i];
            debug_assert!(y < num_classes);
            total -= probs.get(i, y).max(LOG_FLOOR).ln();
        }
    }
    Ok(total / n_mask)
}

/// Mean `D_KL(p^T || p^S)` over masked samples. The teacher's contribution
/// `sum p^T ln p^T` is a constant folded into the scalar value so the node
/// reports the true divergence while only the student side carries
/// gradients. `temperature` rescales both distributions (1 disables).
pub fn masked_kl_graph(
    tape: &mut Tape,
    student_logits: NodeId,
    teacher_probs: &Matrix,
    mask: &[bool],
    temperature: f64,
) -> Result<NodeId> {
    let n_mask = mask_count(mask)?;
    if temperature <= 0.0 {
        return Err(Error::contract("temperature must be positive"));
    }
    let teacher = if temperature == 1.0 {
        teacher_probs.clone()
    } else {
        sharpen(teacher_probs, 1.0 / temperature)
    };

    let student_scaled = if temperature == 1.0 {
        student_logits
    } else {
        tape.scale(student_logits, 1.0 / temperature)
    };
    let student_probs = tape.row_softmax(student_scaled);
    let student_log = tape.log_clamped(student_probs);

    // -(1/n) sum_masked p^T ln p^S via a constant weight matrix.
    let mut weights = teacher.clone();
    for (i, &keep) in mask.iter().enumerate() {
        let scale = if keep { -1.0 / n_mask } else { 0.0 };
        for v in weights.row_mut(i) {
            *v *= scale;
        }
    }
    let w = tape.constant(weights);
    let cross = tape.mul(student_log, w)?;
    let cross_sum = tape.sum(cross);

    // +(1/n) sum_masked p^T ln p^T, a constant.
    let mut teacher_entropy_term = 0.0;
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            for &p in teacher.row(i) {
                if p > 0.0 {
                    teacher_entropy_term += p * p.max(LOG_FLOOR).ln();
                }
            }
        }
    }
    let const_term = tape.constant(Matrix::scalar(teacher_entropy_term / n_mask));
    tape.add(cross_sum, const_term)
}

/// `p^(1/tau)` renormalized per row; equals softmax(logits / tau) when `p`
/// came from a softmax.
fn sharpen(probs: &Matrix, inv_temperature: f64) -> Matrix {
    let mut out = probs.map(|p| p.max(0.0).powf(inv_temperature));
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
    }
    out
}

/// Mean squared representation distance over masked samples, normalized by
/// the representation dimension: `(1/|mask|) sum_i ||h^T_i - h^S_i||^2 / d`.
pub fn masked_re_graph(
    tape: &mut Tape,
    student_repr: NodeId,
    teacher_repr: &Matrix,
    mask: &[bool],
) -> Result<NodeId> {
    let n_mask = mask_count(mask)?;
    let d = teacher_repr.cols() as f64;
    let teacher = tape.constant(teacher_repr.clone());
    let diff = tape.sub(student_repr, teacher)?;
    let sq = tape.mul(diff, diff)?;
    let mut weights = Matrix::zeros(teacher_repr.rows(), teacher_repr.cols());
    for (i, &keep) in mask.iter().enumerate() {
        if keep {
            for v in weights.row_mut(i) {
                *v = 1.0 / (n_mask * d);
            }
        }
    }
    let w = tape.constant(weights);
    let weighted = tape.mul(sq, w)?;
    Ok(tape.sum(weighted))
}
