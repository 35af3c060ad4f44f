//! Minimal reverse-mode differentiable expression graph over [`Matrix`].
//!
//! A [`Tape`] records operations as they execute; node creation order is a
//! topological order of the DAG, so [`Tape::backward`] is one reverse sweep.
//! Graphs are rebuilt per training step: parameters enter as `param` leaves,
//! fixed data (features, adjacency, masks, one-hot targets) as `constant`
//! leaves that never receive gradients.
//!
//! The op set is deliberately small; composite losses (cross-entropy, KL,
//! representation matching, weighted multitask totals) are built from it
//! rather than fused, so a single gradient implementation per op covers
//! everything the trainers need.

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Probabilities are clamped here before logs; keeps `ln` finite when a
/// softmax output underflows to zero.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    RowSoftmax(NodeId),
    LogClamped(NodeId),
    Sum(NodeId),
    ConcatCols(Vec<NodeId>),
}

#[derive(Debug)]
struct DiffNode {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Single-threaded expression graph; values are immutable once recorded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<DiffNode>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(DiffNode {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that participates in differentiation (a trainable parameter).
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation (data, adjacency, masks, targets).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last [`Tape::backward`]; `None` for nodes
    /// excluded from differentiation.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id.0].grad.as_ref()
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        let rg = self.needs(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Elementwise `max(0, x)`; subgradient at 0 is 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.needs(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Row-wise softmax with max subtraction. Output rows sum to 1 and are
    /// strictly positive up to underflow.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).row_softmax();
        let rg = self.needs(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    /// `ln(max(x, LOG_FLOOR))` elementwise.
    pub fn log_clamped(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(LOG_FLOOR).ln());
        let rg = self.needs(a);
        self.push(value, Op::LogClamped(a), rg)
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::concat_cols(&values)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    fn accumulate(&mut self, id: NodeId, delta: &Matrix) {
        if !self.needs(id) {
            return;
        }
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => g.axpy(1.0, delta).expect("gradient shape matches value"),
            None => node.grad = Some(delta.clone()),
        }
    }

    /// Reverse sweep from a scalar root. Every reachable `param` leaf ends up
    /// holding d(root)/d(param). Gradients are zeroed first, so calling this
    /// twice on the same graph yields identical results.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let shape = {
            let v = self.value(root);
            (v.rows(), v.cols())
        };
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward requires a scalar (1x1) root, got {}x{}",
                shape.0, shape.1
            )));
        }
        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad = Some(Matrix::zeros(node.value.rows(), node.value.cols()));
            } else {
                node.grad = None;
            }
        }
        if !self.needs(root) {
            return Ok(()); // constant graph: all gradients are zero
        }
        self.nodes[root.0].grad = Some(Matrix::scalar(1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let out_grad = match self.nodes[idx].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            match self.nodes[idx].op.clone() {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(a) {
                        let bt = self.value(b).transpose();
                        let da = out_grad.matmul(&bt)?;
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let at = self.value(a).transpose();
                        let db = at.matmul(&out_grad)?;
                        self.accumulate(b, &db);
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(a, &out_grad);
                    self.accumulate(b, &out_grad);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &out_grad);
                    if self.needs(b) {
                        let neg = out_grad.scale(-1.0);
                        self.accumulate(b, &neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let da = out_grad.hadamard(self.value(b))?;
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let db = out_grad.hadamard(self.value(a))?;
                        self.accumulate(b, &db);
                    }
                }
                Op::Scale(a, c) => {
                    let da = out_grad.scale(c);
                    self.accumulate(a, &da);
                }
                Op::Relu(a) => {
                    let da =
                        out_grad.zip_map(self.value(a), |g, v| if v > 0.0 { g } else { 0.0 })?;
                    self.accumulate(a, &da);
                }
                Op::RowSoftmax(a) => {
                    let y = &self.nodes[idx].value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let yrow = y.row(i);
                        let grow = out_grad.row(i);
                        let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                        let drow = da.row_mut(i);
                        for j in 0..yrow.len() {
                            drow[j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LogClamped(a) => {
                    let da = out_grad.zip_map(self.value(a), |g, v| {
                        if v >= LOG_FLOOR {
                            g / v
                        } else {
                            0.0
                        }
                    })?;
                    self.accumulate(a, &da);
                }
                Op::Sum(a) => {
                    let g = out_grad.get(0, 0);
                    let src = self.value(a);
                    let da = Matrix::filled(src.rows(), src.cols(), g);
                    self.accumulate(a, &da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.value(p).cols();
                        if self.needs(p) {
                            let rows = self.value(p).rows();
                            let mut dp = Matrix::zeros(rows, pc);
                            for i in 0..rows {
                                let grow = out_grad.row(i);
                                dp.row_mut(i).copy_from_slice(&grow[offset..offset + pc]);
                            }
                            self.accumulate(p, &dp);
                        }
                        offset += pc;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let m = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let i = t.constant(Matrix::identity(3));
        let x = t.param(m.clone());
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y), &m);
    }

    #[test]
    fn matmul_scalar_product() {
        let mut t = Tape::new();
        let a = t.param(Matrix::scalar(2.0));
        let b = t.param(Matrix::scalar(3.0));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).get(0, 0), 6.0);
    }

    #[test]
    fn relu_values() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(vec![vec![-1.0, 0.0, 2.0]]).unwrap());
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);

        let neg = t.param(Matrix::filled(3, 2, -5.0));
        let z = t.relu(neg);
        assert!(t.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(1, 4));
        let y = t.row_softmax(x);
        for &v in t.value(y).data() {
            approx(v, 0.25, 1e-15);
        }

        let big = t.param(Matrix::from_rows(vec![vec![1000.0, 0.0]]).unwrap());
        let s = t.row_softmax(big);
        let row = t.value(s).data();
        assert!(row[0].is_finite() && row[1].is_finite());
        approx(row[0], 1.0, 1e-12);
        approx(row[1], 0.0, 1e-12);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(3, 2, 1.5));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn backward_zero_scale_gives_zeros() {
        let mut t = Tape::new();
        let x = t.param(Matrix::filled(2, 2, 3.0));
        let z = t.scale(x, 0.0);
        let s = t.sum(z);
        t.backward(s).unwrap();
        assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        let err = t.backward(x).unwrap_err().to_string();
        assert!(err.contains("scalar"), "{err}");
    }

    #[test]
    fn backward_twice_is_identical() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(vec![vec![0.3, -0.7], vec![1.2, 0.4]]).unwrap());
        let r = t.relu(x);
        let sm = t.row_softmax(r);
        let lg = t.log_clamped(sm);
        let s = t.sum(lg);
        t.backward(s).unwrap();
        let first = t.grad(x).unwrap().clone();
        t.backward(s).unwrap();
        assert_eq!(&first, t.grad(x).unwrap());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(2, 2, 2.0));
        let x = t.param(Matrix::filled(2, 2, 1.0));
        let y = t.mul(c, x).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert!(t.grad(c).is_none());
        assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 2.0));
    }
}
