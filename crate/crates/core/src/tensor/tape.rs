//! Reverse-mode differentiation over dense matrices.
//!
//! Every primitive applied to a [`Var`] appends a node to the owning [`Tape`]
//! that remembers its parents and enough of the forward values to form the
//! local vector-Jacobian product. [`Tape::gradient`] walks the nodes once in
//! reverse order. Tapes are cheap and meant to be rebuilt for every forward
//! pass.

use std::cell::{Ref, RefCell};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    AddCol(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Act(usize, ActivationKind),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Sqrt(usize),
    Sum(usize),
    RowSum(usize),
    ColSum(usize),
    LogSumExp(usize),
    HCat(Vec<usize>),
    ColRange(usize, usize),
    TrilFactor(usize),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Append-only record of a computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.idx, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// Records an input. Parameters and constants are both leaves; only the
    /// ones passed to [`Tape::gradient`] get gradients reported.
    pub fn var(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(Matrix::scalar(value), Op::Leaf)
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Result<Vec<Matrix>> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.idx].value.shape();
        if out_shape != (1, 1) {
            return Err(Error::NonScalarOutput(out_shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.idx + 1];
        grads[output.idx] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            backprop(&nodes, node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(wrt
            .iter()
            .map(|v| {
                grads
                    .get(v.idx)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| {
                        let (r, c) = nodes[v.idx].value.shape();
                        Matrix::zeros(r, c)
                    })
            })
            .collect())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            accumulate(grads, *a, g.matmul_t(val(*b))?);
            accumulate(grads, *b, val(*a).t_matmul(g)?);
        }
        Op::Add(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            accumulate(grads, *a, g.hadamard(val(*b))?);
            accumulate(grads, *b, g.hadamard(val(*a))?);
        }
        Op::AddRow(a, row) => {
            accumulate(grads, *a, g.clone());
            let mut acc = vec![0.0; g.cols()];
            for i in 0..g.rows() {
                for (s, v) in acc.iter_mut().zip(g.row(i)) {
                    *s += v;
                }
            }
            accumulate(grads, *row, Matrix::row_vector(acc));
        }
        Op::AddCol(a, col) => {
            accumulate(grads, *a, g.clone());
            let acc = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
            accumulate(grads, *col, Matrix::column(acc));
        }
        Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
        Op::Offset(a) => accumulate(grads, *a, g.clone()),
        Op::Act(a, kind) => {
            let x = val(*a);
            let d = Matrix::from_fn(x.rows(), x.cols(), |i, j| g.get(i, j) * kind.derivative(x.get(i, j)));
            accumulate(grads, *a, d);
        }
        Op::Exp(a) => accumulate(grads, *a, g.hadamard(&node.value)?),
        Op::Ln(a) => {
            let x = val(*a);
            let d = Matrix::from_fn(x.rows(), x.cols(), |i, j| g.get(i, j) / x.get(i, j));
            accumulate(grads, *a, d);
        }
        Op::Square(a) => {
            let x = val(*a);
            let d = Matrix::from_fn(x.rows(), x.cols(), |i, j| 2.0 * x.get(i, j) * g.get(i, j));
            accumulate(grads, *a, d);
        }
        Op::Sqrt(a) => {
            // subgradient 0 at the origin
            let y = &node.value;
            let d = Matrix::from_fn(y.rows(), y.cols(), |i, j| {
                let s = y.get(i, j);
                if s > 0.0 {
                    g.get(i, j) / (2.0 * s)
                } else {
                    0.0
                }
            });
            accumulate(grads, *a, d);
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, *a, Matrix::filled(r, c, g.item()));
        }
        Op::RowSum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, *a, Matrix::from_fn(r, c, |i, _| g.get(i, 0)));
        }
        Op::ColSum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(grads, *a, Matrix::from_fn(r, c, |_, j| g.get(0, j)));
        }
        Op::LogSumExp(a) => {
            let x = val(*a);
            let lse = &node.value;
            let d = Matrix::from_fn(x.rows(), x.cols(), |i, j| g.get(i, 0) * (x.get(i, j) - lse.get(i, 0)).exp());
            accumulate(grads, *a, d);
        }
        Op::HCat(parts) => {
            let mut start = 0;
            for &p in parts {
                let w = val(p).cols();
                accumulate(grads, p, g.col_range(start, w));
                start += w;
            }
        }
        Op::ColRange(a, start) => {
            let (r, c) = val(*a).shape();
            let mut d = Matrix::zeros(r, c);
            for i in 0..r {
                for j in 0..g.cols() {
                    d.set(i, start + j, g.get(i, j));
                }
            }
            accumulate(grads, *a, d);
        }
        Op::TrilFactor(a) => {
            let y = &node.value;
            let n = y.rows();
            let d = Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Greater => g.get(i, j),
                std::cmp::Ordering::Equal => g.get(i, j) * y.get(i, i),
                std::cmp::Ordering::Less => 0.0,
            });
            accumulate(grads, *a, d);
        }
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    /// Borrow of the recorded value. Drop it before recording further ops.
    pub fn value(&self) -> Ref<'t, Matrix> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.idx].value)
    }

    pub fn to_matrix(&self) -> Matrix {
        self.value().clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Var<'t> {
        let out = f(&self.value());
        self.tape.push(out, op)
    }

    fn binary(&self, other: Var<'t>, op: Op, f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix>) -> Result<Var<'t>> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.idx].value, &nodes[other.idx].value)?
        };
        Ok(self.tape.push(out, op))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.idx, other.idx), |a, b| a.matmul(b))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.idx, other.idx), |a, b| a.add(b))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.idx, other.idx), |a, b| a.sub(b))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.idx, other.idx), |a, b| a.hadamard(b))
    }

    /// Adds a `1 x c` row vector to every row.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.idx, row.idx), |a, r| {
            if r.rows() != 1 || r.cols() != a.cols() {
                return Err(Error::shape("add_row", a.shape(), r.shape()));
            }
            Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + r.get(0, j)))
        })
    }

    /// Adds an `n x 1` column vector to every column.
    pub fn add_col(&self, col: Var<'t>) -> Result<Var<'t>> {
        self.binary(col, Op::AddCol(self.idx, col.idx), |a, c| {
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(Error::shape("add_col", a.shape(), c.shape()));
            }
            Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + c.get(i, 0)))
        })
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.idx, s), |a| a.scale(s))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Adds a constant to every entry.
    pub fn offset(&self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.idx), |a| a.map(|v| v + c))
    }

    pub fn activation(&self, kind: ActivationKind) -> Var<'t> {
        if kind == ActivationKind::Identity {
            return *self;
        }
        self.unary(Op::Act(self.idx, kind), |a| a.map(|v| kind.apply(v)))
    }

    pub fn relu(&self) -> Var<'t> {
        self.activation(ActivationKind::Relu)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.idx), |a| a.map(f64::exp))
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(Op::Ln(self.idx), |a| a.map(f64::ln))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.idx), |a| a.map(|v| v * v))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(Op::Sqrt(self.idx), |a| a.map(f64::sqrt))
    }

    /// Sum of all entries, as a 1x1 value.
    pub fn sum(&self) -> Var<'t> {
        self.unary(Op::Sum(self.idx), |a| Matrix::scalar(a.sum()))
    }

    /// Per-row sums, `n x 1`.
    pub fn row_sum(&self) -> Var<'t> {
        self.unary(Op::RowSum(self.idx), |a| Matrix::column((0..a.rows()).map(|i| a.row(i).iter().sum()).collect()))
    }

    /// Per-column sums, `1 x c`.
    pub fn col_sum(&self) -> Var<'t> {
        self.unary(Op::ColSum(self.idx), |a| {
            let mut acc = vec![0.0; a.cols()];
            for i in 0..a.rows() {
                for (s, v) in acc.iter_mut().zip(a.row(i)) {
                    *s += v;
                }
            }
            Matrix::row_vector(acc)
        })
    }

    /// Row-wise `log Σ_j exp(a_ij)`, `n x 1`.
    pub fn log_sum_exp(&self) -> Var<'t> {
        self.unary(Op::LogSumExp(self.idx), |a| {
            Matrix::column(
                (0..a.rows())
                    .map(|i| {
                        let row = a.row(i);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
                    })
                    .collect(),
            )
        })
    }

    pub fn hcat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("hcat of zero parts".into()))?;
        if parts.len() == 1 {
            return Ok(*first);
        }
        let tape = first.tape;
        let out = {
            let nodes = tape.nodes.borrow();
            let mats: Vec<&Matrix> = parts.iter().map(|p| &nodes[p.idx].value).collect();
            Matrix::hcat(&mats)?
        };
        Ok(tape.push(out, Op::HCat(parts.iter().map(|p| p.idx).collect())))
    }

    /// Columns `start..start + len`.
    pub fn col_range(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if start + len > c {
            return Err(Error::shape("col_range", (r, c), (start, start + len)));
        }
        if start == 0 && len == c {
            return Ok(*self);
        }
        Ok(self.unary(Op::ColRange(self.idx, start), |a| a.col_range(start, len)))
    }

    /// Lower-triangular factor with positive diagonal from an unconstrained
    /// square matrix: strict lower part copied, diagonal exponentiated,
    /// upper part zeroed.
    pub fn tril_factor(&self) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if r != c {
            return Err(Error::shape("tril_factor", (r, c), (c, r)));
        }
        Ok(self.unary(Op::TrilFactor(self.idx), |a| {
            Matrix::from_fn(r, r, |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Greater => a.get(i, j),
                std::cmp::Ordering::Equal => a.get(i, i).exp(),
                std::cmp::Ordering::Less => 0.0,
            })
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let tape = Tape::new();
        let x = tape.var(Matrix::column(vec![1.0, 2.0]));
        let y = x.square().sum();
        let g = tape.gradient(y, &[x]).unwrap();
        assert_eq!(g[0].data(), &[2.0, 4.0]);
    }

    #[test]
    fn dead_relu_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(Matrix::scalar(-1.0));
        let y = x.relu().sum();
        assert_eq!(tape.gradient(y, &[x]).unwrap()[0].item(), 0.0);
    }

    #[test]
    fn relu_forward() {
        let tape = Tape::new();
        let x = tape.var(Matrix::row_vector(vec![-1.0, 2.0]));
        assert_eq!(x.relu().to_matrix().data(), &[0.0, 2.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let tape = Tape::new();
        let x = tape.var(Matrix::zeros(2, 2));
        let y = x.square();
        assert!(matches!(tape.gradient(y, &[x]), Err(Error::NonScalarOutput((2, 2)))));
    }

    #[test]
    fn reused_node_accumulates() {
        let tape = Tape::new();
        let x = tape.var(Matrix::scalar(3.0));
        let y = x.mul(x).unwrap().add(x).unwrap().sum();
        assert_eq!(tape.gradient(y, &[x]).unwrap()[0].item(), 7.0);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(Matrix::scalar(3.0));
        let z = tape.var(Matrix::zeros(2, 3));
        let y = x.square().sum();
        let g = tape.gradient(y, &[x, z]).unwrap();
        assert_eq!(g[1], Matrix::zeros(2, 3));
    }
}
