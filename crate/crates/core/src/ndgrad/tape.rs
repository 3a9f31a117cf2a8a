use super::tensor::{gemm, Mat, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction direction for [`Tape::min_reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// One minimum per row, taken across the columns.
    Rows,
    /// One minimum per column, taken down the rows.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Sigmoid(Var),
    Relu(Var),
    Log(Var),
    Recip(Var),
    ClampMin(Var, f64),
    PairwiseSqDist(Var, Var),
    Min {
        x: Var,
        axis: Axis,
        argmin: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Wengert list for reverse-mode differentiation.
///
/// Every primitive evaluates eagerly, checks its output for NaN/Inf and
/// appends a node. [`Tape::backward`] replays the nodes in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints for every node of a tape, produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `v`; exactly zero if `v` did not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.adj[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.adj[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_raw(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_raw(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

/// Squared Euclidean distance between every row of `a` and every row of `b`.
pub fn pairwise_sq_dist(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, q) = a.require_matrix("pairwise_sq_dist")?;
    let (m, q2) = b.require_matrix("pairwise_sq_dist")?;
    if q != q2 {
        return Err(Error::Dimension {
            op: "pairwise_sq_dist",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            out[i * m + j] = ai
                .iter()
                .zip(b.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
        }
    }
    Ok(Tensor::from_raw(vec![n, m], out))
}

/// Mean softmax cross-entropy and the softmax probabilities.
fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (n, k) = logits.require_matrix("softmax_cross_entropy")?;
    if labels.len() != n {
        return Err(Error::validation(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::validation(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut probs = vec![0.0; n * k];
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        for j in 0..k {
            probs[i * k + j] = (row[j] - max).exp() / denom;
        }
        loss += denom.ln() - (row[label] - max);
    }
    Ok((loss / n as f64, probs))
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input (parameter or constant).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        self.push("transpose", v, Op::Transpose(a))
    }

    /// `x[n×d] + b` with `b` of length `d` added to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (n, d) = xv.require_matrix("add_row")?;
        if bv.len() != d {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let v = Tensor::from_raw(vec![n, d], out);
        self.push("add_row", v, Op::AddRow(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push("add", v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = map(self.value(a), |x| c * x);
        self.push("scale", v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = map(self.value(a), |x| x + c);
        self.push("add_scalar", v, Op::AddScalar(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), |x| x * x);
        self.push("square", v, Op::Square(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), |x| x.max(0.0));
        self.push("relu", v, Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), f64::ln);
        self.push("log", v, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        let v = map(self.value(a), f64::recip);
        self.push("reciprocal", v, Op::Recip(a))
    }

    /// `max(a, lo)` elementwise; the adjoint is cut where the clamp is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Result<Var> {
        let v = map(self.value(a), |x| x.max(lo));
        self.push("clamp_min", v, Op::ClampMin(a, lo))
    }

    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = pairwise_sq_dist(self.value(a), self.value(b))?;
        self.push("pairwise_sq_dist", v, Op::PairwiseSqDist(a, b))
    }

    /// Minimum along `axis`. With `skip_diagonal` the entry `(i, i)` of a
    /// square matrix is excluded. The adjoint goes to the argmin only, ties
    /// resolved to the lowest index.
    pub fn min_reduce(&mut self, x: Var, axis: Axis, skip_diagonal: bool) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.require_matrix("min_reduce")?;
        if skip_diagonal && (r != c || r < 2) {
            return Err(Error::Dimension {
                op: "min_reduce",
                lhs: xv.shape().to_vec(),
                rhs: vec![r, r],
            });
        }
        let (outer, inner) = match axis {
            Axis::Rows => (r, c),
            Axis::Cols => (c, r),
        };
        let mut vals = Vec::with_capacity(outer);
        let mut argmin = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = (usize::MAX, f64::INFINITY);
            for i in 0..inner {
                if skip_diagonal && i == o {
                    continue;
                }
                let v = match axis {
                    Axis::Rows => xv.get(o, i),
                    Axis::Cols => xv.get(i, o),
                };
                if v < best.1 || best.0 == usize::MAX {
                    best = (i, v);
                }
            }
            argmin.push(best.0);
            vals.push(best.1);
        }
        let v = Tensor::from_raw(vec![outer], vals);
        self.push("min_reduce", v, Op::Min { x, axis, argmin })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::from_raw(vec![1], vec![self.value(a).data().iter().sum()]);
        self.push("sum", v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::from_raw(vec![1], vec![t.data().iter().sum::<f64>() / t.len() as f64]);
        self.push("mean", v, Op::Mean(a))
    }

    /// Batch-mean cross-entropy of `softmax(logits)` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = softmax_xent(self.value(logits), labels)?;
        let v = Tensor::from_raw(vec![1], vec![loss]);
        self.push(
            "softmax_cross_entropy",
            v,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::validation(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(&[1], 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (r, s) = (av.shape()[0], av.shape()[1]);
                    let t = bv.shape()[1];
                    let mut da = vec![0.0; r * s];
                    gemm(
                        Mat::new(g.data(), r, t, false),
                        Mat::new(bv.data(), s, t, true),
                        &mut da,
                        0.0,
                    );
                    let mut db = vec![0.0; s * t];
                    gemm(
                        Mat::new(av.data(), r, s, true),
                        Mat::new(g.data(), r, t, false),
                        &mut db,
                        0.0,
                    );
                    accumulate(&mut adj, *a, Tensor::from_raw(vec![r, s], da));
                    accumulate(&mut adj, *b, Tensor::from_raw(vec![s, t], db));
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()?),
                Op::AddRow(x, b) => {
                    let d = g.cols();
                    let mut db = vec![0.0; d];
                    for row in g.data().chunks_exact(d) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let bshape = self.value(*b).shape().to_vec();
                    accumulate(&mut adj, *b, Tensor::from_raw(bshape, db));
                    accumulate(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, map(&g, |v| -v));
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, c) => accumulate(&mut adj, *a, map(&g, |v| c * v)),
                Op::AddScalar(a) => accumulate(&mut adj, *a, g),
                Op::Square(a) => {
                    let d = zip(&g, self.value(*a), |gv, x| 2.0 * x * gv);
                    accumulate(&mut adj, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = zip(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut adj, *a, d);
                }
                Op::Relu(a) => {
                    let d = zip(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::Log(a) => {
                    let d = zip(&g, self.value(*a), |gv, x| gv / x);
                    accumulate(&mut adj, *a, d);
                }
                Op::Recip(a) => {
                    let d = zip(&g, &node.value, |gv, y| -gv * y * y);
                    accumulate(&mut adj, *a, d);
                }
                Op::ClampMin(a, lo) => {
                    let d = zip(&g, self.value(*a), |gv, x| if x > *lo { gv } else { 0.0 });
                    accumulate(&mut adj, *a, d);
                }
                Op::PairwiseSqDist(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, q) = (av.rows(), av.cols());
                    let m = bv.rows();
                    // dA = 2(diag(rowsum G)·A − G·B), dB = 2(diag(colsum G)·B − Gᵀ·A)
                    let mut da = vec![0.0; n * q];
                    gemm(
                        Mat::new(g.data(), n, m, false),
                        Mat::new(bv.data(), m, q, false),
                        &mut da,
                        0.0,
                    );
                    let mut db = vec![0.0; m * q];
                    gemm(
                        Mat::new(g.data(), n, m, true),
                        Mat::new(av.data(), n, q, false),
                        &mut db,
                        0.0,
                    );
                    let mut colsum = vec![0.0; m];
                    for i in 0..n {
                        let gi = g.row(i);
                        let rs: f64 = gi.iter().sum();
                        for (c, v) in colsum.iter_mut().zip(gi) {
                            *c += v;
                        }
                        for k in 0..q {
                            da[i * q + k] = 2.0 * (rs * av.get(i, k) - da[i * q + k]);
                        }
                    }
                    for j in 0..m {
                        for k in 0..q {
                            db[j * q + k] = 2.0 * (colsum[j] * bv.get(j, k) - db[j * q + k]);
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::from_raw(vec![n, q], da));
                    accumulate(&mut adj, *b, Tensor::from_raw(vec![m, q], db));
                }
                Op::Min { x, axis, argmin } => {
                    let xv = self.value(*x);
                    let (r, c) = (xv.rows(), xv.cols());
                    let mut d = vec![0.0; r * c];
                    for (o, (&i, gv)) in argmin.iter().zip(g.data()).enumerate() {
                        match axis {
                            Axis::Rows => d[o * c + i] += gv,
                            Axis::Cols => d[i * c + o] += gv,
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::from_raw(vec![r, c], d));
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape();
                    accumulate(&mut adj, *a, Tensor::filled(shape, g.item()));
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    accumulate(
                        &mut adj,
                        *a,
                        Tensor::filled(t.shape(), g.item() / t.len() as f64),
                    );
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len();
                    let k = probs.len() / n;
                    let scale = g.item() / n as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        d[i * k + l] -= scale;
                    }
                    accumulate(&mut adj, *logits, Tensor::from_raw(vec![n, k], d));
                }
            }
        }
        for (i, a) in adj.iter().enumerate() {
            if let Some(t) = a {
                if !t.is_finite() {
                    return Err(Error::NonFinite {
                        op: op_name(&self.nodes[i].op),
                    });
                }
            }
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { adj, shapes })
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Transpose(_) => "transpose",
        Op::AddRow(..) => "add_row",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Scale(..) => "scale",
        Op::AddScalar(_) => "add_scalar",
        Op::Square(_) => "square",
        Op::Sigmoid(_) => "sigmoid",
        Op::Relu(_) => "relu",
        Op::Log(_) => "log",
        Op::Recip(_) => "reciprocal",
        Op::ClampMin(..) => "clamp_min",
        Op::PairwiseSqDist(..) => "pairwise_sq_dist",
        Op::Min { .. } => "min_reduce",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean softmax cross-entropy without recording a tape.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    softmax_xent(logits, labels).map(|(l, _)| l)
}

/// Evaluates `f` on a fresh tape with `params` as leaves and returns the
/// loss together with one gradient per parameter.
pub fn grad<F>(params: &[Tensor], f: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss).item();
    let mut g = tape.backward(loss)?;
    Ok((value, vars.into_iter().map(|v| g.take(v)).collect()))
}
