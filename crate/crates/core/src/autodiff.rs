//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to its variables. Calling
//! [`Tape::backward`] on a scalar (1x1) variable walks the tape in reverse and
//! returns the gradient of that scalar with respect to every variable that
//! requires one. Constants never receive gradients.

use std::rc::Rc;

use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Undirected edge list shared by the graph propagation op.
#[derive(Clone, Debug)]
pub struct EdgeList {
    pub node_count: usize,
    pub edges: Vec<(usize, usize)>,
}

/// User-defined unary operation with a hand-written backward pass.
pub trait CustomOp<T: Scalar> {
    fn forward(&self, input: &Matrix<T>) -> Matrix<T>;

    /// Gradient with respect to the input given the upstream gradient.
    fn backward(&self, input: &Matrix<T>, output: &Matrix<T>, grad_output: &Matrix<T>)
        -> Matrix<T>;
}

enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    LogFloor(Var, T),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    GatherRows(Var, Rc<[usize]>),
    ConcatCols(Var, Var),
    SegmentMean {
        x: Var,
        segment: Rc<[usize]>,
        counts: Rc<[usize]>,
    },
    Propagate {
        h: Var,
        w: Var,
        graph: Rc<EdgeList>,
    },
    RowNormalize(Var, T),
    PickPerRow(Var, Rc<[usize]>),
    Custom(Var, Box<dyn CustomOp<T>>),
}

struct Node<T: Scalar> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix<T> {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 variable.
    pub fn scalar(&self, v: Var) -> T {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar variable");
        m[(0, 0)]
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` as a constant (stops gradient flow).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    /// `x + 1 * bias` where `bias` is a single row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(xv.cols(), bv.cols(), "bias width mismatch");
        let b = bv.row(0);
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, &bb) in value.row_mut(r).iter_mut().zip(b) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(value, Op::AddRow(x, bias), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulT(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// `ln(sigmoid(x))`, computed without overflow.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(log_sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::LogSigmoid(x), rg)
    }

    /// `ln(max(x, floor))`.
    pub fn log_floor(&mut self, x: Var, floor: T) -> Var {
        let value = self.value(x).map(|v| v.max(floor).ln());
        let rg = self.rg(x);
        self.push(value, Op::LogFloor(x, floor), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let value = softmax_rows(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Softmax(x), rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(x);
        self.push(value, Op::LogSoftmax(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.rows() * xv.cols();
        assert!(n > 0, "mean of empty matrix");
        let value = Matrix::filled(1, 1, xv.sum() / T::of_usize(n));
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Sum of every row, as a column vector.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Matrix::from_fn(xv.rows(), 1, |r, _| xv.row(r).iter().copied().sum());
        let rg = self.rg(x);
        self.push(value, Op::RowSum(x), rg)
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let value = self.value(x).select_rows(idx);
        let rg = self.rg(x);
        self.push(value, Op::GatherRows(x, idx.into()), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let (ca, cb) = (av.cols(), bv.cols());
        let value = Matrix::from_fn(av.rows(), ca + cb, |r, c| {
            if c < ca {
                av[(r, c)]
            } else {
                bv[(r, c - ca)]
            }
        });
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::ConcatCols(a, b), rg)
    }

    /// Mean of the rows of `x` grouped by `segment[row]` into `num_segments` rows.
    /// Empty segments produce zero rows.
    pub fn segment_mean(&mut self, x: Var, segment: &[usize], num_segments: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), segment.len(), "segment vector length mismatch");
        let mut counts = vec![0usize; num_segments];
        let mut value = Matrix::zeros(num_segments, xv.cols());
        for (r, &g) in segment.iter().enumerate() {
            counts[g] += 1;
            for (o, &v) in value.row_mut(g).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        for (g, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = T::one() / T::of_usize(c);
                for o in value.row_mut(g) {
                    *o *= inv;
                }
            }
        }
        let rg = self.rg(x);
        self.push(
            value,
            Op::SegmentMean {
                x,
                segment: segment.into(),
                counts: counts.into(),
            },
            rg,
        )
    }

    /// Symmetric-normalized propagation with self-loops over a weighted edge list:
    /// `out = D^{-1/2} (A_w + I) D^{-1/2} h`, with `D = 1 + weighted degree`.
    /// `w` is an `edges x 1` column of edge weights.
    pub fn propagate(&mut self, h: Var, w: Var, graph: Rc<EdgeList>) -> Var {
        let hv = self.value(h);
        let wv = self.value(w);
        assert_eq!(hv.rows(), graph.node_count, "propagate node count mismatch");
        assert_eq!(wv.shape(), (graph.edges.len(), 1), "edge weight shape mismatch");
        let c = inv_sqrt_degrees(&graph, wv);
        let mut value = Matrix::zeros(hv.rows(), hv.cols());
        for v in 0..graph.node_count {
            let self_w = c[v] * c[v];
            for (o, &x) in value.row_mut(v).iter_mut().zip(hv.row(v)) {
                *o = self_w * x;
            }
        }
        for (e, &(a, b)) in graph.edges.iter().enumerate() {
            let coef = wv[(e, 0)] * c[a] * c[b];
            if coef == T::zero() {
                continue;
            }
            for k in 0..hv.cols() {
                let (ha, hb) = (hv[(a, k)], hv[(b, k)]);
                value[(a, k)] += coef * hb;
                value[(b, k)] += coef * ha;
            }
        }
        let rg = self.rg(h) || self.rg(w);
        self.push(value, Op::Propagate { h, w, graph }, rg)
    }

    /// Each row divided by `(its Euclidean norm + eps)`.
    pub fn row_normalize(&mut self, x: Var, eps: T) -> Var {
        let xv = self.value(x);
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let s = row.iter().map(|&v| v * v).sum::<T>().sqrt() + eps;
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let rg = self.rg(x);
        self.push(value, Op::RowNormalize(x, eps), rg)
    }

    /// Column vector `out[i] = x[i, idx[i]]`.
    pub fn pick_per_row(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.rows(), idx.len(), "pick_per_row length mismatch");
        let value = Matrix::from_fn(idx.len(), 1, |r, _| xv[(r, idx[r])]);
        let rg = self.rg(x);
        self.push(value, Op::PickPerRow(x, idx.into()), rg)
    }

    pub fn custom(&mut self, x: Var, op: Box<dyn CustomOp<T>>) -> Var {
        let value = op.forward(self.value(x));
        let rg = self.rg(x);
        self.push(value, Op::Custom(x, op), rg)
    }

    /// Gradients of the scalar `loss` with respect to every variable that requires one.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Matrix::filled(1, 1, T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let zero = T::zero();
        let one = T::one();
        let acc = |v: Var, d: Matrix<T>, grads: &mut [Option<Matrix<T>>]| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.scale(-one), grads);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y), grads);
                }
                if self.rg(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y), grads);
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone(), grads);
                if self.rg(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*b, db, grads);
                }
            }
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(self.value(*b)), grads);
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t_matmul(g), grads);
                }
            }
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul(self.value(*b)), grads);
                }
                if self.rg(*b) {
                    acc(*b, g.t_matmul(self.value(*a)), grads);
                }
            }
            Op::Scale(x, s) => acc(*x, g.scale(*s), grads),
            Op::Relu(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > zero { gv } else { zero });
                acc(*x, d, grads);
            }
            Op::Sigmoid(x) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (one - y));
                acc(*x, d, grads);
            }
            Op::LogSigmoid(x) => {
                let d = g.zip_map(self.value(*x), |gv, xv| gv * sigmoid(-xv));
                acc(*x, d, grads);
            }
            Op::LogFloor(x, floor) => {
                let f = *floor;
                let d = g.zip_map(self.value(*x), |gv, xv| if xv > f { gv / xv } else { zero });
                acc(*x, d, grads);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: T = g.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum();
                    for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*x, d, grads);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gs: T = g.row(r).iter().copied().sum();
                    for ((o, &gv), &yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = gv - yv.exp() * gs;
                    }
                }
                acc(*x, d, grads);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Matrix::filled(r, c, g[(0, 0)]), grads);
            }
            Op::Mean(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Matrix::filled(r, c, g[(0, 0)] / T::of_usize(r * c)), grads);
            }
            Op::RowSum(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Matrix::from_fn(r, c, |i, _| g[(i, 0)]), grads);
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = self.value(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (k, &src) in idx.iter().enumerate() {
                    for (o, &v) in d.row_mut(src).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*x, d, grads);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let rows = g.rows();
                acc(*a, Matrix::from_fn(rows, ca, |r, c| g[(r, c)]), grads);
                acc(*b, Matrix::from_fn(rows, cb, |r, c| g[(r, ca + c)]), grads);
            }
            Op::SegmentMean { x, segment, counts } => {
                let (r, c) = self.value(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (row, &seg) in segment.iter().enumerate() {
                    let inv = one / T::of_usize(counts[seg]);
                    for (o, &v) in d.row_mut(row).iter_mut().zip(g.row(seg)) {
                        *o = v * inv;
                    }
                }
                acc(*x, d, grads);
            }
            Op::Propagate { h, w, graph } => {
                let hv = self.value(*h);
                let wv = self.value(*w);
                let c = inv_sqrt_degrees(graph, wv);
                if self.rg(*h) {
                    // The propagation operator is symmetric.
                    let mut d = Matrix::zeros(hv.rows(), hv.cols());
                    for v in 0..graph.node_count {
                        let s = c[v] * c[v];
                        for (o, &x) in d.row_mut(v).iter_mut().zip(g.row(v)) {
                            *o = s * x;
                        }
                    }
                    for (e, &(a, b)) in graph.edges.iter().enumerate() {
                        let coef = wv[(e, 0)] * c[a] * c[b];
                        for k in 0..hv.cols() {
                            let (ga, gb) = (g[(a, k)], g[(b, k)]);
                            d[(a, k)] += coef * gb;
                            d[(b, k)] += coef * ga;
                        }
                    }
                    acc(*h, d, grads);
                }
                if self.rg(*w) {
                    acc(*w, propagate_weight_grad(graph, hv, wv, &c, g), grads);
                }
            }
            Op::RowNormalize(x, eps) => {
                let xv = self.value(*x);
                let mut d = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let s = n + *eps;
                    let dot: T = row.iter().zip(g.row(r)).map(|(&a, &b)| a * b).sum();
                    let corr = if n > zero { dot / (n * s * s) } else { zero };
                    for ((o, &gv), &xv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(row) {
                        *o = gv / s - xv * corr;
                    }
                }
                acc(*x, d, grads);
            }
            Op::PickPerRow(x, idx) => {
                let (r, c) = self.value(*x).shape();
                let mut d = Matrix::zeros(r, c);
                for (row, &col) in idx.iter().enumerate() {
                    d[(row, col)] = g[(row, 0)];
                }
                acc(*x, d, grads);
            }
            Op::Custom(x, op) => {
                let d = op.backward(self.value(*x), &node.value, g);
                acc(*x, d, grads);
            }
        }
    }
}

fn inv_sqrt_degrees<T: Scalar>(graph: &EdgeList, w: &Matrix<T>) -> Vec<T> {
    let mut deg = vec![T::one(); graph.node_count];
    for (e, &(a, b)) in graph.edges.iter().enumerate() {
        deg[a] += w[(e, 0)];
        deg[b] += w[(e, 0)];
    }
    deg.into_iter().map(|d| T::one() / d.sqrt()).collect()
}

/// d out / d w_e, accounting for both the direct term and the degree normalization.
fn propagate_weight_grad<T: Scalar>(
    graph: &EdgeList,
    h: &Matrix<T>,
    w: &Matrix<T>,
    c: &[T],
    g: &Matrix<T>,
) -> Matrix<T> {
    let two = T::of(2.0);
    let half = T::of(0.5);
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    // dL/dc_v = G_v . (2 c_v h_v + sum_u w_uv c_u h_u) + sum_u w_uv c_u G_u . h_v
    let mut dc: Vec<T> = (0..graph.node_count)
        .map(|v| two * c[v] * dot(g.row(v), h.row(v)))
        .collect();
    for (e, &(a, b)) in graph.edges.iter().enumerate() {
        let we = w[(e, 0)];
        let gahb = dot(g.row(a), h.row(b));
        let gbha = dot(g.row(b), h.row(a));
        dc[a] += we * c[b] * (gahb + gbha);
        dc[b] += we * c[a] * (gbha + gahb);
    }
    Matrix::from_fn(graph.edges.len(), 1, |e, _| {
        let (a, b) = graph.edges[e];
        let direct = c[a] * c[b] * (dot(g.row(a), h.row(b)) + dot(g.row(b), h.row(a)));
        let via_degree = -half * (dc[a] * c[a] * c[a] * c[a] + dc[b] * c[b] * c[b] * c[b]);
        direct + via_degree
    })
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn log_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn softmax_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}
