//! A small tape-based reverse-mode autodiff over `f64` matrices.
//!
//! Every value is a 2-D array. Nodes are appended to a [`Graph`] in
//! evaluation order, so a reverse sweep over the tape is a valid
//! topological order for backpropagation. Nodes built only from constants
//! never receive gradients; [`Graph::stop_gradient`] exploits this to cut
//! the tape.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis};

use crate::geom::{nearest_indices, Point};

pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a trainable parameter in its owning store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    Square(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    Chamfer {
        a: Var,
        b: Var,
        nn_ab: Vec<usize>,
        nn_ba: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    softmaxes: Vec<Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that collects gradient (used for sensitivity checks on inputs).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Register parameter `id` once per graph; later calls return the same node.
    pub fn param(&mut self, id: ParamId, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.insert(id, v);
        v
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.params.iter().map(|(&p, &v)| (p, v))
    }

    /// Leaves that collect gradient: parameters and explicit inputs.
    pub fn grad_leaves(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].needs_grad && matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect()
    }

    /// Every softmax output recorded on this graph, in creation order.
    pub fn softmax_outputs(&self) -> impl Iterator<Item = &Tensor> {
        self.softmaxes.iter().map(|v| self.value(*v))
    }

    /// Identity on the forward pass; the result is a fresh constant.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a . b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMulNT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Add a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let value = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// Multiply every row of `a` elementwise by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "mul_row expects a single row");
        let value = self.value(a) * self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        let ones = self.constant(Tensor::ones(self.value(a).raw_dim()));
        self.add(ones, neg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        let ng = self.needs(a);
        self.push(value, Op::Gelu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let ng = self.needs(a);
        self.push(value, Op::Square(a), ng)
    }

    /// Row-wise normalization with a learned `1 x c` scale and offset.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let c = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / c;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / c;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        let ng = self.needs(a);
        let v = self.push(value, Op::Softmax(a), ng);
        self.softmaxes.push(v);
        v
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![start..end, ..]).to_owned();
        let ng = self.needs(a);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.needs(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), rows * cols, "reshape changes element count");
        let data: Vec<f64> = src.iter().copied().collect();
        let value = Tensor::from_shape_vec((rows, cols), data).unwrap();
        let ng = self.needs(a);
        self.push(value, Op::Reshape(a), ng)
    }

    /// Column-wise max over consecutive groups of `group` rows.
    pub fn max_pool_rows(&mut self, a: Var, group: usize) -> Var {
        let src = self.value(a);
        assert!(group > 0 && src.nrows() % group == 0, "max_pool_rows: bad group size");
        let (n, c) = (src.nrows() / group, src.ncols());
        let mut value = Tensor::zeros((n, c));
        let mut argmax = vec![0; n * c];
        for g in 0..n {
            for j in 0..c {
                let mut best = (g * group, src[[g * group, j]]);
                for r in g * group + 1..(g + 1) * group {
                    if src[[r, j]] > best.1 {
                        best = (r, src[[r, j]]);
                    }
                }
                value[[g, j]] = best.1;
                argmax[g * c + j] = best.0;
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::MaxPool { x: a, argmax }, ng)
    }

    /// `1 x c` column means.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = src.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        let ng = self.needs(a);
        self.push(value, Op::MeanRows(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let value = Tensor::from_elem((1, 1), src.sum() / src.len() as f64);
        let ng = self.needs(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Chamfer distance between two `n x 3` point sets, as a `1 x 1` node.
    pub fn chamfer(&mut self, a: Var, b: Var) -> Var {
        let pa = rows_as_points(self.value(a));
        let pb = rows_as_points(self.value(b));
        let ab = nearest_indices(&pa, &pb);
        let ba = nearest_indices(&pb, &pa);
        let cd = ab.iter().map(|x| x.1).sum::<f64>() / pa.len() as f64
            + ba.iter().map(|x| x.1).sum::<f64>() / pb.len() as f64;
        let ng = self.needs(a) || self.needs(b);
        self.push(
            Tensor::from_elem((1, 1), cd),
            Op::Chamfer {
                a,
                b,
                nn_ab: ab.into_iter().map(|x| x.0).collect(),
                nn_ba: ba.into_iter().map(|x| x.0).collect(),
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward expects a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if self.needs(loss) {
            grads[loss.0] = Some(Tensor::ones((1, 1)));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, d: Tensor| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    send(*a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    send(*b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                if self.needs(*a) {
                    send(*a, g.dot(self.value(*b)));
                }
                if self.needs(*b) {
                    send(*b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    send(*a, g * self.value(*b));
                }
                if self.needs(*b) {
                    send(*b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if self.needs(*row) {
                    send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.needs(*a) {
                    send(*a, g * self.value(*row));
                }
                if self.needs(*row) {
                    send(*row, (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, s) => send(*a, g * *s),
            Op::Gelu(a) => {
                let mut d = self.value(*a).mapv(gelu_grad);
                d *= g;
                send(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = node.value.mapv(|y| y * (1.0 - y));
                d *= g;
                send(*a, d);
            }
            Op::Square(a) => {
                let mut d = self.value(*a) * 2.0;
                d *= g;
                send(*a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                if self.needs(*gamma) {
                    send(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*beta) {
                    send(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.needs(*x) {
                    let dxhat = g * self.value(*gamma);
                    let c = xhat.ncols() as f64;
                    let mut dx = Tensor::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let h = xhat.row(r);
                        let sum_dh = dh.sum();
                        let sum_dh_h = dh.dot(&h);
                        let is = inv_std[r];
                        for j in 0..xhat.ncols() {
                            dx[[r, j]] = is / c * (c * dh[j] - sum_dh - h[j] * sum_dh_h);
                        }
                    }
                    send(*x, dx);
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Tensor::zeros(y.raw_dim());
                for r in 0..y.nrows() {
                    let dot = g.row(r).dot(&y.row(r));
                    for j in 0..y.ncols() {
                        d[[r, j]] = y[[r, j]] * (g[[r, j]] - dot);
                    }
                }
                send(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).nrows();
                    if self.needs(*p) {
                        send(*p, g.slice(s![start..start + n, ..]).to_owned());
                    }
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).ncols();
                    if self.needs(*p) {
                        send(*p, g.slice(s![.., start..start + n]).to_owned());
                    }
                    start += n;
                }
            }
            Op::SliceRows(a, start) => {
                let mut d = Tensor::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                send(*a, d);
            }
            Op::SliceCols(a, start) => {
                let mut d = Tensor::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                send(*a, d);
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).dim();
                let data: Vec<f64> = g.iter().copied().collect();
                send(*a, Tensor::from_shape_vec((r, c), data).unwrap());
            }
            Op::MaxPool { x, argmax } => {
                let c = g.ncols();
                let mut d = Tensor::zeros(self.value(*x).raw_dim());
                for ((gi, j), &gv) in g.indexed_iter() {
                    d[[argmax[gi * c + j], j]] += gv;
                }
                send(*x, d);
            }
            Op::MeanRows(a) => {
                let n = self.value(*a).nrows() as f64;
                let row = g / n;
                let d = Tensor::from_shape_fn(self.value(*a).raw_dim(), |(_, j)| row[[0, j]]);
                send(*a, d);
            }
            Op::Sum(a) => send(*a, Tensor::from_elem(self.value(*a).raw_dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                send(*a, Tensor::from_elem(self.value(*a).raw_dim(), g[[0, 0]] / n));
            }
            Op::Chamfer { a, b, nn_ab, nn_ba } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (na, nb) = (va.nrows() as f64, vb.nrows() as f64);
                let gs = g[[0, 0]];
                let mut da = Tensor::zeros(va.raw_dim());
                let mut db = Tensor::zeros(vb.raw_dim());
                for (i, &j) in nn_ab.iter().enumerate() {
                    for k in 0..3 {
                        let diff = 2.0 * gs * (va[[i, k]] - vb[[j, k]]) / na;
                        da[[i, k]] += diff;
                        db[[j, k]] -= diff;
                    }
                }
                for (j, &i) in nn_ba.iter().enumerate() {
                    for k in 0..3 {
                        let diff = 2.0 * gs * (vb[[j, k]] - va[[i, k]]) / nb;
                        db[[j, k]] += diff;
                        da[[i, k]] -= diff;
                    }
                }
                send(*a, da);
                send(*b, db);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

pub fn rows_as_points(t: &Tensor) -> Vec<Point> {
    assert_eq!(t.ncols(), 3, "expected n x 3 coordinates");
    t.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect()
}

pub fn points_as_rows(p: &[Point]) -> Tensor {
    Tensor::from_shape_fn((p.len(), 3), |(i, k)| p[i][k])
}

/// Gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` means no path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with missing entries materialised as zeros.
    pub fn get_or_zeros(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).raw_dim()))
    }
}
