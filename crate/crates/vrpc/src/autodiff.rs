//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A `Tape` records eager forward ops; `backward` walks the record in reverse
//! and accumulates parameter gradients into a `ParamStore`. The op set is
//! exactly what the codec network needs: shared-MLP linear algebra, pooling
//! with argmax routing, gather/concat plumbing, and elementwise scalar math.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

enum Op {
    Leaf,
    Param(String),
    Matmul(usize, usize),
    AddBias(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Log(usize),
    Exp(usize),
    Square(usize),
    Sqrt(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ClampMin(usize, f64),
    GatherRows(usize, Vec<usize>),
    RepeatRows(usize, usize),
    ConcatRows(usize, usize),
    ConcatCols(usize, usize),
    SliceCols(usize, usize, usize),
    /// Max over rows per column; records the winning row index.
    ColMax(usize, Vec<usize>),
    /// Max over fixed-size row groups per column; records winning rows.
    GroupMax(usize, Vec<usize>),
    ReduceSum(usize),
    ReduceMean(usize),
    Reshape(usize),
    /// Scalar head with an externally supplied gradient w.r.t. its input
    /// (used for assignment-based losses whose backward is locally linear).
    CustomScalar(usize, Tensor),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(op: &'static str, details: String) -> Error {
    Error::ShapeMismatch { op, details }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(t, Op::Leaf)
    }

    /// Leaf backed by a named parameter; backward accumulates into the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<VarId> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))?
            .clone();
        Ok(self.push(t, Op::Param(name.to_string())))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", ta.shape, tb.shape),
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = ta.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out), Op::Matmul(a.0, b.0)))
    }

    /// Broadcast-add a length-n bias to every row of an m x n matrix.
    pub fn add_bias(&mut self, x: VarId, b: VarId) -> Result<VarId> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[b.0].value);
        if tx.shape.len() != 2 || tb.numel() != tx.cols() {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", tx.shape, tb.shape),
            ));
        }
        let (m, n) = (tx.rows(), tx.cols());
        let mut out = tx.data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += tb.data[j];
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out), Op::AddBias(x.0, b.0)))
    }

    fn unary(&mut self, x: VarId, f: impl Fn(f64) -> f64, op: impl Fn(usize) -> Op) -> VarId {
        let t = &self.nodes[x.0].value;
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|&v| f(v)).collect());
        self.push(out, op(x.0))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    pub fn softplus(&mut self, x: VarId) -> VarId {
        self.unary(x, softplus, Op::Softplus)
    }

    pub fn log(&mut self, x: VarId) -> VarId {
        self.unary(x, f64::ln, Op::Log)
    }

    pub fn exp(&mut self, x: VarId) -> VarId {
        self.unary(x, f64::exp, Op::Exp)
    }

    pub fn square(&mut self, x: VarId) -> VarId {
        self.unary(x, |v| v * v, Op::Square)
    }

    pub fn sqrt(&mut self, x: VarId) -> VarId {
        self.unary(x, f64::sqrt, Op::Sqrt)
    }

    pub fn neg(&mut self, x: VarId) -> VarId {
        self.unary(x, |v| -v, Op::Neg)
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> VarId {
        self.unary(x, |v| v * c, |i| Op::Scale(i, c))
    }

    pub fn add_scalar(&mut self, x: VarId, c: f64) -> VarId {
        self.unary(x, |v| v + c, Op::AddScalar)
    }

    pub fn clamp_min(&mut self, x: VarId, c: f64) -> VarId {
        self.unary(x, |v| v.max(c), |i| Op::ClampMin(i, c))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape, tb.shape)));
        }
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape.clone(), data);
        Ok(self.push(out, op(a.0, b.0)))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn gather_rows(&mut self, x: VarId, idx: &[usize]) -> Result<VarId> {
        let t = &self.nodes[x.0].value;
        if t.shape.len() != 2 {
            return Err(shape_err("gather_rows", format!("{:?}", t.shape)));
        }
        let n = t.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= t.rows() {
                return Err(shape_err(
                    "gather_rows",
                    format!("index {i} out of {} rows", t.rows()),
                ));
            }
            data.extend_from_slice(&t.data[i * n..(i + 1) * n]);
        }
        let out = Tensor::new(vec![idx.len(), n], data);
        Ok(self.push(out, Op::GatherRows(x.0, idx.to_vec())))
    }

    pub fn repeat_rows(&mut self, x: VarId, times: usize) -> Result<VarId> {
        let t = &self.nodes[x.0].value;
        if t.shape.len() != 2 {
            return Err(shape_err("repeat_rows", format!("{:?}", t.shape)));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(m * times * n);
        for i in 0..m {
            for _ in 0..times {
                data.extend_from_slice(&t.data[i * n..(i + 1) * n]);
            }
        }
        let out = Tensor::new(vec![m * times, n], data);
        Ok(self.push(out, Op::RepeatRows(x.0, times)))
    }

    pub fn concat_rows(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.cols() != tb.cols() {
            return Err(shape_err(
                "concat_rows",
                format!("{:?} vs {:?}", ta.shape, tb.shape),
            ));
        }
        let mut data = ta.data.clone();
        data.extend_from_slice(&tb.data);
        let out = Tensor::new(vec![ta.rows() + tb.rows(), ta.cols()], data);
        Ok(self.push(out, Op::ConcatRows(a.0, b.0)))
    }

    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.rows() != tb.rows() {
            return Err(shape_err(
                "concat_cols",
                format!("{:?} vs {:?}", ta.shape, tb.shape),
            ));
        }
        let (m, na, nb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(m * (na + nb));
        for i in 0..m {
            data.extend_from_slice(&ta.data[i * na..(i + 1) * na]);
            data.extend_from_slice(&tb.data[i * nb..(i + 1) * nb]);
        }
        let out = Tensor::new(vec![m, na + nb], data);
        Ok(self.push(out, Op::ConcatCols(a.0, b.0)))
    }

    pub fn slice_cols(&mut self, x: VarId, start: usize, end: usize) -> Result<VarId> {
        let t = &self.nodes[x.0].value;
        if t.shape.len() != 2 || end > t.cols() || start >= end {
            return Err(shape_err(
                "slice_cols",
                format!("{start}..{end} of {:?}", t.shape),
            ));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&t.data[i * n + start..i * n + end]);
        }
        let out = Tensor::new(vec![m, end - start], data);
        Ok(self.push(out, Op::SliceCols(x.0, start, end)))
    }

    /// Max over rows of an m x n matrix, giving 1 x n. Ties to lowest row.
    pub fn max_pool_rows(&mut self, x: VarId) -> Result<VarId> {
        let t = &self.nodes[x.0].value;
        if t.shape.len() != 2 || t.rows() == 0 {
            return Err(shape_err("max_pool_rows", format!("{:?}", t.shape)));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![f64::NEG_INFINITY; n];
        let mut arg = vec![0usize; n];
        for i in 0..m {
            for j in 0..n {
                let v = t.data[i * n + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![1, n], out), Op::ColMax(x.0, arg)))
    }

    /// Max over consecutive row groups of size `k`: (m*k) x n -> m x n.
    pub fn group_max_pool(&mut self, x: VarId, k: usize) -> Result<VarId> {
        let t = &self.nodes[x.0].value;
        if t.shape.len() != 2 || k == 0 || t.rows() % k != 0 {
            return Err(shape_err(
                "group_max_pool",
                format!("rows {:?} not divisible by group {k}", t.shape),
            ));
        }
        let (groups, n) = (t.rows() / k, t.cols());
        let mut out = vec![f64::NEG_INFINITY; groups * n];
        let mut arg = vec![0usize; groups * n];
        for g in 0..groups {
            for r in 0..k {
                let row = g * k + r;
                for j in 0..n {
                    let v = t.data[row * n + j];
                    if v > out[g * n + j] {
                        out[g * n + j] = v;
                        arg[g * n + j] = row;
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::new(vec![groups, n], out),
            Op::GroupMax(x.0, arg),
        ))
    }

    pub fn reduce_sum(&mut self, x: VarId) -> VarId {
        let s: f64 = self.nodes[x.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::ReduceSum(x.0))
    }

    pub fn reduce_mean(&mut self, x: VarId) -> VarId {
        let t = &self.nodes[x.0].value;
        let s: f64 = t.data.iter().sum();
        let n = t.numel() as f64;
        self.push(Tensor::scalar(s / n), Op::ReduceMean(x.0))
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let t = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != t.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", t.shape, shape),
            ));
        }
        let out = Tensor::new(shape, t.data.clone());
        Ok(self.push(out, Op::Reshape(x.0)))
    }

    /// Scalar head whose gradient w.r.t. `input` was computed externally
    /// (assignment-based losses: the assignment is frozen per forward pass).
    pub fn custom_scalar(&mut self, input: VarId, value: f64, grad: Tensor) -> Result<VarId> {
        let t = &self.nodes[input.0].value;
        if grad.shape != t.shape {
            return Err(shape_err(
                "custom_scalar",
                format!("grad {:?} vs input {:?}", grad.shape, t.shape),
            ));
        }
        Ok(self.push(Tensor::scalar(value), Op::CustomScalar(input.0, grad)))
    }

    /// Propagate d(loss)/d(everything) and accumulate parameter gradients
    /// into `store`. The tape is consumed; a second backward is an error.
    pub fn backward(&mut self, loss: VarId, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].value.shape.clone()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            // Split borrows: read this node, write input grads.
            macro_rules! acc {
                ($input:expr, $i:expr, $v:expr) => {{
                    let input: usize = $input;
                    let slot = grads[input].get_or_insert_with(|| {
                        vec![0.0; self.nodes[input].value.numel()]
                    });
                    slot[$i] += $v;
                }};
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param(name) => {
                    store.accumulate_grad(name, &g)?;
                }
                Op::Matmul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ta = self.nodes[a].value.clone();
                    let tb = self.nodes[b].value.clone();
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA = G * B^T
                    let ga = grads[a].get_or_insert_with(|| vec![0.0; m * k]);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i * n + j] * tb.data[p * n + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                    // dB = A^T * G
                    let gb = grads[b].get_or_insert_with(|| vec![0.0; k * n]);
                    for p in 0..k {
                        for i in 0..m {
                            let av = ta.data[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    let (x, b) = (*x, *b);
                    let n = self.nodes[b].value.numel();
                    {
                        let gx = grads[x]
                            .get_or_insert_with(|| vec![0.0; self.nodes[x].value.numel()]);
                        for (gi, gv) in gx.iter_mut().zip(&g) {
                            *gi += gv;
                        }
                    }
                    let gb = grads[b].get_or_insert_with(|| vec![0.0; n]);
                    for (i, gv) in g.iter().enumerate() {
                        gb[i % n] += gv;
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        if self.nodes[x].value.data[i] > 0.0 {
                            acc!(x, i, g[i]);
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        let s = self.nodes[id].value.data[i];
                        acc!(x, i, g[i] * s * (1.0 - s));
                    }
                }
                Op::Softplus(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        let v = self.nodes[x].value.data[i];
                        acc!(x, i, g[i] * sigmoid(v));
                    }
                }
                Op::Log(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        acc!(x, i, g[i] / self.nodes[x].value.data[i]);
                    }
                }
                Op::Exp(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        acc!(x, i, g[i] * self.nodes[id].value.data[i]);
                    }
                }
                Op::Square(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        acc!(x, i, g[i] * 2.0 * self.nodes[x].value.data[i]);
                    }
                }
                Op::Sqrt(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        acc!(x, i, g[i] * 0.5 / self.nodes[id].value.data[i]);
                    }
                }
                Op::Neg(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        acc!(x, i, -g[i]);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        acc!(a, i, g[i]);
                    }
                    for i in 0..g.len() {
                        acc!(b, i, g[i]);
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        acc!(a, i, g[i]);
                    }
                    for i in 0..g.len() {
                        acc!(b, i, -g[i]);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        let bv = self.nodes[b].value.data[i];
                        acc!(a, i, g[i] * bv);
                    }
                    for i in 0..g.len() {
                        let av = self.nodes[a].value.data[i];
                        acc!(b, i, g[i] * av);
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        let bv = self.nodes[b].value.data[i];
                        acc!(a, i, g[i] / bv);
                    }
                    for i in 0..g.len() {
                        let av = self.nodes[a].value.data[i];
                        let bv = self.nodes[b].value.data[i];
                        acc!(b, i, -g[i] * av / (bv * bv));
                    }
                }
                Op::Scale(x, c) => {
                    let (x, c) = (*x, *c);
                    for i in 0..g.len() {
                        acc!(x, i, g[i] * c);
                    }
                }
                Op::AddScalar(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        acc!(x, i, g[i]);
                    }
                }
                Op::ClampMin(x, c) => {
                    let (x, c) = (*x, *c);
                    for i in 0..g.len() {
                        if self.nodes[x].value.data[i] > c {
                            acc!(x, i, g[i]);
                        }
                    }
                }
                Op::GatherRows(x, idx) => {
                    let x = *x;
                    let idx = idx.clone();
                    let n = self.nodes[id].value.cols();
                    for (row, &src) in idx.iter().enumerate() {
                        for j in 0..n {
                            acc!(x, src * n + j, g[row * n + j]);
                        }
                    }
                }
                Op::RepeatRows(x, times) => {
                    let (x, times) = (*x, *times);
                    let n = self.nodes[id].value.cols();
                    let m = self.nodes[x].value.rows();
                    for i in 0..m {
                        for r in 0..times {
                            for j in 0..n {
                                acc!(x, i * n + j, g[(i * times + r) * n + j]);
                            }
                        }
                    }
                }
                Op::ConcatRows(a, b) => {
                    let (a, b) = (*a, *b);
                    let na = self.nodes[a].value.numel();
                    for i in 0..na {
                        acc!(a, i, g[i]);
                    }
                    for i in 0..self.nodes[b].value.numel() {
                        acc!(b, i, g[na + i]);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, na) = (self.nodes[a].value.rows(), self.nodes[a].value.cols());
                    let nb = self.nodes[b].value.cols();
                    for i in 0..m {
                        for j in 0..na {
                            acc!(a, i * na + j, g[i * (na + nb) + j]);
                        }
                        for j in 0..nb {
                            acc!(b, i * nb + j, g[i * (na + nb) + na + j]);
                        }
                    }
                }
                Op::SliceCols(x, start, end) => {
                    let (x, start, end) = (*x, *start, *end);
                    let n = self.nodes[x].value.cols();
                    let w = end - start;
                    let m = self.nodes[id].value.rows();
                    for i in 0..m {
                        for j in 0..w {
                            acc!(x, i * n + start + j, g[i * w + j]);
                        }
                    }
                }
                Op::ColMax(x, arg) => {
                    let x = *x;
                    let arg = arg.clone();
                    let n = self.nodes[id].value.cols();
                    for j in 0..n {
                        acc!(x, arg[j] * n + j, g[j]);
                    }
                }
                Op::GroupMax(x, arg) => {
                    let x = *x;
                    let arg = arg.clone();
                    let n = self.nodes[id].value.cols();
                    for (gi, &row) in arg.iter().enumerate() {
                        let j = gi % n;
                        acc!(x, row * n + j, g[gi]);
                    }
                }
                Op::ReduceSum(x) => {
                    let x = *x;
                    for i in 0..self.nodes[x].value.numel() {
                        acc!(x, i, g[0]);
                    }
                }
                Op::ReduceMean(x) => {
                    let x = *x;
                    let n = self.nodes[x].value.numel();
                    for i in 0..n {
                        acc!(x, i, g[0] / n as f64);
                    }
                }
                Op::Reshape(x) => {
                    let x = *x;
                    for i in 0..g.len() {
                        acc!(x, i, g[i]);
                    }
                }
                Op::CustomScalar(x, grad) => {
                    let x = *x;
                    let grad = grad.data.clone();
                    for i in 0..grad.len() {
                        acc!(x, i, g[0] * grad[i]);
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
struct ParamEntry {
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameter tensors with gradient accumulators and Adam state.
/// Iteration order is name order, so serialization and updates are
/// deterministic.
#[derive(Default)]
#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let shape = value.shape.clone();
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                grad: Tensor::zeros(shape.clone()),
                m: Tensor::zeros(shape.clone()),
                v: Tensor::zeros(shape),
            },
        );
    }

    /// Glorot-uniform weight matrix plus zero bias, seeded by the caller's rng.
    pub fn insert_linear(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        self.insert(&format!("{prefix}.w"), Tensor::new(vec![fan_in, fan_out], data));
        self.insert(&format!("{prefix}.b"), Tensor::zeros(vec![fan_out]));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name:?}")))?;
        debug_assert_eq!(entry.grad.numel(), grad.len());
        for (g, &d) in entry.grad.data.iter_mut().zip(grad) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        for e in self.entries.values_mut() {
            for g in &mut e.grad.data {
                *g *= c;
            }
        }
    }

    pub fn grad_global_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|e| e.grad.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn clip_grads(&mut self, max_norm: f64) {
        let norm = self.grad_global_norm();
        if norm > max_norm {
            self.scale_grads(max_norm / norm);
        }
    }

    /// Bias-corrected Adam update; gradients are cleared afterwards.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for e in self.entries.values_mut() {
            for i in 0..e.value.numel() {
                let g = e.grad.data[i];
                e.m.data[i] = beta1 * e.m.data[i] + (1.0 - beta1) * g;
                e.v.data[i] = beta2 * e.v.data[i] + (1.0 - beta2) * g * g;
                let m_hat = e.m.data[i] / bc1;
                let v_hat = e.v.data[i] / bc2;
                e.value.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            e.grad.data.fill(0.0);
        }
    }

    /// Named-tensor container, little-endian. Round trip is bit exact.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"VRTN");
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(e.value.shape.len() as u8);
            for &d in &e.value.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.value.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != b"VRTN" {
            return Err(Error::Checkpoint("bad tensor container magic".into()));
        }
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {version}"
            )));
        }
        let count = r.u32()?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("non-utf8 tensor name".into()))?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(r.f64()?);
            }
            store.insert(&name, Tensor::new(shape, data));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParamStore> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        ParamStore::from_bytes(&bytes)
    }
}

pub const CHECKPOINT_VERSION: u8 = 1;

/// Cursor over a little-endian byte buffer with bounds-checked reads.
pub struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> ByteReader<'a> {
        ByteReader { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
