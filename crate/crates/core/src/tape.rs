//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations executed through a [`Tape`] record themselves as nodes; ids are
//! assigned in execution order, so the node list is already topologically
//! sorted and the backward pass is a single reverse sweep that visits each
//! node exactly once. Values are immutable once recorded. A tape is
//! single-writer: use one tape per thread, or disjoint tapes across threads.
//!
//! Gradients only flow into nodes whose `requires_grad` flag is set (leaves
//! created with [`Tape::param`], plus anything computed from them). Constant
//! leaves never accumulate gradients, which is how stop-gradient targets are
//! kept out of the update path.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{for_each_lane, Scalar, Tensor};

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

/// Test hook: set to a primitive name (e.g. `softmax`) to negate that
/// primitive's backward contributions, so the finite-difference checker can
/// be shown to catch a corrupted build.
pub const FLIP_BACKWARD_ENV: &str = "TUBEJEPA_FLIP_BACKWARD";

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddScalar(usize, S),
    Scale(usize, S),
    /// matrix [R×C] + row [C], broadcast over rows
    AddRow(usize, usize),
    Matmul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    GatherRows(usize, Vec<usize>),
    ConcatRows(usize, usize),
    SliceRows {
        input: usize,
        start: usize,
        len: usize,
    },
    ConcatCols(usize, usize),
    SliceCols {
        input: usize,
        start: usize,
        len: usize,
    },
    Softmax {
        input: usize,
        axis: usize,
        temperature: S,
    },
    Gelu(usize),
    Relu(usize),
    LayerNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        eps: S,
    },
    L1Distance(usize, usize),
    L2NormalizeRows {
        input: usize,
        eps: S,
    },
    KlDivergence {
        p: usize,
        q: usize,
        floor: S,
    },
    StdPerDim {
        input: usize,
        stabilizer: S,
    },
    SumAll(usize),
}

impl<S: Scalar> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddScalar(..) => "add_scalar",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Softmax { .. } => "softmax",
            Op::Gelu(..) => "gelu",
            Op::Relu(..) => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::L1Distance(..) => "l1_distance",
            Op::L2NormalizeRows { .. } => "l2_normalize",
            Op::KlDivergence { .. } => "kl_divergence",
            Op::StdPerDim { .. } => "std_per_dim",
            Op::SumAll(..) => "sum_all",
        }
    }
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

struct Body<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

/// Recording graph. Cheap to clone (shared handle).
#[derive(Clone)]
pub struct Tape<S: Scalar = f64> {
    body: Rc<RefCell<Body<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one recorded value on a tape.
#[derive(Clone)]
pub struct Var<S: Scalar = f64> {
    tape: Tape<S>,
    id: usize,
}

impl<S: Scalar> std::fmt::Debug for Var<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            body: Rc::new(RefCell::new(Body {
                nodes: Vec::new(),
                grads: Vec::new(),
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.body.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var<S> {
        let mut body = self.body.borrow_mut();
        let id = body.nodes.len();
        body.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        body.grads.push(None);
        Var {
            tape: self.clone(),
            id,
        }
    }

    /// A trainable leaf: gradients will be accumulated for it.
    pub fn param(&self, value: Tensor<S>) -> Var<S> {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf: no gradient ever reaches it (stop-gradient).
    pub fn constant(&self, value: Tensor<S>) -> Var<S> {
        self.push(value, Op::Leaf, false)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let body = self.body.borrow();
        ids.iter().any(|&i| body.nodes[i].requires_grad)
    }

    fn value_of(&self, id: usize) -> Tensor<S> {
        self.body.borrow().nodes[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.body.borrow().nodes[id].value.shape().to_vec()
    }

    /// Reverse sweep from a scalar output. Gradients of previous backward
    /// calls on this tape are cleared first.
    pub fn backward(&self, output: &Var<S>) -> Result<()> {
        if !Rc::ptr_eq(&self.body, &output.tape.body) {
            return Err(Error::contract("backward output from a different tape"));
        }
        let flip = std::env::var(FLIP_BACKWARD_ENV).ok();
        let body = &mut *self.body.borrow_mut();
        if body.nodes[output.id].value.numel() != 1 {
            return Err(Error::contract(
                "backward requires a scalar output".to_string(),
            ));
        }
        for g in body.grads.iter_mut() {
            *g = None;
        }
        body.grads[output.id] = Some(vec![S::one()]);

        for id in (0..=output.id).rev() {
            if !body.nodes[id].requires_grad {
                continue;
            }
            let Some(gout) = body.grads[id].clone() else {
                continue;
            };
            let (nodes, grads) = (&body.nodes, &mut body.grads);
            let node = &nodes[id];
            let sign = match &flip {
                Some(name) if name == node.op.name() => -S::one(),
                _ => S::one(),
            };
            let mut add_to = |target: usize, contribution: Vec<S>| {
                if !nodes[target].requires_grad {
                    return;
                }
                let slot = grads[target]
                    .get_or_insert_with(|| vec![S::zero(); nodes[target].value.numel()]);
                for (s, c) in slot.iter_mut().zip(contribution) {
                    *s = *s + sign * c;
                }
            };

            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    add_to(*a, gout.clone());
                    add_to(*b, gout.clone());
                }
                Op::Sub(a, b) => {
                    add_to(*a, gout.clone());
                    add_to(*b, gout.iter().map(|&g| -g).collect());
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    add_to(*a, gout.iter().zip(bv).map(|(&g, &v)| g * v).collect());
                    add_to(*b, gout.iter().zip(av).map(|(&g, &v)| g * v).collect());
                }
                Op::AddScalar(a, _) => add_to(*a, gout.clone()),
                Op::Scale(a, c) => add_to(*a, gout.iter().map(|&g| g * *c).collect()),
                Op::AddRow(a, r) => {
                    add_to(*a, gout.clone());
                    let cols = nodes[*r].value.numel();
                    let mut gr = vec![S::zero(); cols];
                    for (i, &g) in gout.iter().enumerate() {
                        gr[i % cols] = gr[i % cols] + g;
                    }
                    add_to(*r, gr);
                }
                Op::Matmul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    // dA = G · B^T
                    let mut ga = vec![S::zero(); m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = S::zero();
                            for j in 0..n {
                                s = s + gout[i * n + j] * bv.data()[p * n + j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                    add_to(*a, ga);
                    // dB = A^T · G
                    let mut gb = vec![S::zero(); k * n];
                    for p in 0..k {
                        for j in 0..n {
                            let mut s = S::zero();
                            for i in 0..m {
                                s = s + av.data()[i * k + p] * gout[i * n + j];
                            }
                            gb[p * n + j] = s;
                        }
                    }
                    add_to(*b, gb);
                }
                Op::Transpose(a) => {
                    let (r, c) = (nodes[id].value.shape()[0], nodes[id].value.shape()[1]);
                    let mut ga = vec![S::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] = gout[i * c + j];
                        }
                    }
                    add_to(*a, ga);
                }
                Op::Reshape(a) => add_to(*a, gout.clone()),
                Op::GatherRows(a, indices) => {
                    let cols = nodes[id].value.cols();
                    let mut ga = vec![S::zero(); nodes[*a].value.numel()];
                    for (out_row, &src_row) in indices.iter().enumerate() {
                        for j in 0..cols {
                            ga[src_row * cols + j] =
                                ga[src_row * cols + j] + gout[out_row * cols + j];
                        }
                    }
                    add_to(*a, ga);
                }
                Op::ConcatRows(a, b) => {
                    let na = nodes[*a].value.numel();
                    add_to(*a, gout[..na].to_vec());
                    add_to(*b, gout[na..].to_vec());
                }
                Op::SliceRows { input, start, len } => {
                    let cols = nodes[*input].value.cols();
                    let mut ga = vec![S::zero(); nodes[*input].value.numel()];
                    ga[start * cols..(start + len) * cols].copy_from_slice(&gout);
                    add_to(*input, ga);
                }
                Op::ConcatCols(a, b) => {
                    let rows = nodes[id].value.rows();
                    let ca = nodes[*a].value.cols();
                    let cb = nodes[*b].value.cols();
                    let mut ga = vec![S::zero(); rows * ca];
                    let mut gb = vec![S::zero(); rows * cb];
                    for i in 0..rows {
                        ga[i * ca..(i + 1) * ca]
                            .copy_from_slice(&gout[i * (ca + cb)..i * (ca + cb) + ca]);
                        gb[i * cb..(i + 1) * cb]
                            .copy_from_slice(&gout[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                    }
                    add_to(*a, ga);
                    add_to(*b, gb);
                }
                Op::SliceCols { input, start, len } => {
                    let rows = nodes[*input].value.rows();
                    let cols = nodes[*input].value.cols();
                    let mut ga = vec![S::zero(); rows * cols];
                    for i in 0..rows {
                        for j in 0..*len {
                            ga[i * cols + start + j] = gout[i * len + j];
                        }
                    }
                    add_to(*input, ga);
                }
                Op::Softmax {
                    input,
                    axis,
                    temperature,
                } => {
                    let y = &nodes[id].value;
                    let mut gx = vec![S::zero(); y.numel()];
                    let shape = y.shape().to_vec();
                    let tau = *temperature;
                    let n = shape[*axis];
                    for_each_lane(&shape, *axis, |off, stride| {
                        let mut dot = S::zero();
                        for i in 0..n {
                            let k = off + i * stride;
                            dot = dot + gout[k] * y.data()[k];
                        }
                        for i in 0..n {
                            let k = off + i * stride;
                            gx[k] = y.data()[k] * (gout[k] - dot) / tau;
                        }
                    });
                    add_to(*input, gx);
                }
                Op::Gelu(a) => {
                    let c0 = S::of(GELU_C0);
                    let c1 = S::of(GELU_C1);
                    let half = S::of(0.5);
                    let three = S::of(3.0);
                    let xv = nodes[*a].value.data();
                    let gx = gout
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| {
                            let u = c0 * (x + c1 * x * x * x);
                            let t = u.tanh();
                            let sech2 = S::one() - t * t;
                            let du = c0 * (S::one() + three * c1 * x * x);
                            g * (half * (S::one() + t) + half * x * sech2 * du)
                        })
                        .collect();
                    add_to(*a, gx);
                }
                Op::Relu(a) => {
                    let xv = nodes[*a].value.data();
                    let gx = gout
                        .iter()
                        .zip(xv)
                        .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                        .collect();
                    add_to(*a, gx);
                }
                Op::LayerNorm {
                    input,
                    gamma,
                    beta,
                    eps,
                } => {
                    let x = &nodes[*input].value;
                    let gm = nodes[*gamma].value.data();
                    let rows = x.rows();
                    let cols = x.cols();
                    let cn = S::of(cols as f64);
                    let mut gx = vec![S::zero(); rows * cols];
                    let mut gg = vec![S::zero(); cols];
                    let mut gb = vec![S::zero(); cols];
                    for r in 0..rows {
                        let xr = x.row(r);
                        let mean = xr.iter().copied().sum::<S>() / cn;
                        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / cn;
                        let inv = S::one() / (var + *eps).sqrt();
                        let gr = &gout[r * cols..(r + 1) * cols];
                        let mut mean_gxh = S::zero();
                        let mut mean_gxh_xh = S::zero();
                        let mut xh = vec![S::zero(); cols];
                        let mut gxh = vec![S::zero(); cols];
                        for j in 0..cols {
                            xh[j] = (xr[j] - mean) * inv;
                            gxh[j] = gr[j] * gm[j];
                            mean_gxh = mean_gxh + gxh[j];
                            mean_gxh_xh = mean_gxh_xh + gxh[j] * xh[j];
                            gg[j] = gg[j] + gr[j] * xh[j];
                            gb[j] = gb[j] + gr[j];
                        }
                        mean_gxh = mean_gxh / cn;
                        mean_gxh_xh = mean_gxh_xh / cn;
                        for j in 0..cols {
                            gx[r * cols + j] = inv * (gxh[j] - mean_gxh - xh[j] * mean_gxh_xh);
                        }
                    }
                    add_to(*input, gx);
                    add_to(*gamma, gg);
                    add_to(*beta, gb);
                }
                Op::L1Distance(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let g = gout[0];
                    let mut ga = vec![S::zero(); av.len()];
                    let mut gb = vec![S::zero(); av.len()];
                    for i in 0..av.len() {
                        let d = av[i] - bv[i];
                        // subgradient at zero difference is zero
                        let s = if d > S::zero() {
                            S::one()
                        } else if d < S::zero() {
                            -S::one()
                        } else {
                            S::zero()
                        };
                        ga[i] = g * s;
                        gb[i] = -g * s;
                    }
                    add_to(*a, ga);
                    add_to(*b, gb);
                }
                Op::L2NormalizeRows { input, eps } => {
                    let x = &nodes[*input].value;
                    let y = &nodes[id].value;
                    let rows = x.rows();
                    let cols = x.cols();
                    let mut gx = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        let xr = &x.data()[r * cols..(r + 1) * cols];
                        let yr = &y.data()[r * cols..(r + 1) * cols];
                        let gr = &gout[r * cols..(r + 1) * cols];
                        let norm = xr.iter().map(|&v| v * v).sum::<S>().sqrt();
                        if norm >= *eps {
                            let dot = yr
                                .iter()
                                .zip(gr)
                                .map(|(&yv, &gv)| yv * gv)
                                .sum::<S>();
                            for j in 0..cols {
                                gx[r * cols + j] = (gr[j] - yr[j] * dot) / norm;
                            }
                        } else {
                            for j in 0..cols {
                                gx[r * cols + j] = gr[j] / *eps;
                            }
                        }
                    }
                    add_to(*input, gx);
                }
                Op::KlDivergence { p, q, floor } => {
                    let pv = nodes[*p].value.data();
                    let qv = nodes[*q].value.data();
                    let g = gout[0];
                    let mut gp = vec![S::zero(); pv.len()];
                    let mut gq = vec![S::zero(); pv.len()];
                    for i in 0..pv.len() {
                        let qf = qv[i].max(*floor);
                        if pv[i] > S::zero() {
                            gp[i] = g * (pv[i].ln() - qf.ln() + S::one());
                        }
                        if qv[i] > *floor {
                            gq[i] = -g * pv[i] / qv[i];
                        }
                    }
                    add_to(*p, gp);
                    add_to(*q, gq);
                }
                Op::StdPerDim { input, stabilizer } => {
                    let x = &nodes[*input].value;
                    let sig = nodes[id].value.data();
                    let rows = x.rows();
                    let cols = x.cols();
                    let _ = stabilizer;
                    let denom = S::of((rows - 1) as f64);
                    let mut gx = vec![S::zero(); rows * cols];
                    for j in 0..cols {
                        let mut mean = S::zero();
                        for r in 0..rows {
                            mean = mean + x.data()[r * cols + j];
                        }
                        mean = mean / S::of(rows as f64);
                        for r in 0..rows {
                            let centered = x.data()[r * cols + j] - mean;
                            gx[r * cols + j] = gout[j] * centered / (denom * sig[j]);
                        }
                    }
                    add_to(*input, gx);
                }
                Op::SumAll(a) => {
                    let g = gout[0];
                    add_to(*a, vec![g; nodes[*a].value.numel()]);
                }
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Var<S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape<S> {
        &self.tape
    }

    pub fn value(&self) -> Tensor<S> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.body.borrow().nodes[self.id].requires_grad
    }

    /// Gradient accumulated by the most recent backward pass, if any
    /// reached this node.
    pub fn grad(&self) -> Option<Tensor<S>> {
        let body = self.tape.body.borrow();
        body.grads[self.id].as_ref().map(|g| {
            Tensor::from_vec(body.nodes[self.id].value.shape().to_vec(), g.clone())
                .expect("gradient shape matches value shape")
        })
    }

    fn same_tape(&self, other: &Var<S>) -> Result<()> {
        if Rc::ptr_eq(&self.tape.body, &other.tape.body) {
            Ok(())
        } else {
            Err(Error::contract("operands recorded on different tapes"))
        }
    }

    fn binary_same_shape(&self, other: &Var<S>, op: &'static str) -> Result<()> {
        self.same_tape(other)?;
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::Shape {
                op,
                lhs: a,
                rhs: b,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Var<S>) -> Result<Var<S>> {
        self.binary_same_shape(other, "add")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(a.shape().to_vec(), data)?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Add(self.id, other.id), rg))
    }

    pub fn sub(&self, other: &Var<S>) -> Result<Var<S>> {
        self.binary_same_shape(other, "sub")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::from_vec(a.shape().to_vec(), data)?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Sub(self.id, other.id), rg))
    }

    pub fn mul(&self, other: &Var<S>) -> Result<Var<S>> {
        self.binary_same_shape(other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_vec(a.shape().to_vec(), data)?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Mul(self.id, other.id), rg))
    }

    pub fn add_scalar(&self, c: f64) -> Var<S> {
        let cs = S::of(c);
        let value = self.value().map(|v| v + cs);
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::AddScalar(self.id, cs), rg)
    }

    pub fn scale(&self, c: f64) -> Var<S> {
        let cs = S::of(c);
        let value = self.value().map(|v| v * cs);
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::Scale(self.id, cs), rg)
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(&self, row: &Var<S>) -> Result<Var<S>> {
        self.same_tape(row)?;
        let a = self.value();
        let r = row.value();
        if a.rank() != 2 || r.numel() != a.cols() {
            return Err(Error::Shape {
                op: "add_row",
                lhs: a.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
        let cols = a.cols();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + r.data()[i % cols])
            .collect();
        let value = Tensor::from_vec(a.shape().to_vec(), data)?;
        let rg = self.tape.requires(&[self.id, row.id]);
        Ok(self.tape.push(value, Op::AddRow(self.id, row.id), rg))
    }

    pub fn matmul(&self, other: &Var<S>) -> Result<Var<S>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut data = vec![S::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data()[i * k + p];
                if av == S::zero() {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] = data[i * n + j] + av * b.data()[p * n + j];
                }
            }
        }
        let value = Tensor::from_vec(vec![m, n], data)?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::Matmul(self.id, other.id), rg))
    }

    pub fn transpose(&self) -> Result<Var<S>> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(Error::contract("transpose requires a rank-2 tensor"));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut data = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        let value = Tensor::from_vec(vec![c, r], data)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Transpose(self.id), rg))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<S>> {
        let a = self.value();
        let numel: usize = shape.iter().product();
        if numel != a.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: a.shape().to_vec(),
                rhs: shape,
            });
        }
        let value = Tensor::from_vec(shape, a.data().to_vec())?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<S>> {
        let a = self.value();
        let value = a.gather_rows(indices)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self
            .tape
            .push(value, Op::GatherRows(self.id, indices.to_vec()), rg))
    }

    pub fn concat_rows(&self, other: &Var<S>) -> Result<Var<S>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.cols() != b.cols() {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let value = Tensor::vstack(&[&a, &b])?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::ConcatRows(self.id, other.id), rg))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Var<S>> {
        let a = self.value();
        if start + len > a.rows() {
            return Err(Error::Contract(format!(
                "slice_rows [{start}, {})) out of range for {} rows",
                start + len,
                a.rows()
            )));
        }
        let cols = a.cols();
        let data = a.data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::from_vec(vec![len, cols], data)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::SliceRows {
                input: self.id,
                start,
                len,
            },
            rg,
        ))
    }

    pub fn concat_cols(&self, other: &Var<S>) -> Result<Var<S>> {
        self.same_tape(other)?;
        let a = self.value();
        let b = other.value();
        if a.rows() != b.rows() {
            return Err(Error::Shape {
                op: "concat_cols",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (rows, ca, cb) = (a.rows(), a.cols(), b.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for i in 0..rows {
            data.extend_from_slice(&a.data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&b.data()[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::from_vec(vec![rows, ca + cb], data)?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::ConcatCols(self.id, other.id), rg))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<S>> {
        let a = self.value();
        if start + len > a.cols() {
            return Err(Error::Contract(format!(
                "slice_cols [{start}, {}) out of range for {} cols",
                start + len,
                a.cols()
            )));
        }
        let (rows, cols) = (a.rows(), a.cols());
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&a.data()[i * cols + start..i * cols + start + len]);
        }
        let value = Tensor::from_vec(vec![rows, len], data)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::SliceCols {
                input: self.id,
                start,
                len,
            },
            rg,
        ))
    }

    /// Numerically stable softmax along `axis` with a temperature divisor.
    pub fn softmax(&self, axis: usize, temperature: f64) -> Result<Var<S>> {
        if temperature <= 0.0 {
            return Err(Error::contract("softmax temperature must be positive"));
        }
        let a = self.value();
        if axis >= a.rank() {
            return Err(Error::Contract(format!(
                "softmax axis {axis} out of range for rank {}",
                a.rank()
            )));
        }
        if !a.is_finite() {
            return Err(Error::Numeric("softmax input contains non-finite values".into()));
        }
        let tau = S::of(temperature);
        let shape = a.shape().to_vec();
        let n = shape[axis];
        let mut data = a.data().to_vec();
        for_each_lane(&shape, axis, |off, stride| {
            let mut max = S::neg_infinity();
            for i in 0..n {
                let v = data[off + i * stride] / tau;
                if v > max {
                    max = v;
                }
            }
            let mut sum = S::zero();
            for i in 0..n {
                let k = off + i * stride;
                let e = (data[k] / tau - max).exp();
                data[k] = e;
                sum = sum + e;
            }
            for i in 0..n {
                let k = off + i * stride;
                data[k] = data[k] / sum;
            }
        });
        let value = Tensor::from_vec(shape, data)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::Softmax {
                input: self.id,
                axis,
                temperature: tau,
            },
            rg,
        ))
    }

    pub fn gelu(&self) -> Var<S> {
        let c0 = S::of(GELU_C0);
        let c1 = S::of(GELU_C1);
        let half = S::of(0.5);
        let value = self
            .value()
            .map(|x| half * x * (S::one() + (c0 * (x + c1 * x * x * x)).tanh()));
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::Gelu(self.id), rg)
    }

    pub fn relu(&self) -> Var<S> {
        let value = self.value().map(|x| x.max(S::zero()));
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::Relu(self.id), rg)
    }

    /// Per-row layer normalization with affine parameters.
    pub fn layer_norm(&self, gamma: &Var<S>, beta: &Var<S>, eps: f64) -> Result<Var<S>> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let x = self.value();
        let gm = gamma.value();
        let bt = beta.value();
        if x.rank() != 2 || gm.numel() != x.cols() || bt.numel() != x.cols() {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: gm.shape().to_vec(),
            });
        }
        let epss = S::of(eps);
        let (rows, cols) = (x.rows(), x.cols());
        let cn = S::of(cols as f64);
        let mut data = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let xr = x.row(r);
            let mean = xr.iter().copied().sum::<S>() / cn;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / cn;
            let inv = S::one() / (var + epss).sqrt();
            for j in 0..cols {
                data[r * cols + j] = gm.data()[j] * (xr[j] - mean) * inv + bt.data()[j];
            }
        }
        let value = Tensor::from_vec(vec![rows, cols], data)?;
        let rg = self.tape.requires(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                input: self.id,
                gamma: gamma.id,
                beta: beta.id,
                eps: epss,
            },
            rg,
        ))
    }

    /// Sum of absolute differences, as a scalar.
    pub fn l1_distance(&self, other: &Var<S>) -> Result<Var<S>> {
        self.binary_same_shape(other, "l1_distance")?;
        let a = self.value();
        let b = other.value();
        let total = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum::<S>();
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self
            .tape
            .push(Tensor::scalar(total), Op::L1Distance(self.id, other.id), rg))
    }

    /// Rows rescaled to unit L2 norm; rows shorter than `eps` are divided
    /// by `eps` instead, so the zero vector maps to itself.
    pub fn l2_normalize_rows(&self, eps: f64) -> Result<Var<S>> {
        if eps <= 0.0 {
            return Err(Error::contract("l2_normalize eps must be positive"));
        }
        let x = self.value();
        let epss = S::of(eps);
        let (rows, cols) = (x.rows(), x.cols());
        let mut data = vec![S::zero(); rows * cols];
        for r in 0..rows {
            let xr = &x.data()[r * cols..(r + 1) * cols];
            let norm = xr.iter().map(|&v| v * v).sum::<S>().sqrt();
            let denom = norm.max(epss);
            for j in 0..cols {
                data[r * cols + j] = xr[j] / denom;
            }
        }
        let value = Tensor::from_vec(x.shape().to_vec(), data)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::L2NormalizeRows {
                input: self.id,
                eps: epss,
            },
            rg,
        ))
    }

    /// KL divergence between probability vectors, with `0·log 0 := 0` and a
    /// floor applied to `q` before the log.
    pub fn kl_divergence(p: &Var<S>, q: &Var<S>, floor: f64) -> Result<Var<S>> {
        p.binary_same_shape(q, "kl_divergence")?;
        let pv = p.value();
        let qv = q.value();
        for (name, t) in [("p", &pv), ("q", &qv)] {
            let sum = t.data().iter().map(|v| v.to64()).sum::<f64>();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "kl_divergence {name} is not normalized: sums to {sum}"
                )));
            }
            if t.data().iter().any(|&v| v < S::zero()) {
                return Err(Error::Contract(format!(
                    "kl_divergence {name} has negative entries"
                )));
            }
        }
        let fl = S::of(floor);
        let mut total = S::zero();
        for (&pi, &qi) in pv.data().iter().zip(qv.data()) {
            if pi > S::zero() {
                total = total + pi * (pi.ln() - qi.max(fl).ln());
            }
        }
        let rg = p.tape.requires(&[p.id, q.id]);
        Ok(p.tape.push(
            Tensor::scalar(total),
            Op::KlDivergence {
                p: p.id,
                q: q.id,
                floor: fl,
            },
            rg,
        ))
    }

    /// Per-column sample standard deviation (divide by B−1) of a B×D matrix,
    /// with a stabilizer inside the square root.
    pub fn std_per_dim(&self, stabilizer: f64) -> Result<Var<S>> {
        let x = self.value();
        if x.rank() != 2 || x.rows() < 2 {
            return Err(Error::Contract(format!(
                "std_per_dim requires a B×D matrix with B >= 2, got {:?}",
                x.shape()
            )));
        }
        let stab = S::of(stabilizer);
        let (rows, cols) = (x.rows(), x.cols());
        let mut data = vec![S::zero(); cols];
        for j in 0..cols {
            let mut mean = S::zero();
            for r in 0..rows {
                mean = mean + x.data()[r * cols + j];
            }
            mean = mean / S::of(rows as f64);
            let mut ss = S::zero();
            for r in 0..rows {
                let d = x.data()[r * cols + j] - mean;
                ss = ss + d * d;
            }
            data[j] = (ss / S::of((rows - 1) as f64) + stab).sqrt();
        }
        let value = Tensor::vector(data);
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::StdPerDim {
                input: self.id,
                stabilizer: stab,
            },
            rg,
        ))
    }

    pub fn sum_all(&self) -> Var<S> {
        let total = self.value().data().iter().copied().sum::<S>();
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(Tensor::scalar(total), Op::SumAll(self.id), rg)
    }
}
