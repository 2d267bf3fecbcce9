use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::conv::{conv1d, Axis};
use super::value::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    Abs(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sqrt(usize),
    Square(usize),
    LeakyRelu(usize, f64),
    Scale(usize, f64),
    AddScalar(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Gather(usize, Rc<[usize]>),
    Conv2dSeparable(usize, Rc<[f64]>),
    L2Norm(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
///
/// A tape is rebuilt for every evaluation; it is not `Send`.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
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

    /// Leaf that accumulates a gradient during [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn unary(&self, a: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.requires(a);
        self.push(value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor, op: Op) -> Var<'_> {
        let rg = self.requires(a) || self.requires(b);
        self.push(value, op, rg)
    }

    /// Concatenate along the first axis; trailing extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let head = self.value(first.id);
        if head.rank() == 0 {
            return Err(Error::InvalidShape {
                shape: vec![],
                reason: "concat needs rank >= 1".into(),
            });
        }
        let tail = head.shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        let mut rg = false;
        for p in parts {
            self.same_tape(*p);
            let v = self.value(p.id);
            if v.rank() == 0 || v.shape()[1..] != tail[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: head.shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
            rg |= self.requires(p.id);
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat(parts.iter().map(|p| p.id).collect()), rg))
    }

    fn same_tape(&self, v: Var<'_>) {
        assert!(
            std::ptr::eq(self, v.tape),
            "variables from different tapes cannot be combined"
        );
    }

    /// Accumulated gradient of a parameter leaf, if any reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.same_tape(v);
        let grads = self.grads.borrow();
        let g = grads.get(v.id)?.as_ref()?;
        let shape = self.value(v.id).shape().to_vec();
        Some(Tensor::new(shape, g.clone()).expect("gradient shape"))
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Hash of the branch taken by every `abs` and `leaky_relu` node (sign
    /// of each input element). Two evaluations with equal signatures sit in
    /// the same smooth piece of a piecewise-smooth function.
    pub fn branch_signature(&self) -> u64 {
        let nodes = self.nodes.borrow();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in nodes.iter() {
            let src = match node.op {
                Op::Abs(a) | Op::LeakyRelu(a, _) => a,
                _ => continue,
            };
            for &v in nodes[src].value.data() {
                mix(if v > 0.0 {
                    1
                } else if v < 0.0 {
                    2
                } else {
                    3
                });
            }
        }
        h
    }

    /// Propagate d(root)/d(node) to every parameter leaf.
    ///
    /// Leaf gradients are summed into the tape's accumulators, so repeated
    /// calls without [`Tape::zero_grad`] accumulate.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        self.same_tape(root);
        let nodes = self.nodes.borrow();
        let rv = &nodes[root.id].value;
        if rv.len() != 1 || rv.rank() > 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        local[root.id] = Some(vec![1.0]);
        let mut acc_grads = self.grads.borrow_mut();
        if acc_grads.len() < nodes.len() {
            acc_grads.resize(nodes.len(), None);
        }

        for id in (0..=root.id).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let out = &node.value;
            let mut acc = |target: usize, f: &dyn Fn(&mut [f64])| {
                if !nodes[target].requires_grad {
                    return;
                }
                let slot =
                    local[target].get_or_insert_with(|| vec![0.0; nodes[target].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {
                    let slot = acc_grads[id].get_or_insert_with(|| vec![0.0; g.len()]);
                    for (s, v) in slot.iter_mut().zip(&g) {
                        *s += v;
                    }
                }
                &Op::Add(a, b) => {
                    acc(a, &|s| add_into(s, &g));
                    acc(b, &|s| add_into(s, &g));
                }
                &Op::Sub(a, b) => {
                    acc(a, &|s| add_into(s, &g));
                    acc(b, &|s| {
                        for (s, v) in s.iter_mut().zip(&g) {
                            *s -= v;
                        }
                    });
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a].value, &nodes[b].value);
                    acc(a, &|s| {
                        for ((s, gv), bv) in s.iter_mut().zip(&g).zip(bv.data()) {
                            *s += gv * bv;
                        }
                    });
                    acc(b, &|s| {
                        for ((s, gv), av) in s.iter_mut().zip(&g).zip(av.data()) {
                            *s += gv * av;
                        }
                    });
                }
                &Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a].value, &nodes[b].value);
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    // dA = G * B^T, dB = A^T * G
                    acc(a, &|s| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                let brow = j;
                                for p in 0..k {
                                    s[i * k + p] += gij * bv.data()[p * n + brow];
                                }
                            }
                        }
                    });
                    acc(b, &|s| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = av.data()[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                let srow = &mut s[p * n..(p + 1) * n];
                                let grow = &g[i * n..(i + 1) * n];
                                for (sv, gv) in srow.iter_mut().zip(grow) {
                                    *sv += aip * gv;
                                }
                            }
                        }
                    });
                }
                &Op::Transpose(a) => {
                    let (r, c) = (out.shape()[0], out.shape()[1]);
                    acc(a, &|s| {
                        for i in 0..r {
                            for j in 0..c {
                                s[j * r + i] += g[i * c + j];
                            }
                        }
                    });
                }
                &Op::Sum(a) => acc(a, &|s| s.iter_mut().for_each(|v| *v += g[0])),
                &Op::Mean(a) => {
                    let n = nodes[a].value.len() as f64;
                    acc(a, &|s| s.iter_mut().for_each(|v| *v += g[0] / n));
                }
                &Op::RowSum(a) => {
                    let cols = nodes[a].value.shape()[1];
                    acc(a, &|s| {
                        for (i, v) in s.iter_mut().enumerate() {
                            *v += g[i / cols];
                        }
                    });
                }
                &Op::Abs(a) => {
                    let av = &nodes[a].value;
                    acc(a, &|s| {
                        for ((s, gv), x) in s.iter_mut().zip(&g).zip(av.data()) {
                            *s += gv * sign(*x);
                        }
                    });
                }
                &Op::Exp(a) => acc(a, &|s| {
                    for ((s, gv), y) in s.iter_mut().zip(&g).zip(out.data()) {
                        *s += gv * y;
                    }
                }),
                &Op::Log(a) => {
                    let av = &nodes[a].value;
                    acc(a, &|s| {
                        for ((s, gv), x) in s.iter_mut().zip(&g).zip(av.data()) {
                            *s += gv / x;
                        }
                    });
                }
                &Op::Tanh(a) => acc(a, &|s| {
                    for ((s, gv), y) in s.iter_mut().zip(&g).zip(out.data()) {
                        *s += gv * (1.0 - y * y);
                    }
                }),
                &Op::Sqrt(a) => acc(a, &|s| {
                    for ((s, gv), y) in s.iter_mut().zip(&g).zip(out.data()) {
                        if *y > 0.0 {
                            *s += gv * 0.5 / y;
                        }
                    }
                }),
                &Op::Square(a) => {
                    let av = &nodes[a].value;
                    acc(a, &|s| {
                        for ((s, gv), x) in s.iter_mut().zip(&g).zip(av.data()) {
                            *s += 2.0 * gv * x;
                        }
                    });
                }
                &Op::LeakyRelu(a, slope) => {
                    let av = &nodes[a].value;
                    acc(a, &|s| {
                        for ((s, gv), x) in s.iter_mut().zip(&g).zip(av.data()) {
                            *s += if *x > 0.0 { *gv } else { gv * slope };
                        }
                    });
                }
                &Op::Scale(a, c) => acc(a, &|s| {
                    for (s, gv) in s.iter_mut().zip(&g) {
                        *s += c * gv;
                    }
                }),
                &Op::AddScalar(a) | &Op::Reshape(a) => acc(a, &|s| add_into(s, &g)),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = nodes[p].value.len();
                        let slice = &g[offset..offset + n];
                        acc(p, &|s| add_into(s, slice));
                        offset += n;
                    }
                }
                Op::Gather(a, idx) => acc(*a, &|s| {
                    for (gv, &i) in g.iter().zip(idx.iter()) {
                        s[i] += gv;
                    }
                }),
                Op::Conv2dSeparable(a, kernel) => {
                    let (planes, h, w) = planes_of(out.shape());
                    let origin = -((kernel.len() / 2) as isize);
                    // forward = vertical(horizontal(x)); adjoint reverses the order
                    let t = conv1d(&g, planes, h, w, kernel, origin, Axis::Vertical, true);
                    let t = conv1d(&t, planes, h, w, kernel, origin, Axis::Horizontal, true);
                    acc(*a, &|s| add_into(s, &t));
                }
                &Op::L2Norm(a) => {
                    let av = &nodes[a].value;
                    let norm = out.data()[0];
                    if norm > 0.0 {
                        acc(a, &|s| {
                            for (s, x) in s.iter_mut().zip(av.data()) {
                                *s += g[0] * x / norm;
                            }
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn add_into(s: &mut [f64], g: &[f64]) {
    for (s, v) in s.iter_mut().zip(g) {
        *s += v;
    }
}

fn planes_of(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    let h = shape[r - 2];
    let w = shape[r - 1];
    (shape[..r - 2].iter().product(), h, w)
}

fn elementwise(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| f(*x, *y))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn matmul_values(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        (*self.tape.value(self.id)).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.value(self.id).len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Value of a one-element variable.
    pub fn item(&self) -> f64 {
        self.tape.value(self.id).item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn v(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    fn map_unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.v().map(f);
        self.tape.unary(self.id, v, op)
    }

    /// Copy with no path back to `self`; gradients stop here.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.value())
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.same_tape(other);
        let v = elementwise("add", &self.v(), &other.v(), |a, b| a + b)?;
        Ok(self
            .tape
            .binary(self.id, other.id, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.same_tape(other);
        let v = elementwise("sub", &self.v(), &other.v(), |a, b| a - b)?;
        Ok(self
            .tape
            .binary(self.id, other.id, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.same_tape(other);
        let v = elementwise("mul", &self.v(), &other.v(), |a, b| a * b)?;
        Ok(self
            .tape
            .binary(self.id, other.id, v, Op::Mul(self.id, other.id)))
    }

    /// Matrix product of two rank-2 operands.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.same_tape(other);
        let v = matmul_values(&self.v(), &other.v())?;
        Ok(self
            .tape
            .binary(self.id, other.id, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.v();
        if a.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: a.shape().to_vec(),
                reason: "transpose needs rank 2".into(),
            });
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        let v = Tensor::new(vec![c, r], data)?;
        Ok(self.tape.unary(self.id, v, Op::Transpose(self.id)))
    }

    /// Sum of all elements (scalar).
    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.v().data().iter().sum();
        self.tape
            .unary(self.id, Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Mean of all elements (scalar).
    pub fn mean(self) -> Var<'t> {
        let a = self.v();
        let s: f64 = a.data().iter().sum::<f64>() / a.len() as f64;
        self.tape
            .unary(self.id, Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Sum along the last axis of a rank-2 tensor: `[r, c] -> [r]`.
    pub fn row_sum(self) -> Result<Var<'t>> {
        let a = self.v();
        if a.rank() != 2 {
            return Err(Error::InvalidShape {
                shape: a.shape().to_vec(),
                reason: "row_sum needs rank 2".into(),
            });
        }
        let c = a.shape()[1];
        let data = a.data().chunks(c).map(|r| r.iter().sum()).collect();
        let v = Tensor::new(vec![a.shape()[0]], data)?;
        Ok(self.tape.unary(self.id, v, Op::RowSum(self.id)))
    }

    pub fn abs(self) -> Var<'t> {
        self.map_unary(Op::Abs(self.id), f64::abs)
    }

    pub fn exp(self) -> Var<'t> {
        self.map_unary(Op::Exp(self.id), f64::exp)
    }

    /// Natural log; every element must be positive.
    pub fn log(self) -> Result<Var<'t>> {
        if let Some(i) = self.v().data().iter().position(|&x| x <= 0.0 || x.is_nan()) {
            return Err(Error::NonFinite {
                context: "log of non-positive input".into(),
                index: i,
            });
        }
        Ok(self.map_unary(Op::Log(self.id), f64::ln))
    }

    pub fn tanh(self) -> Var<'t> {
        self.map_unary(Op::Tanh(self.id), f64::tanh)
    }

    /// Square root; every element must be nonnegative.
    pub fn sqrt(self) -> Result<Var<'t>> {
        if let Some(i) = self.v().data().iter().position(|&x| x < 0.0 || x.is_nan()) {
            return Err(Error::NonFinite {
                context: "sqrt of negative input".into(),
                index: i,
            });
        }
        Ok(self.map_unary(Op::Sqrt(self.id), f64::sqrt))
    }

    pub fn square(self) -> Var<'t> {
        self.map_unary(Op::Square(self.id), |x| x * x)
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.map_unary(Op::LeakyRelu(self.id, slope), move |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.map_unary(Op::Scale(self.id, c), move |x| c * x)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.map_unary(Op::AddScalar(self.id), move |x| x + c)
    }

    /// Euclidean norm of all elements (scalar).
    pub fn l2_norm(self) -> Var<'t> {
        let n = self.v().data().iter().map(|x| x * x).sum::<f64>().sqrt();
        self.tape
            .unary(self.id, Tensor::scalar(n), Op::L2Norm(self.id))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let v = (*self.v()).clone().reshape(shape)?;
        Ok(self.tape.unary(self.id, v, Op::Reshape(self.id)))
    }

    /// `out[i] = self.flat[indices[i]]`, reshaped to `shape`.
    ///
    /// Covers slicing, permutation, row selection, nearest upsampling and
    /// explicit replication. Repeated indices sum their gradients.
    pub fn gather(self, indices: Rc<[usize]>, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let a = self.v();
        if let Some(&bad) = indices.iter().find(|&&i| i >= a.len()) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for shape {:?}",
                a.shape()
            )));
        }
        let data = indices.iter().map(|&i| a.data()[i]).collect();
        let v = Tensor::new(shape, data)?;
        Ok(self.tape.unary(self.id, v, Op::Gather(self.id, indices)))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 2 || start >= end || end > s[0] {
            return Err(Error::invalid(format!(
                "slice_rows {start}..{end} invalid for shape {s:?}"
            )));
        }
        let c = s[1];
        let idx: Rc<[usize]> = (start * c..end * c).collect();
        self.gather(idx, vec![end - start, c])
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 2 || start >= end || end > s[1] {
            return Err(Error::invalid(format!(
                "slice_cols {start}..{end} invalid for shape {s:?}"
            )));
        }
        let (r, c) = (s[0], s[1]);
        let idx: Rc<[usize]> = (0..r)
            .flat_map(|i| (start..end).map(move |j| i * c + j))
            .collect();
        self.gather(idx, vec![r, end - start])
    }

    /// Replicate a length-`n` vector (any shape with `n` elements) into
    /// `[rows, n]`.
    pub fn repeat_rows(self, rows: usize) -> Result<Var<'t>> {
        let n = self.len();
        let idx: Rc<[usize]> = (0..rows).flat_map(|_| 0..n).collect();
        self.gather(idx, vec![rows, n])
    }

    /// Replicate a length-`n` vector into `[n, cols]`.
    pub fn repeat_cols(self, cols: usize) -> Result<Var<'t>> {
        let n = self.len();
        let idx: Rc<[usize]> = (0..n).flat_map(|i| std::iter::repeat_n(i, cols)).collect();
        self.gather(idx, vec![n, cols])
    }

    /// Same 1-D kernel applied along rows then columns of every trailing
    /// `h x w` plane, reflect padding, centered at `len / 2`.
    pub fn conv2d_separable(self, kernel: &[f64]) -> Result<Var<'t>> {
        let a = self.v();
        if a.rank() < 2 {
            return Err(Error::InvalidShape {
                shape: a.shape().to_vec(),
                reason: "conv2d_separable needs rank >= 2".into(),
            });
        }
        if kernel.is_empty() {
            return Err(Error::invalid("empty convolution kernel"));
        }
        let (planes, h, w) = planes_of(a.shape());
        let origin = -((kernel.len() / 2) as isize);
        let t = conv1d(
            a.data(),
            planes,
            h,
            w,
            kernel,
            origin,
            Axis::Horizontal,
            false,
        );
        let t = conv1d(&t, planes, h, w, kernel, origin, Axis::Vertical, false);
        let v = Tensor::new(a.shape().to_vec(), t)?;
        Ok(self
            .tape
            .unary(self.id, v, Op::Conv2dSeparable(self.id, kernel.into())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.constant(Tensor::identity(2));
        assert_eq!(a.matmul(i).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn l2_norm_and_leaky_relu() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        assert_eq!(v.l2_norm().item(), 5.0);
        let x = tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        assert_eq!(x.leaky_relu(0.2).value().data(), &[-0.2, 2.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let root = w.square().sum();
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn abs_sign_rule() {
        for (x, expect) in [(0.5, 1.0), (-0.5, -1.0), (0.0, 0.0)] {
            let tape = Tape::new();
            let v = tape.param(Tensor::scalar(x));
            tape.backward(v.abs()).unwrap();
            assert_eq!(tape.grad(v).unwrap().item(), expect);
        }
    }

    #[test]
    fn leaky_relu_at_zero_uses_negative_slope() {
        let tape = Tape::new();
        let v = tape.param(Tensor::scalar(0.0));
        tape.backward(v.leaky_relu(0.2)).unwrap();
        assert_eq!(tape.grad(v).unwrap().item(), 0.2);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.add(x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn repeated_backward_accumulates_and_reset_clears() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.square();
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 12.0);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = x.square().detach().mul(x).unwrap();
        tape.backward(y).unwrap();
        // d/dx (c * x) with c = 9 held constant
        assert_eq!(tape.grad(x).unwrap().item(), 9.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = tape.param(Tensor::vector(vec![0.5, 0.5]));
        let y = c.mul(x).unwrap().sum();
        assert!(y.requires_grad());
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![3, 2]));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
        assert!(a.matmul(a).is_err());
    }

    #[test]
    fn gather_repeats_sum_gradients() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = x.gather(Rc::from(vec![0, 0, 2]), vec![3]).unwrap();
        assert_eq!(y.value().data(), &[1.0, 1.0, 3.0]);
        tape.backward(y.sum()).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_and_slices() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(c.shape(), vec![3, 2]);
        assert_eq!(
            c.slice_rows(1, 3).unwrap().value().data(),
            &[3.0, 4.0, 5.0, 6.0]
        );
        assert_eq!(c.slice_cols(1, 2).unwrap().value().data(), &[2.0, 4.0, 6.0]);
        assert_eq!(
            tape.constant(Tensor::vector(vec![1.0, 2.0]))
                .repeat_cols(2)
                .unwrap()
                .value()
                .data(),
            &[1.0, 1.0, 2.0, 2.0]
        );
    }

    #[test]
    fn separable_conv_preserves_constants() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![2, 5, 5], 0.7));
        let y = x.conv2d_separable(&[0.25, 0.5, 0.25]).unwrap();
        assert!(y.value().data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn log_rejects_nonpositive() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(x.log().is_err());
    }

    #[test]
    fn same_ops_are_bit_identical() {
        let run = || {
            let tape = Tape::new();
            let x = tape.param(Tensor::vector(vec![0.3, -1.7, 2.2]));
            let y = x.tanh().mul(x.exp()).unwrap().sum();
            tape.backward(y).unwrap();
            (y.item().to_bits(), tape.grad(x).unwrap())
        };
        assert_eq!(run(), run());
    }
}
