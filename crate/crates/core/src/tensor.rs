//! Dense f64 tensors with a define-by-run reverse-mode gradient tape.
//!
//! A [`Tape`] records every operation whose inputs include at least one
//! tracked tensor. Tensors created with [`Tensor::new`] are constants and
//! never appear on a tape; tensors created with [`Tape::leaf`] are tracked
//! leaves. Calling [`Tensor::backward`] on a scalar consumes the tape and
//! returns a [`Gradients`] map.
//!
//! ```
//! use avda::tensor::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.leaf(vec![3.0], &[]).unwrap();
//! let loss = x.square();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&x).data(), &[6.0]);
//! ```
//!
//! Broadcasting is deliberately narrow: two operands must have equal shapes,
//! or one of them is a rank-0 scalar, or one operand's shape is a proper
//! suffix of the other's (a `[J]` bias against a `[B, J]` batch). Anything
//! else is a shape error.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Local gradient rule: receives the upstream gradient and a mask of which
/// inputs need a gradient, returns one optional gradient per input.
type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    /// One slot per op input; `None` for constant inputs.
    parents: Vec<Option<NodeId>>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Recording of tracked operations, in topological order.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("consumed", &inner.consumed)
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates a tracked leaf tensor.
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::new(data, shape)?;
        let id = self.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Ok(Tensor {
            node: Some((self.clone(), id)),
            ..t
        })
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.borrow().consumed
    }

    fn push(&self, node: Node) -> NodeId {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(node);
        inner.nodes.len() - 1
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Dense row-major f64 array, optionally tracked on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<(Tape, NodeId)>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("node", &self.node_id())
            .finish()
    }
}

impl Tensor {
    /// Constant tensor. Fails unless `product(shape) == data.len()`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("new", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: Rc::new(vec![v]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Rc::new(vec![v; n]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", &self.shape, &[]));
        }
        Ok(self.data[0])
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, cut from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    /// Row `r` of a rank-2 tensor, as plain values.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Records `data` as the result of an op over `inputs`. When no input is
    /// tracked the result is a constant and `backward` is dropped.
    pub(crate) fn record(
        inputs: &[&Tensor],
        shape: Vec<usize>,
        data: Vec<f64>,
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Tensor> {
        let mut tape: Option<&Tape> = None;
        for t in inputs {
            if let Some((tp, _)) = &t.node {
                match tape {
                    None => tape = Some(tp),
                    Some(existing) if !existing.same(tp) => {
                        return Err(Error::Contract(
                            "operands recorded on different tapes".into(),
                        ))
                    }
                    _ => {}
                }
            }
        }
        let node = match tape {
            None => None,
            Some(tp) => {
                let parents = inputs.iter().map(|t| t.node_id()).collect();
                let id = tp.push(Node {
                    parents,
                    backward: Some(Box::new(backward)),
                });
                Some((tp.clone(), id))
            }
        };
        Ok(Tensor {
            shape,
            data: Rc::new(data),
            node,
        })
    }

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let out: Vec<f64> = self.data.iter().map(|&x| f(x)).collect();
        let x = Rc::clone(&self.data);
        let y = Rc::new(out.clone());
        let yk = Rc::clone(&y);
        Self::record(&[self], self.shape.clone(), out, move |g, _| {
            let grad = g
                .iter()
                .zip(x.iter().zip(yk.iter()))
                .map(|(&g, (&x, &y))| g * df(x, y))
                .collect();
            vec![Some(grad)]
        })
        .expect("unary op on a single tape")
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&self) -> Result<Tensor> {
        if let Some(bad) = self.data.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive entry {bad}"),
            });
        }
        Ok(self.unary(f64::ln, |x, _| 1.0 / x))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn neg(&self) -> Tensor {
        self.unary(|x| -x, |_, _| -1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        self.unary(
            |x| x.max(0.0) + (-x.abs()).exp().ln_1p(),
            |x, _| 1.0 / (1.0 + (-x).exp()),
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    /// Output shape and the broadcast period of each operand.
    fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
        if a == b || b.is_empty() {
            Ok(a.to_vec())
        } else if a.is_empty() {
            Ok(b.to_vec())
        } else if b.len() < a.len() && a.ends_with(b) {
            Ok(a.to_vec())
        } else if a.len() < b.len() && b.ends_with(a) {
            Ok(b.to_vec())
        } else {
            Err(Error::shape(op, a, b))
        }
    }

    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        // (upstream, a, b) -> (d/da, d/db)
        df: impl Fn(f64, f64, f64) -> (f64, f64) + 'static,
    ) -> Result<Tensor> {
        let shape = Self::broadcast(op, &self.shape, &other.shape)?;
        let n: usize = shape.iter().product();
        let (na, nb) = (self.numel(), other.numel());
        let out: Vec<f64> = (0..n)
            .map(|i| f(self.data[i % na], other.data[i % nb]))
            .collect();
        let a = Rc::clone(&self.data);
        let b = Rc::clone(&other.data);
        Self::record(&[self, other], shape, out, move |g, need| {
            let mut ga = need[0].then(|| vec![0.0; na]);
            let mut gb = need[1].then(|| vec![0.0; nb]);
            for (i, &gi) in g.iter().enumerate() {
                let (da, db) = df(gi, a[i % na], b[i % nb]);
                if let Some(ga) = ga.as_mut() {
                    ga[i % na] += da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[i % nb] += db;
                }
            }
            vec![ga, gb]
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |g, _, _| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let a = Rc::clone(&self.data);
        let b = Rc::clone(&other.data);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        Self::record(&[self, other], vec![m, n], out, move |g, need| {
            // dA = G B^T, dB = A^T G
            let ga = need[0].then(|| {
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &b[p * n..(p + 1) * n];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                ga
            });
            let gb = need[1].then(|| {
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = a[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *o += aip * gv;
                        }
                    }
                }
                gb
            });
            vec![ga, gb]
        })
    }

    /// Sum over `axis` (dropping it), or over everything to a rank-0 scalar.
    pub fn sum(&self, axis: Option<usize>) -> Result<Tensor> {
        let Some(axis) = axis else {
            let n = self.numel();
            let s = self.data.iter().sum();
            return Self::record(&[self], Vec::new(), vec![s], move |g, _| {
                vec![Some(vec![g[0]; n])]
            });
        };
        if axis >= self.rank() {
            return Err(Error::shape("sum", &self.shape, &[axis]));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &self.data[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Self::record(&[self], shape, out, move |g, _| {
            let mut grad = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    grad[(o * len + l) * inner..(o * len + l + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(grad)]
        })
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Tensor> {
        let count = match axis {
            None => self.numel(),
            Some(a) if a < self.rank() => self.shape[a],
            Some(a) => return Err(Error::shape("mean", &self.shape, &[a])),
        };
        if count == 0 {
            return Err(Error::shape("mean", &self.shape, &[]));
        }
        Ok(self.sum(axis)?.scale(1.0 / count as f64))
    }

    /// Stable log-softmax over the last dimension.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let k = *self
            .shape
            .last()
            .ok_or_else(|| Error::shape("log_softmax", &self.shape, &[]))?;
        if k == 0 {
            return Err(Error::shape("log_softmax", &self.shape, &[]));
        }
        let mut out = vec![0.0; self.numel()];
        for (src, dst) in self.data.chunks(k).zip(out.chunks_mut(k)) {
            let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = src.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - m) - lse;
            }
        }
        let y = Rc::new(out.clone());
        Self::record(&[self], self.shape.clone(), out, move |g, _| {
            let mut grad = vec![0.0; g.len()];
            for ((gr, yr), dr) in g.chunks(k).zip(y.chunks(k)).zip(grad.chunks_mut(k)) {
                let gs: f64 = gr.iter().sum();
                for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                    *d = gi - yi.exp() * gs;
                }
            }
            vec![Some(grad)]
        })
    }

    pub fn softmax(&self) -> Result<Tensor> {
        Ok(self.log_softmax()?.exp())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Self::record(&[self], shape.to_vec(), self.to_vec(), |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Rows of a rank-2 tensor picked by index: `[K, J]` -> `[indices.len(), J]`.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape("select_rows", &self.shape, &[indices.len()]));
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    what: "rows",
                    index: i,
                    len: rows,
                });
            }
            out.extend_from_slice(self.row(i));
        }
        let idx = indices.to_vec();
        Self::record(&[self], vec![indices.len(), cols], out, move |g, _| {
            let mut grad = vec![0.0; rows * cols];
            for (r, &i) in idx.iter().enumerate() {
                for (d, s) in grad[i * cols..(i + 1) * cols]
                    .iter_mut()
                    .zip(&g[r * cols..(r + 1) * cols])
                {
                    *d += s;
                }
            }
            vec![Some(grad)]
        })
    }

    /// One entry per row of a rank-2 tensor: `out[r] = self[r, indices[r]]`.
    pub fn gather_last(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 || self.shape[0] != indices.len() {
            return Err(Error::shape("gather_last", &self.shape, &[indices.len()]));
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let mut out = Vec::with_capacity(rows);
        for (r, &c) in indices.iter().enumerate() {
            if c >= cols {
                return Err(Error::Index {
                    what: "columns",
                    index: c,
                    len: cols,
                });
            }
            out.push(self.data[r * cols + c]);
        }
        let idx = indices.to_vec();
        Self::record(&[self], vec![rows], out, move |g, _| {
            let mut grad = vec![0.0; rows * cols];
            for (r, &c) in idx.iter().enumerate() {
                grad[r * cols + c] = g[r];
            }
            vec![Some(grad)]
        })
    }

    /// Reverse pass from a single-element tensor. Consumes the tape: a
    /// second call on the same recording is a contract error.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape
            )));
        }
        let Some((tape, root)) = &self.node else {
            return Err(Error::Contract(
                "backward on a tensor that was not recorded".into(),
            ));
        };
        let mut inner = tape.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; record a fresh forward pass".into(),
            ));
        }
        inner.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
        grads[*root] = Some(vec![1.0]);
        for id in (0..=*root).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &mut inner.nodes[id];
            let Some(backward) = node.backward.take() else {
                // leaf: keep its gradient
                grads[id] = Some(upstream);
                continue;
            };
            let need: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let local = backward(&upstream, &need);
            for (parent, g) in node.parents.iter().zip(local) {
                if let (Some(p), Some(g)) = (parent, g) {
                    match &mut grads[*p] {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients {
            tape: tape.clone(),
            grads,
        })
    }
}

/// Gradients of a scalar loss with respect to the leaves of one tape.
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `t`, shaped like `t`. Leaves the loss never touched,
    /// constants, and tensors from other tapes all get zeros.
    pub fn get(&self, t: &Tensor) -> Tensor {
        match self.get_data(t) {
            Some(g) => Tensor {
                shape: t.shape.clone(),
                data: Rc::new(g.to_vec()),
                node: None,
            },
            None => Tensor::zeros(&t.shape),
        }
    }

    /// Raw gradient buffer, `None` when no gradient reached `t`.
    pub fn get_data(&self, t: &Tensor) -> Option<&[f64]> {
        let (tape, id) = t.node.as_ref()?;
        if !tape.same(&self.tape) {
            return None;
        }
        self.grads.get(*id)?.as_deref()
    }
}
