//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! The differentiation graph is the DAG of `Tensor` handles themselves: every
//! non-leaf tensor records the operation and input tensors that produced it
//! (a dynamic tape, rebuilt each forward pass). `backward` walks that DAG in
//! reverse topological order and returns a [`GradStore`] with the gradient of
//! every `requires_grad` leaf. Tensors are immutable after creation, so a
//! tensor without graph attachment is freely shareable.

mod autodiff;
mod conv;
mod ops;

pub use autodiff::GradStore;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crate::elem::Elem;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind<E: Elem> {
    Neg,
    Exp,
    Log,
    Sin,
    Cos,
    PowScalar(E),
    Softplus,
    LeakyRelu(E),
    Sigmoid,
    Abs,
    Tanh,
    Clamp(E, E),
    MulScalar(E),
    AddScalar(E),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Min,
    Max,
}

/// Padding convention for `conv2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

pub(crate) enum Op<E: Elem> {
    Leaf,
    Unary {
        kind: UnaryKind<E>,
        x: Tensor<E>,
    },
    Binary {
        kind: BinKind,
        a: Tensor<E>,
        b: Tensor<E>,
    },
    Matmul {
        a: Tensor<E>,
        b: Tensor<E>,
    },
    Conv2d {
        input: Tensor<E>,
        kernel: Tensor<E>,
        stride: usize,
        padding: Padding,
    },
    AvgPool {
        x: Tensor<E>,
        k: usize,
    },
    BilinearUp {
        x: Tensor<E>,
    },
    BilinearSample {
        src: Tensor<E>,
        coords: Tensor<E>,
    },
    Reduce {
        kind: ReduceKind,
        x: Tensor<E>,
        axes: Vec<usize>,
    },
    Broadcast {
        x: Tensor<E>,
    },
    Reshape {
        x: Tensor<E>,
    },
    Permute {
        x: Tensor<E>,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Tensor<E>>,
        axis: usize,
    },
    Slice {
        x: Tensor<E>,
        axis: usize,
        start: usize,
    },
    CumsumExclusive {
        x: Tensor<E>,
    },
    FilmSin {
        u: Tensor<E>,
        gamma: Tensor<E>,
        beta: Tensor<E>,
    },
}

struct Inner<E: Elem> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
    op: Op<E>,
    backward_done: AtomicBool,
}

/// Handle to an immutable n-dimensional array, optionally attached to the
/// differentiation graph. Cloning is cheap (reference count bump).
pub struct Tensor<E: Elem> {
    inner: Arc<Inner<E>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E: Elem> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Trailing-dimension broadcast of two shapes (numpy semantics).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::NotBroadcastable(a.to_vec(), b.to_vec()));
        };
    }
    Ok(out)
}

/// Row-major strides of a contiguous tensor.
pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `shape` aligned to a broadcast target of `nd` dims, with 0 for
/// broadcast (size-1 or missing) axes.
pub(crate) fn broadcast_strides(shape: &[usize], nd: usize) -> Vec<usize> {
    let own = contiguous_strides(shape);
    let off = nd - shape.len();
    let mut s = vec![0usize; nd];
    for i in 0..shape.len() {
        s[off + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    s
}

impl<E: Elem> Tensor<E> {
    pub(crate) fn from_op(data: Vec<E>, shape: Vec<usize>, op: Op<E>) -> Tensor<E> {
        Tensor::from_op_shared(Arc::new(data), shape, op)
    }

    /// Like `from_op` but sharing an existing buffer (reshape, detach-like ops).
    pub(crate) fn from_op_shared(data: Arc<Vec<E>>, shape: Vec<usize>, op: Op<E>) -> Tensor<E> {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Unary { x, .. } => x.requires_grad(),
            Op::Binary { a, b, .. } => a.requires_grad() || b.requires_grad(),
            Op::Matmul { a, b } => a.requires_grad() || b.requires_grad(),
            Op::Conv2d { input, kernel, .. } => input.requires_grad() || kernel.requires_grad(),
            Op::AvgPool { x, .. } => x.requires_grad(),
            Op::BilinearUp { x } => x.requires_grad(),
            Op::BilinearSample { src, coords } => src.requires_grad() || coords.requires_grad(),
            Op::Reduce { x, .. } => x.requires_grad(),
            Op::Broadcast { x } => x.requires_grad(),
            Op::Reshape { x } => x.requires_grad(),
            Op::Permute { x, .. } => x.requires_grad(),
            Op::Concat { parts, .. } => parts.iter().any(|p| p.requires_grad()),
            Op::Slice { x, .. } => x.requires_grad(),
            Op::CumsumExclusive { x } => x.requires_grad(),
            Op::FilmSin { u, gamma, beta } => {
                u.requires_grad() || gamma.requires_grad() || beta.requires_grad()
            }
        };
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                op,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    /// Constant leaf (not differentiated).
    pub fn constant(data: Vec<E>, shape: &[usize]) -> Tensor<E> {
        assert_eq!(
            numel(shape),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor::from_op(data, shape.to_vec(), Op::Leaf)
    }

    /// Leaf variable that accumulates a gradient in `backward`.
    pub fn var(data: Vec<E>, shape: &[usize]) -> Tensor<E> {
        assert_eq!(numel(shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                data: Arc::new(data),
                requires_grad: true,
                op: Op::Leaf,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    pub fn scalar(v: E) -> Tensor<E> {
        Tensor::constant(vec![v], &[1])
    }

    pub fn zeros(shape: &[usize]) -> Tensor<E> {
        Tensor::constant(vec![E::ZERO; numel(shape)], shape)
    }

    pub fn ones(shape: &[usize]) -> Tensor<E> {
        Tensor::constant(vec![E::ONE; numel(shape)], shape)
    }

    pub fn full(shape: &[usize], v: E) -> Tensor<E> {
        Tensor::constant(vec![v; numel(shape)], shape)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.inner.op, Op::Leaf)
    }

    pub(crate) fn op(&self) -> &Op<E> {
        &self.inner.op
    }

    pub(crate) fn mark_backward_done(&self) -> bool {
        self.inner.backward_done.swap(true, Ordering::SeqCst)
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> E {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    /// Detached copy: same data (shared buffer), no graph history, no grad.
    pub fn detach(&self) -> Tensor<E> {
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: self.inner.shape.clone(),
                data: Arc::clone(&self.inner.data),
                requires_grad: false,
                op: Op::Leaf,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape(),
                self.numel(),
                shape
            )));
        }
        Ok(Tensor::from_op_shared(
            Arc::clone(&self.inner.data),
            shape.to_vec(),
            Op::Reshape { x: self.clone() },
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<E>> {
        let nd = self.shape().len();
        if perm.len() != nd {
            return Err(Error::InvalidArgument(format!(
                "permute order {:?} does not match rank {}",
                perm, nd
            )));
        }
        let mut seen = vec![false; nd];
        for &p in perm {
            if p >= nd || seen[p] {
                return Err(Error::InvalidArgument(format!("invalid permutation {:?}", perm)));
            }
            seen[p] = true;
        }
        let in_shape = self.shape();
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let in_strides = contiguous_strides(in_shape);
        let moved: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let data = strided_gather(self.data(), &out_shape, &moved);
        Ok(Tensor::from_op(
            data,
            out_shape,
            Op::Permute {
                x: self.clone(),
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn transpose2(&self) -> Result<Tensor<E>> {
        self.permute(&[1, 0])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<E>> {
        let out = broadcast_shape(self.shape(), shape)?;
        if out != shape {
            return Err(Error::NotBroadcastable(self.shape().to_vec(), shape.to_vec()));
        }
        let strides = broadcast_strides(self.shape(), shape.len());
        let data = strided_gather(self.data(), shape, &strides);
        Ok(Tensor::from_op(data, shape.to_vec(), Op::Broadcast { x: self.clone() }))
    }

    pub fn concat(parts: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let nd = parts[0].shape().len();
        if axis >= nd {
            return Err(Error::InvalidArgument(format!("concat axis {axis} out of range")));
        }
        let mut out_shape = parts[0].shape().to_vec();
        let mut axis_total = 0usize;
        for p in parts {
            if p.shape().len() != nd {
                return Err(Error::ShapeMismatch("concat rank mismatch".into()));
            }
            for d in 0..nd {
                if d != axis && p.shape()[d] != out_shape[d] {
                    return Err(Error::ShapeMismatch(format!(
                        "concat shape mismatch at dim {d}: {:?} vs {:?}",
                        p.shape(),
                        out_shape
                    )));
                }
            }
            axis_total += p.shape()[axis];
        }
        out_shape[axis] = axis_total;
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let rows = p.shape()[axis];
                let start = o * rows * inner;
                data.extend_from_slice(&p.data()[start..start + rows * inner]);
            }
        }
        Ok(Tensor::from_op(
            data,
            out_shape,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        let nd = self.shape().len();
        if axis >= nd || start + len > self.shape()[axis] {
            return Err(Error::InvalidArgument(format!(
                "slice axis {axis} [{start}, {start}+{len}) out of range for {:?}",
                self.shape()
            )));
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let rows = self.shape()[axis];
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            let base = (o * rows + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        Ok(Tensor::from_op(
            data,
            out_shape,
            Op::Slice {
                x: self.clone(),
                axis,
                start,
            },
        ))
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.to_f64()).collect()
    }

    pub fn from_f64_slice(data: &[f64], shape: &[usize]) -> Tensor<E> {
        Tensor::constant(data.iter().map(|&v| E::from_f64(v)).collect(), shape)
    }
}

/// Gather elements of `data` following `strides` over `out_shape` (row-major).
pub(crate) fn strided_gather<E: Elem>(data: &[E], out_shape: &[usize], strides: &[usize]) -> Vec<E> {
    let total = numel(out_shape);
    let mut out = Vec::with_capacity(total);
    if out_shape.is_empty() {
        out.push(data[0]);
        return out;
    }
    let nd = out_shape.len();
    let inner = out_shape[nd - 1];
    let s_in = strides[nd - 1];
    let outer: usize = out_shape[..nd - 1].iter().product();
    let mut idx = vec![0usize; nd.saturating_sub(1)];
    for _ in 0..outer {
        let mut base = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            base += i * strides[d];
        }
        if s_in == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            for i in 0..inner {
                out.push(data[base + i * s_in]);
            }
        }
        // odometer increment
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Scatter-add of `grad` (shaped `out_shape`) back into a buffer shaped for
/// `strides`; inverse of `strided_gather` for gradients.
pub(crate) fn strided_scatter_add<E: Elem>(
    grad: &[E],
    out_shape: &[usize],
    strides: &[usize],
    into: &mut [E],
) {
    if out_shape.is_empty() {
        into[0] += grad[0];
        return;
    }
    let nd = out_shape.len();
    let inner = out_shape[nd - 1];
    let s_in = strides[nd - 1];
    let outer: usize = out_shape[..nd - 1].iter().product();
    let mut idx = vec![0usize; nd.saturating_sub(1)];
    let mut g = 0usize;
    for _ in 0..outer {
        let mut base = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            base += i * strides[d];
        }
        for i in 0..inner {
            into[base + i * s_in] += grad[g];
            g += 1;
        }
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}
