//! Elementwise, matmul, reduction, prefix-sum, and modulated-sine operations.

use super::{
    broadcast_shape, broadcast_strides, contiguous_strides, numel, BinKind, Op, ReduceKind,
    Tensor, UnaryKind,
};
use crate::elem::Elem;
use crate::error::{Error, Result};

#[inline(always)]
fn softplus<E: Elem>(x: E) -> E {
    // max(x, 0) + ln(1 + exp(-|x|)), stable for large |x|
    x.maximum(E::ZERO) + (E::ONE + (-x.abs()).exp()).ln()
}

#[inline(always)]
fn sigmoid<E: Elem>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

pub(crate) fn apply_unary<E: Elem>(kind: UnaryKind<E>, x: E) -> E {
    match kind {
        UnaryKind::Neg => -x,
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Sin => x.sin(),
        UnaryKind::Cos => x.cos(),
        UnaryKind::PowScalar(p) => x.powf(p),
        UnaryKind::Softplus => softplus(x),
        UnaryKind::LeakyRelu(s) => {
            if x >= E::ZERO {
                x
            } else {
                s * x
            }
        }
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Abs => x.abs(),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Clamp(lo, hi) => x.maximum(lo).minimum(hi),
        UnaryKind::MulScalar(s) => x * s,
        UnaryKind::AddScalar(s) => x + s,
    }
}

/// d out / d x given input x and output y.
pub(crate) fn unary_dx<E: Elem>(kind: UnaryKind<E>, x: E, y: E) -> E {
    match kind {
        UnaryKind::Neg => -E::ONE,
        UnaryKind::Exp => y,
        UnaryKind::Log => E::ONE / x,
        UnaryKind::Sin => x.cos(),
        UnaryKind::Cos => -x.sin(),
        UnaryKind::PowScalar(p) => p * x.powf(p - E::ONE),
        UnaryKind::Softplus => sigmoid(x),
        UnaryKind::LeakyRelu(s) => {
            if x >= E::ZERO {
                E::ONE
            } else {
                s
            }
        }
        UnaryKind::Sigmoid => y * (E::ONE - y),
        UnaryKind::Abs => {
            if x >= E::ZERO {
                E::ONE
            } else {
                -E::ONE
            }
        }
        UnaryKind::Tanh => E::ONE - y * y,
        UnaryKind::Clamp(lo, hi) => {
            if x >= lo && x <= hi {
                E::ONE
            } else {
                E::ZERO
            }
        }
        UnaryKind::MulScalar(s) => s,
        UnaryKind::AddScalar(_) => E::ONE,
    }
}

#[inline(always)]
fn apply_bin<E: Elem>(kind: BinKind, a: E, b: E) -> E {
    match kind {
        BinKind::Add => a + b,
        BinKind::Sub => a - b,
        BinKind::Mul => a * b,
        BinKind::Div => a / b,
        BinKind::Min => a.minimum(b),
        BinKind::Max => a.maximum(b),
    }
}

/// Apply `f(a_elem, b_elem)` with trailing-dimension broadcasting.
pub(crate) fn broadcast_map<E: Elem, F: FnMut(E, E) -> E>(
    a: &[E],
    a_shape: &[usize],
    b: &[E],
    b_shape: &[usize],
    mut f: F,
) -> Result<(Vec<E>, Vec<usize>)> {
    let out_shape = broadcast_shape(a_shape, b_shape)?;
    let total = numel(&out_shape);
    let mut out = Vec::with_capacity(total);
    if a_shape == b_shape {
        out.extend(a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)));
        return Ok((out, out_shape));
    }
    if b.len() == 1 {
        let s = b[0];
        out.extend(a.iter().map(|&x| f(x, s)));
        return Ok((out, out_shape));
    }
    if a.len() == 1 {
        let s = a[0];
        out.extend(b.iter().map(|&y| f(s, y)));
        return Ok((out, out_shape));
    }
    let nd = out_shape.len();
    let sa = broadcast_strides(a_shape, nd);
    let sb = broadcast_strides(b_shape, nd);
    let inner = out_shape[nd - 1];
    let outer: usize = out_shape[..nd - 1].iter().product();
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    for _ in 0..outer {
        let mut ba = 0usize;
        let mut bb = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            ba += i * sa[d];
            bb += i * sb[d];
        }
        match (ia, ib) {
            (1, 1) => {
                let ra = &a[ba..ba + inner];
                let rb = &b[bb..bb + inner];
                out.extend(ra.iter().zip(rb.iter()).map(|(&x, &y)| f(x, y)));
            }
            (1, 0) => {
                let s = b[bb];
                out.extend(a[ba..ba + inner].iter().map(|&x| f(x, s)));
            }
            (0, 1) => {
                let s = a[ba];
                out.extend(b[bb..bb + inner].iter().map(|&y| f(s, y)));
            }
            _ => {
                for i in 0..inner {
                    out.push(f(a[ba + i * ia], b[bb + i * ib]));
                }
            }
        }
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok((out, out_shape))
}

impl<E: Elem> Tensor<E> {
    pub fn unary(&self, kind: UnaryKind<E>) -> Tensor<E> {
        let data: Vec<E> = self.data().iter().map(|&x| apply_unary(kind, x)).collect();
        Tensor::from_op(data, self.shape().to_vec(), Op::Unary { kind, x: self.clone() })
    }

    pub fn neg(&self) -> Tensor<E> {
        self.unary(UnaryKind::Neg)
    }
    pub fn exp(&self) -> Tensor<E> {
        self.unary(UnaryKind::Exp)
    }
    pub fn log(&self) -> Tensor<E> {
        self.unary(UnaryKind::Log)
    }
    pub fn sin(&self) -> Tensor<E> {
        self.unary(UnaryKind::Sin)
    }
    pub fn cos(&self) -> Tensor<E> {
        self.unary(UnaryKind::Cos)
    }
    pub fn pow_scalar(&self, p: E) -> Tensor<E> {
        self.unary(UnaryKind::PowScalar(p))
    }
    pub fn sqrt(&self) -> Tensor<E> {
        self.unary(UnaryKind::PowScalar(E::from_f64(0.5)))
    }
    pub fn softplus(&self) -> Tensor<E> {
        self.unary(UnaryKind::Softplus)
    }
    pub fn leaky_relu(&self, slope: E) -> Tensor<E> {
        self.unary(UnaryKind::LeakyRelu(slope))
    }
    pub fn sigmoid(&self) -> Tensor<E> {
        self.unary(UnaryKind::Sigmoid)
    }
    pub fn abs(&self) -> Tensor<E> {
        self.unary(UnaryKind::Abs)
    }
    pub fn tanh(&self) -> Tensor<E> {
        self.unary(UnaryKind::Tanh)
    }
    pub fn clamp(&self, lo: E, hi: E) -> Tensor<E> {
        self.unary(UnaryKind::Clamp(lo, hi))
    }
    pub fn mul_scalar(&self, s: E) -> Tensor<E> {
        self.unary(UnaryKind::MulScalar(s))
    }
    pub fn add_scalar(&self, s: E) -> Tensor<E> {
        self.unary(UnaryKind::AddScalar(s))
    }

    pub fn binary(&self, kind: BinKind, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (data, out_shape) = broadcast_map(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            |a, b| apply_bin(kind, a, b),
        )?;
        Ok(Tensor::from_op(
            data,
            out_shape,
            Op::Binary {
                kind,
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(BinKind::Add, other)
    }
    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(BinKind::Sub, other)
    }
    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(BinKind::Mul, other)
    }
    pub fn div(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(BinKind::Div, other)
    }
    pub fn minimum(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(BinKind::Min, other)
    }
    pub fn maximum(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(BinKind::Max, other)
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul expects rank-2 tensors, got {:?} x {:?}",
                a_shape, b_shape
            )));
        }
        let (m, k) = (a_shape[0], a_shape[1]);
        let (k2, n) = (b_shape[0], b_shape[1]);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dimensions disagree: {:?} x {:?}",
                a_shape, b_shape
            )));
        }
        let mut out = vec![E::ZERO; m * n];
        unsafe {
            E::gemm(
                m,
                k,
                n,
                E::ONE,
                self.data().as_ptr(),
                k as isize,
                1,
                other.data().as_ptr(),
                n as isize,
                1,
                E::ZERO,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            Op::Matmul {
                a: self.clone(),
                b: other.clone(),
            },
        ))
    }

    /// Reduction over `axes` (all axes when empty).
    pub fn reduce(&self, kind: ReduceKind, axes: &[usize], keepdim: bool) -> Result<Tensor<E>> {
        let nd = self.shape().len();
        let mut axes: Vec<usize> = if axes.is_empty() {
            (0..nd).collect()
        } else {
            axes.to_vec()
        };
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&a| a >= nd) {
            return Err(Error::InvalidArgument(format!(
                "reduce axes {:?} out of range for {:?}",
                axes,
                self.shape()
            )));
        }
        let reduced: Vec<bool> = (0..nd).map(|d| axes.contains(&d)).collect();
        let mut out_shape_kept: Vec<usize> = self.shape().to_vec();
        for &a in &axes {
            out_shape_kept[a] = 1;
        }
        let out_n = numel(&out_shape_kept);
        let group: usize = axes.iter().map(|&a| self.shape()[a]).product();
        let init = match kind {
            ReduceKind::Sum | ReduceKind::Mean => E::ZERO,
            ReduceKind::Min => E::from_f64(f64::INFINITY),
            ReduceKind::Max => E::from_f64(f64::NEG_INFINITY),
        };
        let mut out = vec![init; out_n];
        let out_strides = contiguous_strides(&out_shape_kept);
        let in_strides = contiguous_strides(self.shape());
        // Deterministic accumulation: iterate the input in row-major order.
        let data = self.data();
        let mut idx = vec![0usize; nd];
        let mut out_off = 0usize;
        for &v in data.iter() {
            match kind {
                ReduceKind::Sum | ReduceKind::Mean => out[out_off] += v,
                ReduceKind::Min => out[out_off] = out[out_off].minimum(v),
                ReduceKind::Max => out[out_off] = out[out_off].maximum(v),
            }
            // odometer over input coords, tracking the output offset
            for d in (0..nd).rev() {
                idx[d] += 1;
                if !reduced[d] {
                    out_off += out_strides[d];
                }
                if idx[d] < self.shape()[d] {
                    break;
                }
                idx[d] = 0;
                if !reduced[d] {
                    out_off -= out_strides[d] * self.shape()[d];
                }
            }
        }
        let _ = in_strides;
        if kind == ReduceKind::Mean {
            let inv = E::ONE / E::from_f64(group as f64);
            for v in out.iter_mut() {
                *v = *v * inv;
            }
        }
        let final_shape = if keepdim {
            out_shape_kept.clone()
        } else {
            let s: Vec<usize> = (0..nd).filter(|d| !reduced[*d]).map(|d| self.shape()[d]).collect();
            if s.is_empty() {
                vec![1]
            } else {
                s
            }
        };
        Ok(Tensor::from_op(
            out,
            final_shape,
            Op::Reduce {
                kind,
                x: self.clone(),
                axes,
            },
        ))
    }

    pub fn sum_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<E>> {
        self.reduce(ReduceKind::Sum, axes, keepdim)
    }
    pub fn mean_axes(&self, axes: &[usize], keepdim: bool) -> Result<Tensor<E>> {
        self.reduce(ReduceKind::Mean, axes, keepdim)
    }
    pub fn sum_all(&self) -> Tensor<E> {
        self.reduce(ReduceKind::Sum, &[], false).expect("full reduce")
    }
    pub fn mean_all(&self) -> Tensor<E> {
        self.reduce(ReduceKind::Mean, &[], false).expect("full reduce")
    }

    /// Exclusive prefix sum along the last axis: out[i] = sum of x[..i].
    pub fn cumsum_exclusive(&self) -> Tensor<E> {
        let nd = self.shape().len();
        assert!(nd >= 1);
        let n = self.shape()[nd - 1];
        let rows = self.numel() / n.max(1);
        let mut out = vec![E::ZERO; self.numel()];
        let data = self.data();
        for r in 0..rows {
            let base = r * n;
            let mut acc = E::ZERO;
            for i in 0..n {
                out[base + i] = acc;
                acc += data[base + i];
            }
        }
        Tensor::from_op(out, self.shape().to_vec(), Op::CumsumExclusive { x: self.clone() })
    }

    /// sin(gamma * u + beta) with gamma/beta broadcast over the leading dims
    /// of `u`. Fused frequency/phase-modulated sine used by the radiance
    /// field layers; one kernel pass instead of three elementwise ops.
    pub fn film_sin(&self, gamma: &Tensor<E>, beta: &Tensor<E>) -> Result<Tensor<E>> {
        let s1 = broadcast_shape(self.shape(), gamma.shape())?;
        let s2 = broadcast_shape(&s1, beta.shape())?;
        if s2 != self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "film_sin modulation {:?}/{:?} must broadcast into input {:?}",
                gamma.shape(),
                beta.shape(),
                self.shape()
            )));
        }
        let nd = self.shape().len();
        let sg = broadcast_strides(gamma.shape(), nd);
        let sb = broadcast_strides(beta.shape(), nd);
        let inner = self.shape()[nd - 1];
        let outer = self.numel() / inner.max(1);
        let (u, g, b) = (self.data(), gamma.data(), beta.data());
        let mut out = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; nd - 1];
        for _ in 0..outer {
            let mut bg = 0usize;
            let mut bb = 0usize;
            for (d, &i) in idx.iter().enumerate() {
                bg += i * sg[d];
                bb += i * sb[d];
            }
            let base = out.len();
            if sg[nd - 1] == 1 && sb[nd - 1] == 1 {
                let ru = &u[base..base + inner];
                let rg = &g[bg..bg + inner];
                let rb = &b[bb..bb + inner];
                out.extend(
                    ru.iter()
                        .zip(rg)
                        .zip(rb)
                        .map(|((&x, &gv), &bv)| (gv * x + bv).sin()),
                );
            } else {
                for i in 0..inner {
                    let gv = g[bg + i * sg[nd - 1]];
                    let bv = b[bb + i * sb[nd - 1]];
                    out.push((gv * u[base + i] + bv).sin());
                }
            }
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < self.shape()[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            Op::FilmSin {
                u: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
            },
        ))
    }
}
