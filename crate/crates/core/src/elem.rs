//! Scalar element trait abstracting over f32 (training) and f64 (gradient-check mode).

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Floating-point element of a tensor. f32 is the training dtype; f64 exists
/// for the high-precision gradient-check mode used by tests.
pub trait Elem:
    Copy
    + Send
    + Sync
    + PartialOrd
    + Debug
    + Display
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn powf(self, p: Self) -> Self;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;

    /// C := alpha * A(m x k) * B(k x n) + beta * C, row-major with explicit strides.
    ///
    /// # Safety
    /// Pointers must reference buffers valid for the given dimensions/strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

// Branchless range-reduced sin/cos for f32. libm's sin is a function call per
// element and dominates the training step; these polynomials vectorize and are
// accurate to ~1 ulp on the |x| <~ 1e3 range the networks produce.
const PI_HI: f32 = 3.141_592_7;
const PI_LO: f32 = -8.742_278e-8;

#[inline(always)]
fn sin_poly(r: f32) -> f32 {
    let r2 = r * r;
    let mut p = -2.505_210_8e-8;
    p = p * r2 + 2.755_731_9e-6;
    p = p * r2 - 1.984_127_0e-4;
    p = p * r2 + 8.333_333_3e-3;
    p = p * r2 - 1.666_666_7e-1;
    r + r * r2 * p
}

#[inline(always)]
fn cos_poly(r: f32) -> f32 {
    let r2 = r * r;
    let mut p = 2.087_675_7e-9;
    p = p * r2 - 2.755_731_9e-7;
    p = p * r2 + 2.480_158_7e-5;
    p = p * r2 - 1.388_888_9e-3;
    p = p * r2 + 4.166_666_7e-2;
    p = p * r2 - 0.5;
    1.0 + r2 * p
}

#[inline(always)]
fn reduce_half_turns(x: f32) -> (f32, u32) {
    let q = (x * std::f32::consts::FRAC_1_PI).round();
    // fused multiply-add keeps the cancellation exact; PI_LO mops up the
    // truncation of pi itself
    let r = (-q).mul_add(PI_HI, x) - q * PI_LO;
    // odd half-turn flips the sign; keep it branchless so the loop vectorizes
    let sign_bit = ((q as i32 as u32) & 1) << 31;
    (r, sign_bit)
}

#[inline(always)]
fn fast_sin_f32(x: f32) -> f32 {
    let (r, sign_bit) = reduce_half_turns(x);
    f32::from_bits(sin_poly(r).to_bits() ^ sign_bit)
}

#[inline(always)]
fn fast_cos_f32(x: f32) -> f32 {
    let (r, sign_bit) = reduce_half_turns(x);
    f32::from_bits(cos_poly(r).to_bits() ^ sign_bit)
}

impl Elem for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f32::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f32::ln(self)
    }
    #[inline(always)]
    fn sin(self) -> Self {
        fast_sin_f32(self)
    }
    #[inline(always)]
    fn cos(self) -> Self {
        fast_cos_f32(self)
    }
    #[inline(always)]
    fn powf(self, p: Self) -> Self {
        f32::powf(self, p)
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    #[inline(always)]
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
    #[inline(always)]
    fn maximum(self, other: Self) -> Self {
        f32::max(self, other)
    }
    #[inline(always)]
    fn minimum(self, other: Self) -> Self {
        f32::min(self, other)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Elem for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline(always)]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline(always)]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline(always)]
    fn powf(self, p: Self) -> Self {
        f64::powf(self, p)
    }
    #[inline(always)]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline(always)]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline(always)]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline(always)]
    fn maximum(self, other: Self) -> Self {
        f64::max(self, other)
    }
    #[inline(always)]
    fn minimum(self, other: Self) -> Self {
        f64::min(self, other)
    }
    #[inline(always)]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
