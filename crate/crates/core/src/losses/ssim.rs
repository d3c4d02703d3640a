//! Structural similarity with 3x3 mean-filter local statistics, and the
//! masked L1 + SSIM re-projection loss built on it.

use super::masked_mean;
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::{Padding, Tensor};

const C1: f64 = 1e-4;
const C2: f64 = 9e-4;
pub const MU_SSIM: f64 = 0.85;

/// 3x3 box filter applied per channel (zero padding at the border).
fn mean3<E: Elem>(x: &Tensor<E>) -> Result<Tensor<E>> {
    let s = x.shape().to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let k = Tensor::full(&[1, 1, 3, 3], E::from_f64(1.0 / 9.0));
    x.reshape(&[b * c, 1, h, w])?
        .conv2d(&k, 1, Padding::Same)?
        .reshape(&[b, c, h, w])
}

/// Per-pixel SSIM map of two images, shape-preserving. Accepts [C,H,W] or
/// [B,C,H,W]; values are expected in [0,1] (the constants assume unit range).
pub fn ssim<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ssim {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let unbatched = a.shape().len() == 3;
    let (a4, b4) = if unbatched {
        let mut s = vec![1usize];
        s.extend_from_slice(a.shape());
        (a.reshape(&s)?, b.reshape(&s)?)
    } else {
        (a.clone(), b.clone())
    };
    let mu_a = mean3(&a4)?;
    let mu_b = mean3(&b4)?;
    let var_a = mean3(&a4.mul(&a4)?)?.sub(&mu_a.mul(&mu_a)?)?;
    let var_b = mean3(&b4.mul(&b4)?)?.sub(&mu_b.mul(&mu_b)?)?;
    let cov = mean3(&a4.mul(&b4)?)?.sub(&mu_a.mul(&mu_b)?)?;
    let c1 = E::from_f64(C1);
    let c2 = E::from_f64(C2);
    let num = mu_a
        .mul(&mu_b)?
        .mul_scalar(E::from_f64(2.0))
        .add_scalar(c1)
        .mul(&cov.mul_scalar(E::from_f64(2.0)).add_scalar(c2))?;
    let den = mu_a
        .mul(&mu_a)?
        .add(&mu_b.mul(&mu_b)?)?
        .add_scalar(c1)
        .mul(&var_a.add(&var_b)?.add_scalar(c2))?;
    let out = num.div(&den)?;
    if unbatched {
        out.reshape(a.shape())
    } else {
        Ok(out)
    }
}

/// Masked image re-projection loss
/// L_ir = (1 - mu) mean|pri - warp| + (mu / 2) mean(1 - ssim),
/// means taken over pixels where `valid` is 1. Returns the scalar loss and
/// the valid fraction; an empty mask yields loss 0 and fraction 0.
pub fn image_reproj_loss<E: Elem>(
    pri: &Tensor<E>,
    warp: &Tensor<E>,
    valid: &Tensor<E>,
) -> Result<(Tensor<E>, f64)> {
    image_reproj_loss_with_mu(pri, warp, valid, MU_SSIM)
}

/// [`image_reproj_loss`] with an explicit L1/SSIM trade-off.
pub fn image_reproj_loss_with_mu<E: Elem>(
    pri: &Tensor<E>,
    warp: &Tensor<E>,
    valid: &Tensor<E>,
    mu: f64,
) -> Result<(Tensor<E>, f64)> {
    if pri.shape() != warp.shape() {
        return Err(Error::ShapeMismatch(format!(
            "reproj {:?} vs {:?}",
            pri.shape(),
            warp.shape()
        )));
    }
    let (l1, frac) = masked_mean(&pri.sub(warp)?.abs(), valid)?;
    if frac == 0.0 {
        return Ok((Tensor::scalar(E::ZERO), 0.0));
    }
    let s = ssim(pri, warp)?;
    let (dssim, _) = masked_mean(&s.neg().add_scalar(E::ONE), valid)?;
    let loss = l1
        .mul_scalar(E::from_f64(1.0 - mu))
        .add(&dssim.mul_scalar(E::from_f64(mu / 2.0)))?;
    Ok((loss, frac))
}
