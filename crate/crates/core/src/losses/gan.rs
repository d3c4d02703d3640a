//! Non-saturating adversarial losses and the R1 gradient penalty.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nets::{DiscriminatorNet, ParamSet};
use crate::tensor::Tensor;

/// Relative step used for the directional probe in [`r1_penalty`].
const PROBE_EPS: f64 = 1e-3;

/// Discriminator objective:
/// mean softplus(d_fake) + mean softplus(-d_real) + lambda * mean(r1).
pub fn gan_d_loss<E: Elem>(
    d_real: &Tensor<E>,
    d_fake: &Tensor<E>,
    r1: &Tensor<E>,
    lambda: f64,
) -> Result<Tensor<E>> {
    if !d_real.all_finite() || !d_fake.all_finite() {
        return Err(Error::InvalidArgument("non-finite discriminator scores".into()));
    }
    if !r1.all_finite() {
        return Err(Error::InvalidArgument("non-finite gradient penalty".into()));
    }
    d_fake
        .softplus()
        .mean_all()
        .add(&d_real.neg().softplus().mean_all())?
        .add(&r1.mean_all().mul_scalar(E::from_f64(lambda)))
}

/// Generator objective: mean softplus(-d_fake) + l_re (unit weight).
pub fn gan_g_loss<E: Elem>(d_fake: &Tensor<E>, l_re: &Tensor<E>) -> Result<Tensor<E>> {
    d_fake.neg().softplus().mean_all().add(l_re)
}

/// Per-sample squared norm of the discriminator's input gradient, [B, 1],
/// differentiable w.r.t. the discriminator parameters.
///
/// A first reverse pass over detached parameters yields the input gradient
/// g = dD/dI numerically. Because every discriminator op is piecewise linear
/// in the image, the directional derivative of D along g equals g . dD/dI
/// exactly inside the active linear region, so a second forward pass at a
/// slightly perturbed input recovers ||g||^2 with live parameters attached:
/// penalty = 2 <g, dD/dI>_live - ||g||^2, whose value is ||g||^2 and whose
/// parameter gradient matches the true gradient of ||g||^2.
pub fn r1_penalty<E: Elem>(
    d: &DiscriminatorNet,
    params: &ParamSet<E>,
    real: &Tensor<E>,
    fade_alpha: f64,
) -> Result<Tensor<E>> {
    let b = real.shape()[0];
    let per = real.numel() / b;
    let img = Tensor::var(real.data().to_vec(), real.shape());
    let detached = params.detached();
    let score = d.forward(&detached, &img, fade_alpha)?;
    let grads = score.sum_all().backward()?;
    let g = grads
        .get(&img)
        .ok_or_else(|| Error::Training("discriminator ignores its input".into()))?;

    let mut norms_sq = vec![0.0f64; b];
    for (i, v) in g.iter().enumerate() {
        norms_sq[i / per] += v.to_f64() * v.to_f64();
    }
    // probe direction: per-sample unit gradient scaled by a fixed step
    let mut probe = Vec::with_capacity(g.len());
    for (i, (x, v)) in real.data().iter().zip(g.iter()).enumerate() {
        let n = norms_sq[i / per].sqrt();
        let step = if n > 1e-20 { PROBE_EPS * v.to_f64() / n } else { 0.0 };
        probe.push(*x + E::from_f64(step));
    }
    let s0 = d.forward(params, real, fade_alpha)?;
    let s1 = d.forward(params, &Tensor::constant(probe, real.shape()), fade_alpha)?;
    // (s1 - s0) / eps = <g/||g||, dD/dI>; rescale to 2<g, dD/dI> per sample
    let scale: Vec<E> = norms_sq
        .iter()
        .map(|n| E::from_f64(2.0 * n.sqrt() / PROBE_EPS))
        .collect();
    let scale = Tensor::constant(scale, &[b, 1]);
    let offset = Tensor::constant(
        norms_sq.iter().map(|&n| E::from_f64(n)).collect(),
        &[b, 1],
    );
    s1.sub(&s0)?.mul(&scale)?.sub(&offset)
}
