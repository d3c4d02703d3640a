//! Volume rendering: composite per-sample field outputs along rays into
//! color, depth, feature, and opacity maps.

use rand::Rng;

use crate::camera::{generate_rays, CameraPose, Intrinsics, RayBundle};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nets::{ParamSet, RadianceFieldNet};
use crate::tensor::Tensor;

/// Everything produced by rendering a batch of views.
pub struct RenderedView<E: Elem> {
    /// [B, 3, H, W] in [0, 1]
    pub color: Tensor<E>,
    /// [B, 1, H, W] expected z-depth along each ray
    pub depth: Tensor<E>,
    /// [B, F, H, W]
    pub feature: Tensor<E>,
    /// [B, 1, H, W] accumulated weight (1 = fully opaque)
    pub opacity: Tensor<E>,
    pub poses: Vec<CameraPose>,
}

/// Alpha-compositing weights over the last axis:
/// w_i = T_i (1 - exp(-sigma_i delta_i)) with T_i the transmittance through
/// all strictly earlier samples (exclusive prefix).
pub fn composite_weights<E: Elem>(
    sigma: &Tensor<E>,
    deltas: &Tensor<E>,
) -> Result<Tensor<E>> {
    if sigma.shape() != deltas.shape() {
        return Err(Error::ShapeMismatch(format!(
            "sigma {:?} vs deltas {:?}",
            sigma.shape(),
            deltas.shape()
        )));
    }
    let tau = sigma.mul(deltas)?;
    let alpha = tau.neg().exp().neg().add_scalar(E::ONE);
    let trans = tau.cumsum_exclusive().neg().exp();
    trans.mul(&alpha)
}

/// Weighted sum of per-sample values: weights [.., N], values [.., N, C]
/// -> [.., C].
pub fn composite<E: Elem>(weights: &Tensor<E>, values: &Tensor<E>) -> Result<Tensor<E>> {
    let mut wshape = weights.shape().to_vec();
    wshape.push(1);
    let n_axis = weights.shape().len() - 1;
    weights
        .reshape(&wshape)?
        .mul(values)?
        .sum_axes(&[n_axis], false)
}

fn flatten_rays<E: Elem>(bundle: &RayBundle<E>) -> Result<(Tensor<E>, Tensor<E>)> {
    let (h, w, n) = (bundle.height, bundle.width, bundle.n_samples);
    let o = bundle.origins.reshape(&[h * w, 1, 3])?;
    let zd = bundle.zdirs.reshape(&[h * w, 1, 3])?;
    let d = bundle.sample_depths.reshape(&[h * w, n, 1])?;
    let x = o.add(&d.mul(&zd)?)?.reshape(&[1, h * w * n, 3])?;
    let dirs = bundle
        .directions
        .reshape(&[h * w, 1, 3])?
        .broadcast_to(&[h * w, n, 3])?
        .reshape(&[1, h * w * n, 3])?;
    Ok((x, dirs))
}

/// Render one view per pose with per-view style rows of `w` [B, style].
#[allow(clippy::too_many_arguments)]
pub fn render_views<E: Elem>(
    field: &RadianceFieldNet,
    params: &ParamSet<E>,
    w: &Tensor<E>,
    poses: &[CameraPose],
    k: &Intrinsics,
    near: f64,
    far: f64,
    n_samples: usize,
    rng: &mut impl Rng,
    stratified: bool,
) -> Result<RenderedView<E>> {
    let b = poses.len();
    if b == 0 || w.shape()[0] != b {
        return Err(Error::InvalidArgument(format!(
            "{} poses but style batch {:?}",
            b,
            w.shape()
        )));
    }
    let (h, wd, n) = (k.height, k.width, n_samples);
    let mut xs = Vec::with_capacity(b);
    let mut ds = Vec::with_capacity(b);
    let mut depth_parts = Vec::with_capacity(b);
    let mut delta_parts = Vec::with_capacity(b);
    for pose in poses {
        let bundle = generate_rays::<E>(k, pose, near, far, n, rng, stratified)?;
        let (x, dirs) = flatten_rays(&bundle)?;
        xs.push(x);
        ds.push(dirs);
        depth_parts.push(bundle.sample_depths.reshape(&[1, h * wd, n])?);
        delta_parts.push(bundle.deltas.reshape(&[1, h * wd, n])?);
    }
    let x = Tensor::concat(&xs, 0)?;
    let dirs = Tensor::concat(&ds, 0)?;
    let depths = Tensor::concat(&depth_parts, 0)?;
    let deltas = Tensor::concat(&delta_parts, 0)?;

    let out = field.forward(params, &x, &dirs, w)?;
    let f = field.feature_dim();
    let sigma = out.sigma.reshape(&[b, h * wd, n])?;
    let weights = composite_weights(&sigma, &deltas)?;

    let to_chw = |t: Tensor<E>, c: usize| -> Result<Tensor<E>> {
        t.reshape(&[b, h, wd, c])?.permute(&[0, 3, 1, 2])
    };
    let color = to_chw(
        composite(&weights, &out.color.reshape(&[b, h * wd, n, 3])?)?,
        3,
    )?;
    let feature = to_chw(
        composite(&weights, &out.feature.reshape(&[b, h * wd, n, f])?)?,
        f,
    )?;
    let depth = weights
        .mul(&depths)?
        .sum_axes(&[2], false)?
        .reshape(&[b, 1, h, wd])?;
    let opacity = weights.sum_axes(&[2], false)?.reshape(&[b, 1, h, wd])?;
    Ok(RenderedView {
        color,
        depth,
        feature,
        opacity,
        poses: poses.to_vec(),
    })
}
