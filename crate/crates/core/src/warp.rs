//! Depth-guided stereo warping between two views of the same scene.
//!
//! Using the primary view's rendered depth, every primary pixel is lifted to
//! a camera-space point, moved into the auxiliary camera with the relative
//! rigid transform, and projected; sampling the auxiliary image at those
//! locations reconstructs the primary view wherever the geometry is right.
//! The warp is differentiable w.r.t. the depth map.

use crate::camera::{relative_transform, CameraPose, Intrinsics};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nets::{ParamSet, RadianceFieldNet};
use crate::render::{render_views, RenderedView};
use crate::tensor::Tensor;

use rand::Rng;

const MIN_DEPTH: f64 = 1e-6;

/// Where each primary pixel lands in the auxiliary image.
pub struct CorrespondenceField<E: Elem> {
    /// [B, H, W, 2] (x, y) pixel-index coordinates into the auxiliary view
    pub coords: Tensor<E>,
    /// [B, 1, H, W] 1.0 where the match is geometrically trustworthy:
    /// positive depth in both cameras and inside the auxiliary image
    pub valid: Tensor<E>,
}

/// Build the correspondence from primary z-depth [B, 1, H, W] and the two
/// pose lists (one pair per batch item). Differentiable w.r.t. `depth`.
pub fn compute_correspondence<E: Elem>(
    depth: &Tensor<E>,
    pri: &[CameraPose],
    aux: &[CameraPose],
    k: &Intrinsics,
) -> Result<CorrespondenceField<E>> {
    if pri.len() != aux.len() {
        return Err(Error::InvalidArgument(format!(
            "{} primary poses but {} auxiliary",
            pri.len(),
            aux.len()
        )));
    }
    let rels: Vec<_> = pri
        .iter()
        .zip(aux)
        .map(|(p, a)| relative_transform(p, a))
        .collect();
    correspondence_from_transforms(depth, &rels, k)
}

/// Same as [`compute_correspondence`] with explicit primary -> auxiliary
/// camera transforms (one per batch item).
pub fn correspondence_from_transforms<E: Elem>(
    depth: &Tensor<E>,
    rels: &[crate::camera::RigidTransform],
    k: &Intrinsics,
) -> Result<CorrespondenceField<E>> {
    let shape = depth.shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::ShapeMismatch(format!(
            "depth must be [B,1,H,W], got {shape:?}"
        )));
    }
    let (b, h, w) = (shape[0], shape[2], shape[3]);
    if rels.len() != b {
        return Err(Error::InvalidArgument(format!(
            "{b} depth maps but {} transforms",
            rels.len()
        )));
    }
    if h != k.height || w != k.width {
        return Err(Error::ShapeMismatch(format!(
            "depth {h}x{w} vs intrinsics {}x{}",
            k.height, k.width
        )));
    }

    // camera-frame ray slopes per pixel center: point = d * (ax, ay, -1)
    let mut ax = vec![0.0f64; h * w];
    let mut ay = vec![0.0f64; h * w];
    for py in 0..h {
        for px in 0..w {
            ax[py * w + px] = (px as f64 + 0.5 - k.cx) / k.fx;
            ay[py * w + px] = (k.cy - (py as f64 + 0.5)) / k.fy;
        }
    }
    // fold the per-item rotation into per-pixel slopes:
    // p_aux = d * (R . (ax, ay, -1)) + t
    let mut mx = Vec::with_capacity(b * h * w);
    let mut my = Vec::with_capacity(b * h * w);
    let mut mz = Vec::with_capacity(b * h * w);
    let mut tx = Vec::with_capacity(b);
    let mut ty = Vec::with_capacity(b);
    let mut tz = Vec::with_capacity(b);
    for rel in rels {
        for p in 0..h * w {
            mx.push(E::from_f64(rel.r[0][0] * ax[p] + rel.r[0][1] * ay[p] - rel.r[0][2]));
            my.push(E::from_f64(rel.r[1][0] * ax[p] + rel.r[1][1] * ay[p] - rel.r[1][2]));
            mz.push(E::from_f64(rel.r[2][0] * ax[p] + rel.r[2][1] * ay[p] - rel.r[2][2]));
        }
        tx.push(E::from_f64(rel.t[0]));
        ty.push(E::from_f64(rel.t[1]));
        tz.push(E::from_f64(rel.t[2]));
    }
    let bhw = [b, 1, h, w];
    let mx = Tensor::constant(mx, &bhw);
    let my = Tensor::constant(my, &bhw);
    let mz = Tensor::constant(mz, &bhw);
    let tx = Tensor::constant(tx, &[b, 1, 1, 1]);
    let ty = Tensor::constant(ty, &[b, 1, 1, 1]);
    let tz = Tensor::constant(tz, &[b, 1, 1, 1]);

    let x_aux = depth.mul(&mx)?.add(&tx)?;
    let y_aux = depth.mul(&my)?.add(&ty)?;
    let z_aux = depth.mul(&mz)?.add(&tz)?;
    let depth_aux = z_aux.neg();
    // keep the division well-defined behind the validity mask
    let safe = depth_aux.maximum(&Tensor::full(&[1], E::from_f64(MIN_DEPTH)))?;
    let fx = E::from_f64(k.fx);
    let fy = E::from_f64(k.fy);
    // continuous pixel coords, shifted by the half-pixel center offset into
    // index space for sampling
    let u = x_aux.div(&safe)?.mul_scalar(fx).add_scalar(E::from_f64(k.cx - 0.5));
    let v = y_aux.div(&safe)?.mul_scalar(-fy).add_scalar(E::from_f64(k.cy - 0.5));

    let mut valid = Vec::with_capacity(b * h * w);
    {
        let dd = depth.data();
        let da = depth_aux.data();
        let ud = u.data();
        let vd = v.data();
        for i in 0..b * h * w {
            let inside = ud[i].to_f64() >= -0.5
                && ud[i].to_f64() <= w as f64 - 0.5
                && vd[i].to_f64() >= -0.5
                && vd[i].to_f64() <= h as f64 - 0.5;
            let front = dd[i].to_f64() > MIN_DEPTH && da[i].to_f64() > MIN_DEPTH;
            valid.push(if inside && front { E::ONE } else { E::ZERO });
        }
    }
    let coords = Tensor::concat(
        &[u.reshape(&[b, h, w, 1])?, v.reshape(&[b, h, w, 1])?],
        3,
    )?;
    Ok(CorrespondenceField {
        coords,
        valid: Tensor::constant(valid, &bhw),
    })
}

/// Pull auxiliary pixels into the primary frame: [B, C, H, W].
pub fn inverse_warp<E: Elem>(
    aux_img: &Tensor<E>,
    field: &CorrespondenceField<E>,
) -> Result<Tensor<E>> {
    aux_img.bilinear_sample(&field.coords)
}

/// eta-blend of primary and warped maps, falling back to the primary value
/// where the correspondence is invalid:
/// out = pri + valid * (1 - eta) * (warped - pri). `eta` is [B,1,1,1].
pub fn stereo_mixup<E: Elem>(
    pri: &Tensor<E>,
    warped: &Tensor<E>,
    valid: &Tensor<E>,
    eta: &Tensor<E>,
) -> Result<Tensor<E>> {
    let gain = valid.mul(&eta.neg().add_scalar(E::ONE))?;
    pri.add(&warped.sub(pri)?.mul(&gain)?)
}

/// Two rendered views of the same latent plus the auxiliary view warped
/// into the primary frame.
pub struct StereoPair<E: Elem> {
    pub pri: RenderedView<E>,
    pub aux: RenderedView<E>,
    pub warped_color: Tensor<E>,
    pub warped_feature: Tensor<E>,
    pub valid: Tensor<E>,
}

/// Render both views with shared styles `w` [B, style] and warp the
/// auxiliary color/feature maps into the primary frame using the rendered
/// primary depth.
#[allow(clippy::too_many_arguments)]
pub fn build_stereo_pair<E: Elem>(
    field: &RadianceFieldNet,
    params: &ParamSet<E>,
    w: &Tensor<E>,
    pri_poses: &[CameraPose],
    aux_poses: &[CameraPose],
    k: &Intrinsics,
    near: f64,
    far: f64,
    n_samples: usize,
    rng: &mut impl Rng,
    stratified: bool,
) -> Result<StereoPair<E>> {
    let pri = render_views(field, params, w, pri_poses, k, near, far, n_samples, rng, stratified)?;
    let aux = render_views(field, params, w, aux_poses, k, near, far, n_samples, rng, stratified)?;
    let corr = compute_correspondence(&pri.depth, pri_poses, aux_poses, k)?;
    let warped_color = inverse_warp(&aux.color, &corr)?;
    let warped_feature = inverse_warp(&aux.feature, &corr)?;
    Ok(StereoPair {
        pri,
        aux,
        warped_color,
        warped_feature,
        valid: corr.valid,
    })
}
