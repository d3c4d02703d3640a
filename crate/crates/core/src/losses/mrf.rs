//! Feature-level MRF matching loss: every valid location of the warped
//! feature map must find a confident nearest neighbour among the primary
//! feature vectors under a relative cosine-similarity score.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::{ReduceKind, Tensor};

const EPS: f64 = 1e-5;
const BANDWIDTH: f64 = 0.5;
const NORM_EPS: f64 = 1e-12;
const MAX_SIDE: usize = 32;

/// Average-pool feature map [F,h,w] and mask [1,h,w] down to at most
/// `MAX_SIDE` on a side.
fn downsample<E: Elem>(
    f: &Tensor<E>,
    mask: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let mut f = f.clone();
    let mut mask = mask.clone();
    while f.shape()[1] > MAX_SIDE {
        let s = f.shape().to_vec();
        f = f
            .reshape(&[1, s[0], s[1], s[2]])?
            .avg_pool(2)?
            .reshape(&[s[0], s[1] / 2, s[2] / 2])?;
        let pooled = mask
            .reshape(&[1, 1, s[1], s[2]])?
            .avg_pool(2)?
            .reshape(&[1, s[1] / 2, s[2] / 2])?;
        // a pooled cell stays valid only when fully covered
        let hard: Vec<E> = pooled
            .data()
            .iter()
            .map(|&v| if v.to_f64() > 0.999 { E::ONE } else { E::ZERO })
            .collect();
        mask = Tensor::constant(hard, pooled.shape());
    }
    Ok((f, mask))
}

/// Relative-similarity MRF loss between primary and warped feature maps,
/// both [F, h, w] with a [1, h, w] validity mask (1 = use this location).
pub fn mrf_loss<E: Elem>(
    f_pri: &Tensor<E>,
    f_warp: &Tensor<E>,
    valid: &Tensor<E>,
) -> Result<Tensor<E>> {
    if f_pri.shape() != f_warp.shape() || f_pri.shape().len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "mrf {:?} vs {:?}",
            f_pri.shape(),
            f_warp.shape()
        )));
    }
    let (f_pri, mask) = downsample(f_pri, valid)?;
    let (f_warp, _) = downsample(f_warp, valid)?;
    let n_valid = mask.data().iter().filter(|m| m.to_f64() > 0.5).count();
    if n_valid < 2 {
        return Err(Error::InvalidArgument(format!(
            "mrf needs at least 2 valid locations, got {n_valid}"
        )));
    }
    let (c, h, w) = (f_pri.shape()[0], f_pri.shape()[1], f_pri.shape()[2]);
    let n = h * w;
    // rows are locations, columns are feature channels
    let unit = |f: &Tensor<E>| -> Result<Tensor<E>> {
        let rows = f.reshape(&[c, n])?.permute(&[1, 0])?;
        let norm = rows
            .mul(&rows)?
            .sum_axes(&[1], true)?
            .sqrt()
            .add_scalar(E::from_f64(NORM_EPS));
        rows.div(&norm)
    };
    let v = unit(&f_warp)?;
    let s = unit(&f_pri)?;
    let sim = v.matmul(&s.permute(&[1, 0])?)?; // [n, n], rows = warp locations

    let row_mask = mask.reshape(&[1, n])?; // over candidate (pri) locations
    let col_mask = mask.reshape(&[n, 1])?; // over query (warp) locations
    // cosine distance in [0,2]; normalizing by the row minimum keeps the
    // exponent bounded above by 1/BANDWIDTH whatever the feature content
    let dist = sim.neg().add_scalar(E::ONE);
    // push invalid candidates above any distance before taking the min
    let off = row_mask.neg().add_scalar(E::ONE).mul_scalar(E::from_f64(4.0));
    let masked_dist = dist.mul(&row_mask)?.add(&off)?;
    let row_min = masked_dist.reduce(ReduceKind::Min, &[1], true)?;
    let rs = dist
        .div(&row_min.add_scalar(E::from_f64(EPS)))?
        .neg()
        .add_scalar(E::ONE)
        .mul_scalar(E::from_f64(1.0 / BANDWIDTH))
        .exp()
        .mul(&row_mask)?;
    let rs_norm = rs.div(&rs.sum_axes(&[1], true)?)?;
    let best = rs_norm.reduce(ReduceKind::Max, &[1], true)?;
    let mean = best
        .mul(&col_mask)?
        .sum_all()
        .mul_scalar(E::from_f64(1.0 / n_valid as f64));
    Ok(mean.log().neg())
}
