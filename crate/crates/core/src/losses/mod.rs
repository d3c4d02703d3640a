//! Training objectives: photometric re-projection (L1 + SSIM), feature-level
//! MRF matching, and non-saturating adversarial losses with an R1 gradient
//! penalty on real images.

mod gan;
mod mrf;
mod ssim;

pub use gan::{gan_d_loss, gan_g_loss, r1_penalty};
pub use mrf::mrf_loss;
pub use ssim::{image_reproj_loss, image_reproj_loss_with_mu, ssim, MU_SSIM};

use crate::elem::Elem;

/// Per-step loss breakdown written to the training log.
#[derive(Debug, Clone, Default)]
pub struct LossReport {
    pub total: f64,
    pub g_adv: f64,
    pub d_adv: f64,
    pub r1: f64,
    pub reproj: f64,
    pub mrf: f64,
    pub eta_used: f64,
    pub valid_fraction: f64,
}

impl LossReport {
    pub fn csv_header() -> &'static str {
        "step,total,g_adv,d_adv,r1,reproj,mrf,eta,valid_fraction"
    }

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}",
            self.total, self.g_adv, self.d_adv, self.r1, self.reproj, self.mrf,
            self.eta_used, self.valid_fraction
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.g_adv, self.d_adv, self.r1, self.reproj, self.mrf]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub(crate) fn masked_mean<E: Elem>(
    x: &crate::tensor::Tensor<E>,
    mask: &crate::tensor::Tensor<E>,
) -> crate::error::Result<(crate::tensor::Tensor<E>, f64)> {
    let weighted = x.mul(mask)?;
    let count: f64 = mask.data().iter().map(|m| m.to_f64()).sum();
    // the mask broadcasts over channels: scale the count accordingly
    let scale = (x.numel() / mask.numel()) as f64;
    let n = count * scale;
    if n == 0.0 {
        return Ok((crate::tensor::Tensor::scalar(E::ZERO), 0.0));
    }
    Ok((
        weighted.sum_all().mul_scalar(E::from_f64(1.0 / n)),
        count / mask.numel() as f64,
    ))
}
