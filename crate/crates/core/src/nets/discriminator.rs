//! Progressive discriminator D.
//!
//! A fromRGB 1x1 conv enters at the current image resolution; each block is
//! two 3x3 convs with leaky relu then 2x average pooling, down to 4x4, where
//! a final conv + flatten + linear yields one logit per image. While a new
//! resolution fades in, the downsampled image is routed through the previous
//! resolution's fromRGB and blended with weight (1 - alpha), so alpha = 0
//! reproduces the smaller discriminator exactly. Every op here is piecewise
//! linear in the input image, which the gradient penalty relies on.

use rand::Rng;

use super::{channels_at, conv, init_conv, init_linear, linear, validate_resolution, ParamSet};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LEAK: f64 = 0.2;
const MIN_RES: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorNet {
    pub base_channels: usize,
    /// largest resolution parameters are registered for
    pub max_res: usize,
}

impl DiscriminatorNet {
    pub fn new(max_res: usize) -> DiscriminatorNet {
        DiscriminatorNet {
            base_channels: 32,
            max_res,
        }
    }

    pub fn init_params<E: Elem>(&self, params: &mut ParamSet<E>, rng: &mut impl Rng) {
        let mut res = self.max_res;
        while res > MIN_RES {
            let c = channels_at(res, self.base_channels);
            let c_next = channels_at(res / 2, self.base_channels);
            init_conv(params, rng, &format!("d.res{res}.from_rgb"), 3, c, 1);
            init_conv(params, rng, &format!("d.res{res}.conv0"), c, c, 3);
            init_conv(params, rng, &format!("d.res{res}.conv1"), c, c_next, 3);
            res /= 2;
        }
        let c4 = channels_at(MIN_RES, self.base_channels);
        init_conv(params, rng, "d.res4.from_rgb", 3, c4, 1);
        init_conv(params, rng, "d.res4.conv0", c4, c4, 3);
        init_linear(
            params,
            rng,
            "d.head",
            c4 * MIN_RES * MIN_RES,
            1,
            (6.0 / (c4 * MIN_RES * MIN_RES) as f64).sqrt(),
        );
    }

    fn from_rgb<E: Elem>(
        &self,
        params: &ParamSet<E>,
        res: usize,
        img: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        Ok(conv(params, &format!("d.res{res}.from_rgb"), img, 1)?
            .leaky_relu(E::from_f64(LEAK)))
    }

    /// img [B, 3, res, res] in [-1, 1] -> logits [B, 1].
    pub fn forward<E: Elem>(
        &self,
        params: &ParamSet<E>,
        img: &Tensor<E>,
        fade_alpha: f64,
    ) -> Result<Tensor<E>> {
        let shape = img.shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != shape[3] {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects [B,3,R,R], got {shape:?}"
            )));
        }
        let mut res = shape[2];
        validate_resolution(res)?;
        if res > self.max_res {
            return Err(Error::InvalidArgument(format!(
                "resolution {res} above registered maximum {}",
                self.max_res
            )));
        }
        if !(0.0..=1.0).contains(&fade_alpha) {
            return Err(Error::InvalidArgument(format!("fade_alpha {fade_alpha}")));
        }
        let leak = E::from_f64(LEAK);
        let mut h = self.from_rgb(params, res, img)?;
        let mut first = true;
        while res > MIN_RES {
            h = conv(params, &format!("d.res{res}.conv0"), &h, 1)?.leaky_relu(leak);
            h = conv(params, &format!("d.res{res}.conv1"), &h, 1)?.leaky_relu(leak);
            h = h.avg_pool(2)?;
            res /= 2;
            if first && fade_alpha < 1.0 {
                let skip = self.from_rgb(params, res, &img.avg_pool(2)?)?;
                h = if fade_alpha == 0.0 {
                    skip
                } else {
                    let a = E::from_f64(fade_alpha);
                    skip.mul_scalar(E::ONE - a).add(&h.mul_scalar(a))?
                };
            }
            first = false;
        }
        h = conv(params, "d.res4.conv0", &h, 1)?.leaky_relu(leak);
        let flat = h.reshape(&[shape[0], h.numel() / shape[0]])?;
        linear(params, "d.head", &flat)
    }
}
