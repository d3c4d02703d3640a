//! Progressive 2D decoder G_d: low-resolution rendered feature map -> image.
//!
//! Grows by powers of two from the rendering resolution. Each block is
//! bilinear upsample, 3x3 conv, AdaIN conditioned on the style vector, leaky
//! relu; every resolution has a 1x1 toRGB head feeding a skip accumulator
//! (rgb = up(rgb) + toRGB(h)). When a new resolution is fading in, the
//! pre-tanh output of the previous resolution is upsampled after tanh and
//! blended with weight (1 - alpha), so alpha = 0 reproduces the smaller
//! network exactly.

use rand::Rng;

use super::{channels_at, conv, init_conv, init_linear, linear, validate_resolution, ParamSet};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LEAK: f64 = 0.2;
const STYLE_BOUND: f64 = 0.05;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct DecoderNet {
    /// rendering resolution the decoder starts from
    pub base_res: usize,
    /// channel count of the rendered feature map
    pub feature_dim: usize,
    pub style_dim: usize,
    pub base_channels: usize,
    /// largest resolution parameters are registered for
    pub max_res: usize,
}

impl DecoderNet {
    pub fn new(base_res: usize, feature_dim: usize, style_dim: usize, max_res: usize) -> DecoderNet {
        DecoderNet {
            base_res,
            feature_dim,
            style_dim,
            base_channels: 32,
            max_res,
        }
    }

    pub fn init_params<E: Elem>(&self, params: &mut ParamSet<E>, rng: &mut impl Rng) {
        let mut res = self.base_res;
        while res <= self.max_res {
            let c_in = if res == self.base_res {
                self.feature_dim
            } else {
                channels_at(res / 2, self.base_channels)
            };
            let c = channels_at(res, self.base_channels);
            init_conv(params, rng, &format!("g_d.res{res}.conv"), c_in, c, 3);
            init_linear(
                params,
                rng,
                &format!("g_d.res{res}.style"),
                self.style_dim,
                2 * c,
                STYLE_BOUND,
            );
            init_conv(params, rng, &format!("g_d.res{res}.trgb"), c, 3, 1);
            res *= 2;
        }
    }

    /// Instance norm + style-driven scale/shift. x [B,C,H,W], w [B,style].
    fn adain<E: Elem>(
        &self,
        params: &ParamSet<E>,
        res: usize,
        x: &Tensor<E>,
        w: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let mu = x.mean_axes(&[2, 3], true)?;
        let centered = x.sub(&mu)?;
        let var = centered.mul(&centered)?.mean_axes(&[2, 3], true)?;
        let normed = centered.div(&var.add_scalar(E::from_f64(NORM_EPS)).sqrt())?;
        let s = linear(params, &format!("g_d.res{res}.style"), w)?.reshape(&[b, 2, c, 1, 1])?;
        let gamma = s.slice(1, 0, 1)?.reshape(&[b, c, 1, 1])?.add_scalar(E::ONE);
        let beta = s.slice(1, 1, 1)?.reshape(&[b, c, 1, 1])?;
        normed.mul(&gamma)?.add(&beta)
    }

    fn block<E: Elem>(
        &self,
        params: &ParamSet<E>,
        res: usize,
        h: &Tensor<E>,
        w: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let h = conv(params, &format!("g_d.res{res}.conv"), h, 1)?;
        Ok(self.adain(params, res, &h, w)?.leaky_relu(E::from_f64(LEAK)))
    }

    /// feature [B, feature_dim, base, base], w [B, style] -> [B, 3, target, target]
    /// in [-1, 1]. `fade_alpha` in [0, 1] blends in the newest resolution.
    pub fn forward<E: Elem>(
        &self,
        params: &ParamSet<E>,
        feature: &Tensor<E>,
        w: &Tensor<E>,
        target_res: usize,
        fade_alpha: f64,
    ) -> Result<Tensor<E>> {
        validate_resolution(target_res)?;
        if target_res < self.base_res || target_res > self.max_res {
            return Err(Error::InvalidArgument(format!(
                "decoder target {target_res} outside [{}, {}]",
                self.base_res, self.max_res
            )));
        }
        if feature.shape()[2] != self.base_res || feature.shape()[3] != self.base_res {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {0}x{0} features, got {1:?}",
                self.base_res,
                feature.shape()
            )));
        }
        if !(0.0..=1.0).contains(&fade_alpha) {
            return Err(Error::InvalidArgument(format!("fade_alpha {fade_alpha}")));
        }
        let mut h = self.block(params, self.base_res, feature, w)?;
        let mut rgb = conv(params, &format!("g_d.res{}.trgb", self.base_res), &h, 1)?;
        let mut prev_rgb = rgb.clone();
        let mut res = self.base_res;
        while res < target_res {
            res *= 2;
            prev_rgb = rgb.clone();
            h = self.block(params, res, &h.bilinear_upsample2()?, w)?;
            rgb = rgb
                .bilinear_upsample2()?
                .add(&conv(params, &format!("g_d.res{res}.trgb"), &h, 1)?)?;
        }
        let out = rgb.tanh();
        if fade_alpha >= 1.0 || target_res == self.base_res {
            return Ok(out);
        }
        let prev_out = prev_rgb.tanh().bilinear_upsample2()?;
        if fade_alpha == 0.0 {
            return Ok(prev_out);
        }
        let a = E::from_f64(fade_alpha);
        prev_out
            .mul_scalar(E::ONE - a)
            .add(&out.mul_scalar(a))
    }
}
