//! Style-conditioned sinusoidal radiance field G_s.
//!
//! 8 hidden layers of width `width`; every layer is sin(gamma_l (W_l h + b_l)
//! + beta_l) where (gamma_l, beta_l) come from per-layer affine maps of the
//! style vector w, with gamma offset +15 and the first-layer input scaled by
//! 30. Heads: sigmoid color (optionally direction-conditioned), softplus
//! density, and a linear feature head exposing the pre-final-layer feature.

use rand::Rng;

use super::{init_linear, linear, uniform_var, ParamSet};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HIDDEN_LAYERS: usize = 8;
const GAMMA_OFFSET: f64 = 15.0;
const INPUT_SCALE: f64 = 30.0;
const STYLE_AFFINE_BOUND: f64 = 0.02;
// softplus(10) ~ 10: initial optical depth ~ 2.4 over a 0.24 shell
const DENSITY_BIAS_INIT: f64 = 10.0;
// first-layer pre-activation std at init; > 1 wraps the sine a few times
// across the scene shell, so the raw network starts out spatially textured
const FIRST_LAYER_PRE_STD: f64 = 6.0;

pub struct FieldOutput<E: Elem> {
    /// [B, P, 3] in [0,1]
    pub color: Tensor<E>,
    /// [B, P, 1], non-negative
    pub sigma: Tensor<E>,
    /// [B, P, width]
    pub feature: Tensor<E>,
}

#[derive(Debug, Clone, Copy)]
pub struct RadianceFieldNet {
    pub width: usize,
    pub style_dim: usize,
    /// feed the viewing direction into the color head
    pub use_dir: bool,
}

impl RadianceFieldNet {
    pub fn new(width: usize, style_dim: usize, use_dir: bool) -> RadianceFieldNet {
        RadianceFieldNet {
            width,
            style_dim,
            use_dir,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.width
    }

    pub fn init_params<E: Elem>(&self, params: &mut ParamSet<E>, rng: &mut impl Rng) {
        for l in 0..HIDDEN_LAYERS {
            let fan = if l == 0 { 3 } else { self.width };
            // hidden layers keep pre-activation (gamma (Wh+b)) std near 1 at
            // init (they see sin outputs, std ~ 0.707); the first layer sees
            // 30x with x ~ U(-0.3, 0.3) and is scaled to FIRST_LAYER_PRE_STD
            // so the init field has visible spatial frequency content
            let bound = if l == 0 {
                FIRST_LAYER_PRE_STD / (45.0 * (fan as f64).sqrt())
            } else {
                (6.0 / fan as f64).sqrt() / GAMMA_OFFSET
            };
            init_linear(params, rng, &format!("g_s.layer{l}"), fan, self.width, bound);
            params.insert(
                &format!("g_s.layer{l}.gamma.w"),
                uniform_var(rng, &[self.style_dim, self.width], STYLE_AFFINE_BOUND),
            );
            params.insert(
                &format!("g_s.layer{l}.gamma.b"),
                Tensor::var(vec![E::ZERO; self.width], &[1, self.width]),
            );
            params.insert(
                &format!("g_s.layer{l}.beta.w"),
                uniform_var(rng, &[self.style_dim, self.width], STYLE_AFFINE_BOUND),
            );
            params.insert(
                &format!("g_s.layer{l}.beta.b"),
                Tensor::var(vec![E::ZERO; self.width], &[1, self.width]),
            );
        }
        let head_bound = (6.0 / self.width as f64).sqrt();
        init_linear(params, rng, "g_s.density_head", self.width, 1, head_bound);
        // start semi-opaque: a transparent field composites depth ~0, which
        // makes every stereo correspondence invalid and kills the warping
        // gradients before the adversarial game can create any geometry
        params.set(
            "g_s.density_head.b",
            Tensor::var(vec![E::from_f64(DENSITY_BIAS_INIT)], &[1, 1]),
        );
        let color_in = self.width + if self.use_dir { 3 } else { 0 };
        init_linear(
            params,
            rng,
            "g_s.color_head",
            color_in,
            3,
            (6.0 / color_in as f64).sqrt(),
        );
        init_linear(
            params,
            rng,
            "g_s.feature_head",
            self.width,
            self.width,
            head_bound,
        );
    }

    /// Style modulation of layer `l`: (gamma [B,1,width], beta [B,1,width]).
    fn modulation<E: Elem>(
        &self,
        params: &ParamSet<E>,
        l: usize,
        w: &Tensor<E>,
        b: usize,
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        let gamma = w
            .matmul(params.get(&format!("g_s.layer{l}.gamma.w")))?
            .add(params.get(&format!("g_s.layer{l}.gamma.b")))?
            .add_scalar(E::from_f64(GAMMA_OFFSET))
            .reshape(&[b, 1, self.width])?;
        let beta = w
            .matmul(params.get(&format!("g_s.layer{l}.beta.w")))?
            .add(params.get(&format!("g_s.layer{l}.beta.b")))?
            .reshape(&[b, 1, self.width])?;
        Ok((gamma, beta))
    }

    /// One modulated hidden stack pass: x [B,P,3] -> last hidden [B*P, width].
    fn hidden<E: Elem>(
        &self,
        params: &ParamSet<E>,
        x: &Tensor<E>,
        w: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let (b, p) = (x.shape()[0], x.shape()[1]);
        let mut flat = x
            .reshape(&[b * p, 3])?
            .mul_scalar(E::from_f64(INPUT_SCALE));
        for l in 0..HIDDEN_LAYERS {
            // sin(gamma (W h + bias) + beta) = sin(gamma (W h) + gamma bias + beta):
            // folding the bias into beta saves a full pass over the big buffer
            let u = flat.matmul(params.get(&format!("g_s.layer{l}.w")))?;
            let (gamma, beta) = self.modulation(params, l, w, b)?;
            let bias = params
                .get(&format!("g_s.layer{l}.b"))
                .reshape(&[1, 1, self.width])?;
            let beta = gamma.mul(&bias)?.add(&beta)?;
            flat = u
                .reshape(&[b, p, self.width])?
                .film_sin(&gamma, &beta)?
                .reshape(&[b * p, self.width])?;
        }
        Ok(flat)
    }

    /// x [B,P,3] world locations, d [B,P,3] unit view directions, w [B,256].
    pub fn forward<E: Elem>(
        &self,
        params: &ParamSet<E>,
        x: &Tensor<E>,
        d: &Tensor<E>,
        w: &Tensor<E>,
    ) -> Result<FieldOutput<E>> {
        if x.shape().len() != 3 || x.shape()[2] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "field expects x [B,P,3], got {:?}",
                x.shape()
            )));
        }
        if !x.all_finite() || !w.all_finite() {
            return Err(Error::InvalidArgument("non-finite field input".into()));
        }
        let (b, p) = (x.shape()[0], x.shape()[1]);
        let h = self.hidden(params, x, w)?;
        let sigma = linear(params, "g_s.density_head", &h)?
            .softplus()
            .reshape(&[b, p, 1])?;
        let feature = linear(params, "g_s.feature_head", &h)?.reshape(&[b, p, self.width])?;
        let color_in = if self.use_dir {
            Tensor::concat(&[h, d.reshape(&[b * p, 3])?], 1)?
        } else {
            h
        };
        let color = linear(params, "g_s.color_head", &color_in)?
            .sigmoid()
            .reshape(&[b, p, 3])?;
        Ok(FieldOutput {
            color,
            sigma,
            feature,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::max_grad_rel_error;
    use crate::nets::MappingNet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup(width: usize) -> (RadianceFieldNet, ParamSet<f32>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = RadianceFieldNet::new(width, 256, true);
        let mut params = ParamSet::new();
        net.init_params(&mut params, &mut rng);
        (net, params, rng)
    }

    fn rand_inputs(
        rng: &mut ChaCha8Rng,
        b: usize,
        p: usize,
    ) -> (Tensor<f32>, Tensor<f32>, Tensor<f32>) {
        let x: Vec<f32> = (0..b * p * 3).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let mut d = Vec::with_capacity(b * p * 3);
        for _ in 0..b * p {
            let v = [
                rng.gen_range(-1.0f64..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-9);
            d.extend(v.iter().map(|&c| (c / n) as f32));
        }
        let w: Vec<f32> = (0..b * 256).map(|_| StandardNormal.sample(rng)).collect();
        (
            Tensor::constant(x, &[b, p, 3]),
            Tensor::constant(d, &[b, p, 3]),
            Tensor::constant(w, &[b, 256]),
        )
    }

    #[test]
    fn density_is_nonnegative_and_color_in_range() {
        let (net, params, mut rng) = setup(32);
        let (x, d, w) = rand_inputs(&mut rng, 2, 500);
        let out = net.forward(&params, &x, &d, &w).unwrap();
        assert!(out.sigma.data().iter().all(|&s| s >= 0.0), "sigma must be rectified");
        assert!(out.color.data().iter().all(|&c| (0.0..=1.0).contains(&c)));
        assert_eq!(out.feature.shape(), &[2, 500, 32]);
    }

    #[test]
    fn forward_is_deterministic() {
        let (net, params, mut rng) = setup(32);
        let (x, d, w) = rand_inputs(&mut rng, 1, 64);
        let a = net.forward(&params, &x, &d, &w).unwrap();
        let b = net.forward(&params, &x, &d, &w).unwrap();
        assert!(a.color.data() == b.color.data() && a.sigma.data() == b.sigma.data());
    }

    #[test]
    fn pre_activation_std_stays_in_band_at_init() {
        let (net, params, mut rng) = setup(64);
        let (x, _, _) = rand_inputs(&mut rng, 1, 1000);
        let mapping = MappingNet::new();
        let mut mparams = ParamSet::new();
        mapping.init_params(&mut mparams, &mut rng);
        let z: Vec<f32> = (0..256).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = mapping
            .forward(&mparams, &Tensor::constant(z, &[1, 256]))
            .unwrap();
        // replicate the hidden stack, measuring gamma (Wh+b) + beta per layer
        let mut flat = x.reshape(&[1000, 3]).unwrap().mul_scalar(INPUT_SCALE as f32);
        for l in 0..HIDDEN_LAYERS {
            let u = linear(&params, &format!("g_s.layer{l}"), &flat).unwrap();
            let (gamma, beta) = net.modulation(&params, l, &w, 1).unwrap();
            let pre = u
                .reshape(&[1, 1000, 64])
                .unwrap()
                .mul(&gamma)
                .unwrap()
                .add(&beta)
                .unwrap();
            let n = pre.numel() as f64;
            let mean: f64 = pre.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var: f64 =
                pre.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            // the first layer is deliberately hot (see FIRST_LAYER_PRE_STD)
            let band = if l == 0 { (2.0, 8.0) } else { (0.5, 2.0) };
            assert!(
                (band.0..=band.1).contains(&std),
                "layer {l} pre-activation std {std} outside {band:?}"
            );
            flat = pre.sin().reshape(&[1000, 64]).unwrap();
        }
    }

    #[test]
    fn style_actually_conditions_density() {
        let (net, params, mut rng) = setup(32);
        let (x, d, _) = rand_inputs(&mut rng, 1, 16);
        let mut sigmas = Vec::new();
        for _ in 0..100 {
            let w: Vec<f32> = (0..256).map(|_| StandardNormal.sample(&mut rng)).collect();
            let out = net
                .forward(&params, &x, &d, &Tensor::constant(w, &[1, 256]))
                .unwrap();
            sigmas.push(out.sigma.data()[0] as f64);
        }
        let mean = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
        let var = sigmas.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sigmas.len() as f64;
        assert!(var > 0.0, "density must vary with w at init");
    }

    #[test]
    fn gradient_wrt_style_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = RadianceFieldNet::new(16, 8, true);
        let mut params = ParamSet::<f64>::new();
        net.init_params(&mut params, &mut rng);
        let x: Vec<f64> = (0..2 * 5 * 3).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let d: Vec<f64> = (0..2 * 5 * 3).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let x = Tensor::constant(x, &[2, 5, 3]);
        let d = Tensor::constant(d, &[2, 5, 3]);
        let w0: Vec<f64> = (0..2 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Tensor::var(w0, &[2, 8]);
        let f = |inputs: &[Tensor<f64>]| {
            let out = net.forward(&params, &x, &d, &inputs[0]).unwrap();
            out.sigma.sum_all().add(&out.color.sum_all()).unwrap().sum_all()
        };
        let err = max_grad_rel_error(&f, &[w], 1e-4);
        assert!(err < 1e-6, "field style gradient error {err}");
    }
}
