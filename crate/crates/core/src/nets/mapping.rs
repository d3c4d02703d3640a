//! Mapping network G_m: latent z -> intermediate style w.

use rand::Rng;

use super::{init_linear, linear, ParamSet};
use crate::elem::Elem;
use crate::error::Result;
use crate::tensor::Tensor;

pub const LATENT_DIM: usize = 256;
const LAYERS: usize = 4;
const LEAK: f64 = 0.2;

/// 4-layer leaky-relu MLP, hidden width 256, linear output.
#[derive(Debug, Clone, Copy)]
pub struct MappingNet {
    pub dim: usize,
}

impl MappingNet {
    pub fn new() -> MappingNet {
        MappingNet { dim: LATENT_DIM }
    }

    pub fn init_params<E: Elem>(&self, params: &mut ParamSet<E>, rng: &mut impl Rng) {
        let bound = (6.0 / self.dim as f64).sqrt();
        for l in 0..LAYERS {
            init_linear(params, rng, &format!("g_m.layer{l}"), self.dim, self.dim, bound);
        }
    }

    /// z [B, 256] -> w [B, 256].
    pub fn forward<E: Elem>(&self, params: &ParamSet<E>, z: &Tensor<E>) -> Result<Tensor<E>> {
        let mut h = z.clone();
        for l in 0..LAYERS {
            h = linear(params, &format!("g_m.layer{l}"), &h)?;
            if l + 1 < LAYERS {
                h = h.leaky_relu(E::from_f64(LEAK));
            }
        }
        Ok(h)
    }
}

impl Default for MappingNet {
    fn default() -> Self {
        MappingNet::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sample_z(rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let data: Vec<f32> = (0..LATENT_DIM)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Tensor::constant(data, &[1, LATENT_DIM])
    }

    #[test]
    fn deterministic_and_right_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MappingNet::new();
        let mut params = ParamSet::new();
        net.init_params(&mut params, &mut rng);
        let z = sample_z(&mut rng);
        let w1 = net.forward(&params, &z).unwrap();
        let w2 = net.forward(&params, &z).unwrap();
        assert_eq!(w1.shape(), &[1, 256]);
        assert!(w1.data() == w2.data(), "same z must give identical w");
    }

    #[test]
    fn distinct_latents_do_not_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = MappingNet::new();
        let mut params = ParamSet::new();
        net.init_params(&mut params, &mut rng);
        let wa = net.forward(&params, &sample_z(&mut rng)).unwrap();
        let wb = net.forward(&params, &sample_z(&mut rng)).unwrap();
        let d2: f32 = wa
            .data()
            .iter()
            .zip(wb.data().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(d2.sqrt() > 1e-3, "w collapse at init: distance {}", d2.sqrt());
    }
}
