//! Adam optimizer over a named parameter set.

use std::collections::HashMap;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nets::ParamSet;
use crate::tensor::{GradStore, Tensor};

const EPS: f64 = 1e-8;

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    step: usize,
    // moments kept in f64 regardless of the training element type so the
    // checkpoint format is unambiguous
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Adam {
        Adam {
            beta1,
            beta2,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update over `names`, skipping parameters without a gradient.
    /// `lr = 0` or a zero gradient leaves a parameter bit-identical.
    pub fn update<E: Elem>(
        &mut self,
        params: &mut ParamSet<E>,
        names: &[String],
        grads: &GradStore<E>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for name in names {
            let p = params.get(name);
            let g = match grads.get(p) {
                Some(g) => g,
                None => continue,
            };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            if m.len() != g.len() {
                return Err(Error::Training(format!(
                    "moment size mismatch for {name}: {} vs {}",
                    m.len(),
                    g.len()
                )));
            }
            let mut data = p.data().to_vec();
            for i in 0..g.len() {
                let gi = g[i].to_f64();
                if !gi.is_finite() {
                    return Err(Error::Training(format!("non-finite gradient in {name}")));
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                if update != 0.0 {
                    data[i] = E::from_f64(data[i].to_f64() - update);
                }
            }
            let shape = p.shape().to_vec();
            params.set(name, Tensor::var(data, &shape));
        }
        Ok(())
    }

    /// (m, v) buffers for checkpointing, in the given name order.
    pub fn export(&self, names: &[String]) -> Vec<(String, Vec<f64>, Vec<f64>)> {
        names
            .iter()
            .filter_map(|n| {
                self.moments
                    .get(n)
                    .map(|(m, v)| (n.clone(), m.clone(), v.clone()))
            })
            .collect()
    }

    pub fn restore(&mut self, step: usize, moments: Vec<(String, Vec<f64>, Vec<f64>)>) {
        self.step = step;
        self.moments = moments.into_iter().map(|(n, m, v)| (n, (m, v))).collect();
    }
}
