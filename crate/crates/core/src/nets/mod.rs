//! Learnable networks: mapping MLP, style-conditioned sinusoidal radiance
//! field, progressive decoder, progressive discriminator.
//!
//! Parameters live in a [`ParamSet`] keyed by stable names (the names are
//! part of the checkpoint format); network structs hold only hyperparameters
//! and read their weights from the set on every forward pass, so an
//! optimizer step simply rebinds names to updated leaf tensors.

mod decoder;
mod discriminator;
mod field;
mod mapping;

pub use decoder::DecoderNet;
pub use discriminator::DiscriminatorNet;
pub use field::{FieldOutput, RadianceFieldNet};
pub use mapping::MappingNet;

use std::collections::HashMap;

use rand::Rng;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered, named collection of leaf parameter tensors.
pub struct ParamSet<E: Elem> {
    order: Vec<String>,
    map: HashMap<String, Tensor<E>>,
}

impl<E: Elem> Default for ParamSet<E> {
    fn default() -> Self {
        ParamSet {
            order: Vec::new(),
            map: HashMap::new(),
        }
    }
}

impl<E: Elem> ParamSet<E> {
    pub fn new() -> ParamSet<E> {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor<E>) {
        assert!(
            !self.map.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.order.push(name.to_string());
        self.map.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor<E> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<E>> {
        self.map.get(name)
    }

    /// Rebind an existing name to a new tensor (optimizer step).
    pub fn set(&mut self, name: &str, t: Tensor<E>) {
        let slot = self
            .map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(slot.shape(), t.shape(), "parameter {name} changed shape");
        *slot = t;
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.order.iter().map(move |n| (n.as_str(), self.get(n)))
    }

    /// Names matching a prefix, in insertion order.
    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.order
            .iter()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect()
    }

    /// Copy with every tensor detached (no grad): used when one network must
    /// be evaluated inside another's update step without building its graph.
    pub fn detached(&self) -> ParamSet<E> {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            out.insert(n, t.detach());
        }
        out
    }

    pub fn total_elements(&self) -> usize {
        self.iter().map(|(_, t)| t.numel()).sum()
    }
}

pub(crate) fn uniform_var<E: Elem>(
    rng: &mut impl Rng,
    shape: &[usize],
    bound: f64,
) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::var(data, shape)
}

/// Register a linear layer: weight `[in, out]` (so forward is x . w) plus a
/// `[1, out]` bias row. `bound` is the uniform init half-range for weights.
pub(crate) fn init_linear<E: Elem>(
    params: &mut ParamSet<E>,
    rng: &mut impl Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bound: f64,
) {
    params.insert(&format!("{prefix}.w"), uniform_var(rng, &[fan_in, fan_out], bound));
    params.insert(&format!("{prefix}.b"), Tensor::var(vec![E::ZERO; fan_out], &[1, fan_out]));
}

/// x [N, in] -> x.w + b [N, out].
pub(crate) fn linear<E: Elem>(
    params: &ParamSet<E>,
    prefix: &str,
    x: &Tensor<E>,
) -> Result<Tensor<E>> {
    let w = params.get(&format!("{prefix}.w"));
    let b = params.get(&format!("{prefix}.b"));
    x.matmul(w)?.add(b)
}

/// Register a conv layer: kernel `[out, in, k, k]` + per-channel bias.
pub(crate) fn init_conv<E: Elem>(
    params: &mut ParamSet<E>,
    rng: &mut impl Rng,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) {
    let fan_in = (c_in * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt() / if k == 1 { 1.0 } else { 2.0_f64.sqrt() };
    params.insert(
        &format!("{prefix}.w"),
        uniform_var(rng, &[c_out, c_in, k, k], bound),
    );
    params.insert(
        &format!("{prefix}.b"),
        Tensor::var(vec![E::ZERO; c_out], &[1, c_out, 1, 1]),
    );
}

/// x [B, c_in, H, W] -> conv + bias.
pub(crate) fn conv<E: Elem>(
    params: &ParamSet<E>,
    prefix: &str,
    x: &Tensor<E>,
    stride: usize,
) -> Result<Tensor<E>> {
    let w = params.get(&format!("{prefix}.w"));
    let b = params.get(&format!("{prefix}.b"));
    x.conv2d(w, stride, crate::tensor::Padding::Same)?.add(b)
}

/// Channel width used by decoder/discriminator at a square resolution.
pub(crate) fn channels_at(res: usize, base_channels: usize) -> usize {
    // halve per doubling above 32^2, double per halving below, clamped
    (base_channels * 32 / res).clamp(16, 64)
}

pub(crate) fn validate_resolution(res: usize) -> Result<()> {
    if !res.is_power_of_two() || !(4..=512).contains(&res) {
        return Err(Error::InvalidArgument(format!(
            "unsupported resolution {res}"
        )));
    }
    Ok(())
}
