//! Central finite-difference gradient checking.
//!
//! Used only by tests; the closure is re-invoked per perturbed input, so it
//! must rebuild its graph from the leaves it receives.

use crate::elem::Elem;
use crate::tensor::Tensor;

/// Numerical gradient of `f` w.r.t. every element of every input, via central
/// differences with the given step.
pub fn finite_diff_grads<E: Elem>(
    f: &dyn Fn(&[Tensor<E>]) -> Tensor<E>,
    inputs: &[Tensor<E>],
    step: f64,
) -> Vec<Vec<f64>> {
    let mut all = Vec::with_capacity(inputs.len());
    for (k, input) in inputs.iter().enumerate() {
        let mut g = Vec::with_capacity(input.numel());
        for i in 0..input.numel() {
            let eval = |delta: f64| -> f64 {
                let mut data = input.data().to_vec();
                data[i] = data[i] + E::from_f64(delta);
                let mut probe: Vec<Tensor<E>> = inputs.to_vec();
                probe[k] = Tensor::var(data, input.shape());
                f(&probe).item().to_f64()
            };
            let hi = eval(step);
            let lo = eval(-step);
            g.push((hi - lo) / (2.0 * step));
        }
        all.push(g);
    }
    all
}

/// Worst relative disagreement between autodiff and central finite
/// differences over all inputs: |a - n| / max(1, |a|, |n|).
pub fn max_grad_rel_error<E: Elem>(
    f: &dyn Fn(&[Tensor<E>]) -> Tensor<E>,
    inputs: &[Tensor<E>],
    step: f64,
) -> f64 {
    let loss = f(inputs);
    let store = loss.backward().expect("backward failed during gradient check");
    let numeric = finite_diff_grads(f, inputs, step);
    let mut worst = 0.0f64;
    for (input, num) in inputs.iter().zip(numeric.iter()) {
        let auto = store
            .get(input)
            .unwrap_or_else(|| panic!("no gradient recorded for input {:?}", input));
        for (a, &n) in auto.iter().zip(num.iter()) {
            let a = a.to_f64();
            let rel = (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs());
            worst = worst.max(rel);
        }
    }
    worst
}
