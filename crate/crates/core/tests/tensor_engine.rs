use mvcg_core::gradcheck::max_grad_rel_error;
use mvcg_core::tensor::{Padding, Tensor};
use mvcg_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_var_f64(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::var(randn_vec(rng, n), shape)
}

fn rand_var_f32(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::var(randn_vec(rng, n).iter().map(|&v| v as f32).collect(), shape)
}

#[test]
fn exp_at_zero() {
    let x = Tensor::<f32>::var(vec![0.0], &[1]);
    let y = x.exp();
    assert_eq!(y.item(), 1.0, "exp(0) must be 1");
    let g = y.sum_all().backward().unwrap();
    assert_eq!(g.get(&x).unwrap()[0], 1.0, "d exp / dx at 0 must be 1");
}

#[test]
fn sin_at_zero() {
    let x = Tensor::<f32>::var(vec![0.0], &[1]);
    let y = x.sin();
    assert_eq!(y.item(), 0.0, "sin(0) must be 0");
    let g = y.sum_all().backward().unwrap();
    assert_eq!(g.get(&x).unwrap()[0], 1.0, "d sin / dx at 0 must be 1");
}

#[test]
fn softplus_matches_negative_log_form() {
    // softplus(-t) == -f(t) where f(t) = -log(1 + exp(-t)), on t in [-10, 10]
    let ts: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
    let neg_t = Tensor::<f64>::constant(ts.iter().map(|&t| -t).collect(), &[ts.len()]);
    let sp = neg_t.softplus();
    for (i, &t) in ts.iter().enumerate() {
        let f = -((-t).exp().ln_1p());
        let err = (sp.data()[i] - (-f)).abs();
        assert!(err < 1e-6, "softplus(-{t}) off by {err}");
    }
    let half = Tensor::<f64>::scalar(0.0).softplus().item();
    assert!((half - 2.0f64.ln()).abs() < 1e-12, "softplus(0) must be log 2");
}

#[test]
fn matmul_identity() {
    let eye = Tensor::<f32>::constant(
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        &[3, 3],
    );
    let x = Tensor::constant((0..9).map(|i| i as f32).collect(), &[3, 3]);
    let y = eye.matmul(&x).unwrap();
    assert_eq!(y.data(), x.data(), "I * X must equal X");
}

#[test]
fn matmul_small_product() {
    let a = Tensor::<f32>::constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]);
    let b = Tensor::constant(vec![1.0, 1.0], &[2, 1]);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 1]);
    assert_eq!(c.data(), &[3.0, 7.0]);
}

#[test]
fn matmul_grad_of_sum_is_ones_times_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_var_f32(&mut rng, &[5, 4]);
    let b = rand_var_f32(&mut rng, &[4, 3]);
    let g = a.matmul(&b).unwrap().sum_all().backward().unwrap();
    let ga = g.get(&a).unwrap();
    // d sum(AB) / dA = ones(5x3) . B^T, i.e. row-independent column sums of B^T
    for r in 0..5 {
        for c in 0..4 {
            let expect: f32 = (0..3).map(|j| b.data()[c * 3 + j]).sum();
            let got = ga[r * 4 + c];
            assert!((got - expect).abs() < 1e-6, "dA[{r},{c}] = {got}, want {expect}");
        }
    }
}

#[test]
fn matmul_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = rand_var_f32(&mut rng, &[5, 4]);
    let b = rand_var_f32(&mut rng, &[4, 3]);
    let f = |xs: &[Tensor<f32>]| xs[0].matmul(&xs[1]).unwrap().sum_all();
    let err = max_grad_rel_error(&f, &[a, b], 1e-3);
    assert!(err < 1e-3, "matmul gradient error {err}");
}

#[test]
fn conv_1x1_unit_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = rand_var_f32(&mut rng, &[1, 1, 4, 4]);
    let k = Tensor::constant(vec![1.0f32], &[1, 1, 1, 1]);
    let y = x.conv2d(&k, 1, Padding::Same).unwrap();
    assert_eq!(y.data(), x.data(), "1x1 unit kernel must be identity");
}

#[test]
fn conv_averaging_kernel_on_constant_image() {
    let c = 0.7f32;
    let x = Tensor::full(&[1, 1, 6, 6], c);
    let k = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
    let y = x.conv2d(&k, 1, Padding::Same).unwrap();
    // interior pixels see the full window; the zero-padded border does not
    for iy in 1..5 {
        for ix in 1..5 {
            let v = y.data()[iy * 6 + ix];
            assert!((v - c).abs() < 1e-6, "interior pixel ({iy},{ix}) = {v}, want {c}");
        }
    }
}

fn conv_loop_oracle(
    x: &[f64],
    (b, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (o, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: (usize, usize),
    out_hw: (usize, usize),
) -> Vec<f64> {
    let (ho, wo) = out_hw;
    let mut out = vec![0.0; b * o * ho * wo];
    for bi in 0..b {
        for oi in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad.0 as isize;
                                let ix = (ox * stride + kx) as isize - pad.1 as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((bi * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k[((oi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((bi * o + oi) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_var_f64(&mut rng, &[1, 2, 5, 5]);
    let k = rand_var_f64(&mut rng, &[3, 2, 3, 3]);
    for (padding, pad, out_hw) in [(Padding::Same, (1, 1), (5, 5)), (Padding::Valid, (0, 0), (3, 3))] {
        let y = x.conv2d(&k, 1, padding).unwrap();
        let oracle = conv_loop_oracle(x.data(), (1, 2, 5, 5), k.data(), (3, 3, 3), 1, pad, out_hw);
        assert_eq!(y.numel(), oracle.len());
        for (i, (&got, &want)) in y.data().iter().zip(oracle.iter()).enumerate() {
            assert!((got - want).abs() < 1e-5, "conv output {i}: {got} vs oracle {want}");
        }
    }
}

#[test]
fn conv_stride2_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = rand_var_f64(&mut rng, &[2, 3, 8, 8]);
    let k = rand_var_f64(&mut rng, &[4, 3, 3, 3]);
    let y = x.conv2d(&k, 2, Padding::Same).unwrap();
    assert_eq!(y.shape(), &[2, 4, 4, 4]);
    // total same-padding here is 1 per axis; the leading side gets floor(1/2) = 0
    let oracle = conv_loop_oracle(x.data(), (2, 3, 8, 8), k.data(), (4, 3, 3), 2, (0, 0), (4, 4));
    for (&got, &want) in y.data().iter().zip(oracle.iter()) {
        assert!((got - want).abs() < 1e-5, "stride-2 conv {got} vs oracle {want}");
    }
}

#[test]
fn conv_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x = rand_var_f64(&mut rng, &[1, 2, 5, 5]);
    let k = rand_var_f64(&mut rng, &[2, 2, 3, 3]);
    let f = |xs: &[Tensor<f64>]| {
        let y = xs[0].conv2d(&xs[1], 1, Padding::Same).unwrap();
        y.mul(&y).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[x, k], 1e-4);
    assert!(err < 1e-6, "conv gradient error {err}");
}

#[test]
fn bilinear_sample_integer_coords_are_exact() {
    let src = Tensor::<f32>::constant((0..12).map(|i| i as f32).collect(), &[1, 3, 4]);
    let coords = Tensor::constant(vec![0.0, 0.0, 3.0, 2.0, 1.0, 1.0], &[1, 3, 2]);
    let out = src.bilinear_sample(&coords).unwrap();
    assert_eq!(out.data(), &[0.0, 11.0, 5.0], "integer coords must hit source pixels");
}

#[test]
fn bilinear_sample_center_of_2x2() {
    let src = Tensor::<f32>::constant(vec![0.0, 1.0, 2.0, 3.0], &[1, 2, 2]);
    let coords = Tensor::constant(vec![0.5, 0.5], &[1, 1, 2]);
    let out = src.bilinear_sample(&coords).unwrap();
    assert_eq!(out.item(), 1.5, "center sample must average the 4 neighbors");
}

#[test]
fn bilinear_sample_coord_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let src = rand_var_f64(&mut rng, &[2, 5, 5]);
    // interior coords, away from integer lattice and edges
    let coords = Tensor::<f64>::var(
        vec![1.3, 2.6, 3.2, 1.4, 0.7, 3.1, 2.2, 2.9],
        &[2, 2, 2],
    );
    let f = |xs: &[Tensor<f64>]| xs[0].bilinear_sample(&xs[1]).unwrap().sum_all();
    let err = max_grad_rel_error(&f, &[src, coords], 1e-4);
    assert!(err < 1e-6, "bilinear_sample gradient error {err}");
}

#[test]
fn bilinear_upsample_constant_and_single_pixel() {
    let c = Tensor::<f32>::full(&[1, 2, 3, 3], 0.4);
    let up = c.bilinear_upsample2().unwrap();
    assert!(up.data().iter().all(|&v| (v - 0.4).abs() < 1e-7), "constant image must stay constant");
    let one = Tensor::<f32>::constant(vec![2.5], &[1, 1, 1, 1]);
    let up1 = one.bilinear_upsample2().unwrap();
    assert_eq!(up1.shape(), &[1, 1, 2, 2]);
    assert!(up1.data().iter().all(|&v| v == 2.5), "1x1 upsample must replicate the value");
}

#[test]
fn bilinear_upsample_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let x = rand_var_f64(&mut rng, &[1, 2, 3, 3]);
    let f = |xs: &[Tensor<f64>]| {
        let y = xs[0].bilinear_upsample2().unwrap();
        y.mul(&y).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[x], 1e-4);
    assert!(err < 1e-6, "bilinear_upsample gradient error {err}");
}

#[test]
fn reduce_basics() {
    let x = Tensor::<f32>::ones(&[4]);
    assert_eq!(x.sum_all().item(), 4.0);
    let m = Tensor::<f32>::constant(vec![1.0, 3.0], &[2]).mean_all();
    assert_eq!(m.item(), 2.0);
    let v = Tensor::<f32>::var(vec![5.0, -1.0, 2.0, 0.0], &[4]);
    let g = v.mean_all().backward().unwrap();
    assert_eq!(g.get(&v).unwrap(), &[0.25; 4], "grad of mean must be 1/n");
}

#[test]
fn reduce_min_max_and_axis_grads() {
    let x = Tensor::<f32>::constant(vec![3.0, -1.0, 2.0, 2.0, 7.0, 0.0], &[2, 3]);
    let mx = x.reduce(mvcg_core::tensor::ReduceKind::Max, &[1], false).unwrap();
    assert_eq!(mx.data(), &[3.0, 7.0]);
    let mn = x.reduce(mvcg_core::tensor::ReduceKind::Min, &[0], false).unwrap();
    assert_eq!(mn.data(), &[2.0, -1.0, 0.0]);
    // tie: gradient routes to the first extremum in row-major order
    let t = Tensor::<f32>::var(vec![4.0, 4.0, 1.0], &[3]);
    let g = t
        .reduce(mvcg_core::tensor::ReduceKind::Max, &[0], false)
        .unwrap()
        .sum_all()
        .backward()
        .unwrap();
    assert_eq!(g.get(&t).unwrap(), &[1.0, 0.0, 0.0]);
}

#[test]
fn backward_of_square() {
    let x = Tensor::<f32>::var(vec![3.0], &[1]);
    let loss = x.mul(&x).unwrap().sum_all();
    let g = loss.backward().unwrap();
    assert_eq!(g.get(&x).unwrap()[0], 6.0, "d x^2 / dx at 3 must be 6");
}

#[test]
fn backward_through_sin_of_matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let w = rand_var_f64(&mut rng, &[6, 4]);
    let x = rand_var_f64(&mut rng, &[4, 2]);
    let f = |xs: &[Tensor<f64>]| xs[0].matmul(&xs[1]).unwrap().sin().sum_all();
    let err = max_grad_rel_error(&f, &[w, x], 1e-4);
    assert!(err < 1e-6, "sin(Wx) gradient error {err}");
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let x = Tensor::<f32>::var(vec![1.0, 2.0], &[2]);
    match x.backward() {
        Err(Error::NonScalarLoss(shape)) => assert_eq!(shape, vec![2]),
        other => panic!("expected NonScalarLoss, got {other:?}"),
    }
}

#[test]
fn backward_rejects_non_finite_loss() {
    let x = Tensor::<f32>::var(vec![-1.0], &[1]);
    let loss = x.log().sum_all();
    assert!(matches!(loss.backward(), Err(Error::NonFiniteLoss(_))));
}

#[test]
fn backward_twice_on_same_root_is_an_error() {
    let x = Tensor::<f32>::var(vec![2.0], &[1]);
    let loss = x.mul(&x).unwrap().sum_all();
    loss.backward().unwrap();
    assert!(matches!(loss.backward(), Err(Error::DoubleBackward)));
}

#[test]
fn same_seed_gives_bit_identical_grads() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = rand_var_f32(&mut rng, &[8, 8]);
        let x = rand_var_f32(&mut rng, &[8, 3]);
        let b = rand_var_f32(&mut rng, &[8, 1]);
        let h = w.matmul(&x).unwrap().add(&b).unwrap().sin();
        let loss = h.mul(&h).unwrap().mean_all();
        let g = loss.backward().unwrap();
        (
            g.get(&w).unwrap().to_vec(),
            g.get(&x).unwrap().to_vec(),
            g.get(&b).unwrap().to_vec(),
        )
    };
    let a = run();
    let b = run();
    assert!(a == b, "two identical forward+backward passes must agree bitwise");
}

#[test]
fn shared_subexpression_accumulates_grads() {
    // y = x*x + x: dy/dx = 2x + 1, with x consumed by two ops
    let x = Tensor::<f32>::var(vec![1.5], &[1]);
    let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
    let g = y.backward().unwrap();
    assert_eq!(g.get(&x).unwrap()[0], 4.0);
}

#[test]
fn broadcast_binary_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x = rand_var_f64(&mut rng, &[3, 4]);
    let bias = rand_var_f64(&mut rng, &[4]);
    let scale = rand_var_f64(&mut rng, &[3, 1]);
    let f = |xs: &[Tensor<f64>]| {
        let y = xs[0].add(&xs[1]).unwrap().mul(&xs[2]).unwrap();
        y.mul(&y).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[x, bias, scale], 1e-4);
    assert!(err < 1e-6, "broadcast binary gradient error {err}");
}

#[test]
fn div_min_max_grads_match_finite_differences() {
    let x = Tensor::<f64>::var(vec![0.8, -0.6, 0.3, -0.9], &[4]);
    let y = Tensor::<f64>::var(vec![1.7, 1.2, -1.4, 2.1], &[4]);
    let f = |xs: &[Tensor<f64>]| {
        let d = xs[0].div(&xs[1]).unwrap();
        let m = xs[0].maximum(&xs[1]).unwrap();
        let n = xs[0].minimum(&xs[1]).unwrap();
        d.add(&m).unwrap().add(&n).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[x, y], 1e-5);
    assert!(err < 1e-6, "div/min/max gradient error {err}");
}

#[test]
fn unary_grads_match_finite_differences() {
    let x = Tensor::<f64>::var(vec![0.4, -0.7, 0.9, -0.2, 0.1, 0.6], &[6]);
    let f = |xs: &[Tensor<f64>]| {
        let x = &xs[0];
        let mut acc = x.exp().sum_all();
        for t in [
            x.sin().sum_all(),
            x.cos().sum_all(),
            x.tanh().sum_all(),
            x.sigmoid().sum_all(),
            x.softplus().sum_all(),
            x.leaky_relu(0.2).sum_all(),
            x.mul_scalar(3.0).sum_all(),
            x.add_scalar(-1.0).sum_all(),
            x.add_scalar(2.0).log().sum_all(),
            x.add_scalar(2.0).sqrt().sum_all(),
            x.add_scalar(2.0).pow_scalar(1.7).sum_all(),
        ] {
            acc = acc.add(&t).unwrap();
        }
        acc
    };
    let err = max_grad_rel_error(&f, &[x], 1e-5);
    assert!(err < 1e-6, "unary gradient error {err}");
}

#[test]
fn shape_op_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let a = rand_var_f64(&mut rng, &[2, 3, 4]);
    let b = rand_var_f64(&mut rng, &[2, 2, 4]);
    let f = |xs: &[Tensor<f64>]| {
        let cat = Tensor::concat(&[xs[0].clone(), xs[1].clone()], 1).unwrap();
        let sl = cat.slice(1, 1, 3).unwrap();
        let p = sl.permute(&[2, 0, 1]).unwrap();
        let r = p.reshape(&[4, 6]).unwrap();
        let y = r.sin();
        y.mul(&y).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[a, b], 1e-4);
    assert!(err < 1e-6, "shape op gradient error {err}");
}

#[test]
fn broadcast_to_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let a = rand_var_f64(&mut rng, &[3, 1]);
    let f = |xs: &[Tensor<f64>]| {
        let y = xs[0].broadcast_to(&[2, 3, 5]).unwrap().sin();
        y.mul(&y).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[a], 1e-4);
    assert!(err < 1e-6, "broadcast_to gradient error {err}");
}

#[test]
fn avg_pool_forward_and_grads() {
    let x = Tensor::<f32>::constant((0..16).map(|i| i as f32).collect(), &[1, 1, 4, 4]);
    let y = x.avg_pool(2).unwrap();
    assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let v = rand_var_f64(&mut rng, &[1, 2, 4, 4]);
    let f = |xs: &[Tensor<f64>]| {
        let y = xs[0].avg_pool(2).unwrap();
        y.mul(&y).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[v], 1e-4);
    assert!(err < 1e-6, "avg_pool gradient error {err}");
}

#[test]
fn cumsum_exclusive_forward_and_grads() {
    let x = Tensor::<f32>::constant(vec![1.0, 2.0, 3.0, 4.0], &[1, 4]);
    let y = x.cumsum_exclusive();
    assert_eq!(y.data(), &[0.0, 1.0, 3.0, 6.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let v = rand_var_f64(&mut rng, &[3, 5]);
    let f = |xs: &[Tensor<f64>]| {
        let y = xs[0].cumsum_exclusive().sin();
        y.mul(&y).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[v], 1e-4);
    assert!(err < 1e-6, "cumsum_exclusive gradient error {err}");
}

#[test]
fn film_sin_matches_composed_ops_and_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(65);
    let u = rand_var_f64(&mut rng, &[4, 6]);
    let gamma = rand_var_f64(&mut rng, &[1, 6]);
    let beta = rand_var_f64(&mut rng, &[1, 6]);
    let fused = u.film_sin(&gamma, &beta).unwrap();
    let composed = gamma.mul(&u).unwrap().add(&beta).unwrap().sin();
    for (a, b) in fused.data().iter().zip(composed.data().iter()) {
        assert!((a - b).abs() < 1e-12, "film_sin disagrees with composed ops");
    }
    let f = |xs: &[Tensor<f64>]| {
        let y = xs[0].film_sin(&xs[1], &xs[2]).unwrap();
        y.mul(&y).unwrap().sum_all()
    };
    let err = max_grad_rel_error(&f, &[u, gamma, beta], 1e-4);
    assert!(err < 1e-6, "film_sin gradient error {err}");
}

#[test]
fn composite_f32_grads_within_loose_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let w = rand_var_f32(&mut rng, &[4, 4]);
    let x = rand_var_f32(&mut rng, &[4, 4]);
    let f = |xs: &[Tensor<f32>]| {
        let h = xs[0].matmul(&xs[1]).unwrap().sin();
        h.mul(&h).unwrap().mean_all()
    };
    let err = max_grad_rel_error(&f, &[w, x], 1e-3);
    assert!(err < 1e-3, "f32 composite gradient error {err}");
}

fn scalar_broadcast_reference(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
) -> (Vec<f64>, Vec<usize>) {
    let nd = a_shape.len().max(b_shape.len());
    let pad = |s: &[usize]| {
        let mut v = vec![1usize; nd - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (sa, sb) = (pad(a_shape), pad(b_shape));
    let out: Vec<usize> = (0..nd).map(|d| sa[d].max(sb[d])).collect();
    let total: usize = out.iter().product();
    let mut data = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut ia = 0usize;
        let mut ib = 0usize;
        for d in 0..nd {
            let stride: usize = out[d + 1..].iter().product();
            let coord = rem / stride;
            rem %= stride;
            let ca = if sa[d] == 1 { 0 } else { coord };
            let cb = if sb[d] == 1 { 0 } else { coord };
            ia = ia * sa[d] + ca;
            ib = ib * sb[d] + cb;
        }
        data.push(a[ia] + b[ib]);
    }
    (data, out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn broadcasting_matches_scalar_reference(
        dims in proptest::collection::vec(1usize..4, 1..4),
        mask_a in proptest::collection::vec(any::<bool>(), 4),
        mask_b in proptest::collection::vec(any::<bool>(), 4),
        seed in any::<u64>(),
    ) {
        let a_shape: Vec<usize> = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| if mask_a[i] { 1 } else { d })
            .collect();
        let b_shape: Vec<usize> = dims
            .iter()
            .enumerate()
            .map(|(i, &d)| if mask_b[i] { 1 } else { d })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = randn_vec(&mut rng, a_shape.iter().product());
        let b = randn_vec(&mut rng, b_shape.iter().product());
        let ta = Tensor::<f64>::constant(a.clone(), &a_shape);
        let tb = Tensor::<f64>::constant(b.clone(), &b_shape);
        let y = ta.add(&tb).unwrap();
        let (want, want_shape) = scalar_broadcast_reference(&a, &a_shape, &b, &b_shape);
        prop_assert_eq!(y.shape(), &want_shape[..]);
        prop_assert_eq!(y.data(), &want[..]);
    }
}
