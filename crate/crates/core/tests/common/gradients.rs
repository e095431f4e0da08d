//! Central finite differences in f64 against every backward pass.
//!
//! Each check panics with the offending tensor and error on failure.

use pnet::arch::PatchBlock;
use pnet::ops::{
    add, batchnorm_backward, batchnorm_forward, bilinear_upsample, bilinear_upsample_backward, concat_channels,
    conv2d_backward, conv2d_forward, dropout, dropout_backward, maxpool2d_backward, maxpool2d_forward, relu,
    relu_backward, softmax_cross_entropy, split_channels, BatchNormState, ConvSpec, Mode,
};
use pnet::{LabelMap, ModelConfig, PNet64, Tensor64};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-3;
/// Whole-network step. At 1e-3 perturbations of early layers flip downstream
/// ReLUs and move batch statistics of 2x2 feature maps far enough to dominate
/// the difference quotient.
const MODEL_EPS: f64 = 1e-4;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor64 {
    let n = shape.iter().product();
    Tensor64::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor64, b: &Tensor64) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central difference of `loss` with respect to every entry of `at`.
fn numeric(at: &[f64], loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    numeric_with(EPS, at, loss)
}

fn numeric_with(eps: f64, at: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = at.to_vec();
    (0..p.len())
        .map(|i| {
            let v = p[i];
            p[i] = v + eps;
            let up = loss(&p);
            p[i] = v - eps;
            let down = loss(&p);
            p[i] = v;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Entrywise: |a - n| <= tol * max(1, |n|).
fn assert_entrywise(what: &str, analytic: &[f64], num: &[f64], tol: f64) {
    assert_eq!(analytic.len(), num.len(), "{what}");
    for (i, (a, n)) in analytic.iter().zip(num).enumerate() {
        assert!((a - n).abs() <= tol * n.abs().max(1.0), "{what}[{i}]: analytic {a}, numeric {n}");
    }
}

/// ||a - n|| / max(||a||, ||n||), with a floor for gradients that are zero in exact arithmetic.
fn group_error(analytic: &[f64], num: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(num).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(num)).max(1e-8)
}

fn with(t: &Tensor64, data: &[f64]) -> Tensor64 {
    Tensor64::new(t.shape(), data.to_vec()).unwrap()
}

pub fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in [ConvSpec::new(3, 1, 2, 2), ConvSpec::new(5, 2, 2, 1), ConvSpec::pointwise()] {
        let x = random([2, 2, 7, 6], &mut rng);
        let w = random([3, 2, spec.kernel.0, spec.kernel.1], &mut rng);
        let b = vec![0.1, -0.2, 0.3];
        let y = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let r = random(y.shape().dims(), &mut rng);
        let g = conv2d_backward(&x, &w, &spec, &r).unwrap();
        let nx = numeric(x.data(), |p| dot(&conv2d_forward(&with(&x, p), &w, &b, &spec).unwrap(), &r));
        let nw = numeric(w.data(), |p| dot(&conv2d_forward(&x, &with(&w, p), &b, &spec).unwrap(), &r));
        let nb = numeric(&b, |p| dot(&conv2d_forward(&x, &w, p, &spec).unwrap(), &r));
        assert_entrywise("conv x", g.x.data(), &nx, 1e-5);
        assert_entrywise("conv w", g.w.data(), &nw, 1e-5);
        assert_entrywise("conv b", &g.b, &nb, 1e-5);
    }
}

pub fn batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random([2, 3, 4, 5], &mut rng);
    let mut state = BatchNormState::<f64>::new(3);
    state.scale = vec![1.5, -0.7, 0.9];
    state.shift = vec![0.2, 0.0, -0.4];
    let run = |x: &Tensor64, scale: &[f64], shift: &[f64]| {
        let mut s = state.clone();
        s.scale = scale.to_vec();
        s.shift = shift.to_vec();
        batchnorm_forward(x, &mut s, Mode::Train).unwrap()
    };
    let (y, cache) = run(&x, &state.scale, &state.shift);
    let r = random(y.shape().dims(), &mut rng);
    let g = batchnorm_backward(cache.as_ref().unwrap(), &state, &r).unwrap();
    let nx = numeric(x.data(), |p| dot(&run(&with(&x, p), &state.scale, &state.shift).0, &r));
    let ns = numeric(&state.scale, |p| dot(&run(&x, p, &state.shift).0, &r));
    let nb = numeric(&state.shift, |p| dot(&run(&x, &state.scale, p).0, &r));
    assert_entrywise("bn x", g.x.data(), &nx, 1e-3);
    assert_entrywise("bn scale", &g.scale, &ns, 1e-3);
    assert_entrywise("bn shift", &g.shift, &nb, 1e-5);
}

pub fn relu_gradients_away_from_kink() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random([1, 2, 5, 5], &mut rng).map(|v| if v.abs() < 0.01 { 0.5 } else { v });
    let y = relu(&x);
    let r = random(y.shape().dims(), &mut rng);
    let g = relu_backward(&y, &r).unwrap();
    let n = numeric(x.data(), |p| dot(&relu(&with(&x, p)), &r));
    assert_entrywise("relu", g.data(), &n, 1e-5);
}

pub fn add_concat_split_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random([2, 2, 3, 3], &mut rng);
    let b = random([2, 3, 3, 3], &mut rng);
    let c = random([2, 3, 3, 3], &mut rng);
    let y = concat_channels(&a, &add(&b, &c).unwrap()).unwrap();
    let r = random(y.shape().dims(), &mut rng);
    let (ga, gbc) = split_channels(&r, 2).unwrap();
    let na = numeric(a.data(), |p| dot(&concat_channels(&with(&a, p), &add(&b, &c).unwrap()).unwrap(), &r));
    let nb = numeric(b.data(), |p| dot(&concat_channels(&a, &add(&with(&b, p), &c).unwrap()).unwrap(), &r));
    assert_entrywise("concat first", ga.data(), &na, 1e-5);
    assert_entrywise("add through concat", gbc.data(), &nb, 1e-5);
}

pub fn maxpool_gradients_with_separated_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut vals: Vec<f64> = (0..2 * 36).map(|i| i as f64 * 0.01).collect();
    vals.shuffle(&mut rng);
    let x = Tensor64::new([1, 2, 6, 6], vals).unwrap();
    let (y, idx) = maxpool2d_forward(&x);
    let r = random(y.shape().dims(), &mut rng);
    let g = maxpool2d_backward(&idx, &r).unwrap();
    let n = numeric(x.data(), |p| dot(&maxpool2d_forward(&with(&x, p)).0, &r));
    assert_entrywise("maxpool", g.data(), &n, 1e-5);
}

pub fn upsample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for f in [2, 8] {
        let x = random([1, 2, 3, 2], &mut rng);
        let y = bilinear_upsample(&x, f).unwrap();
        let r = random(y.shape().dims(), &mut rng);
        let g = bilinear_upsample_backward(&r, x.shape(), f).unwrap();
        let n = numeric(x.data(), |p| dot(&bilinear_upsample(&with(&x, p), f).unwrap(), &r));
        assert_entrywise("upsample", g.data(), &n, 1e-5);
    }
}

pub fn dropout_gradients_with_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random([1, 3, 4, 4], &mut rng);
    let fwd = |x: &Tensor64| dropout(x, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let (y, mask) = fwd(&x);
    let r = random(y.shape().dims(), &mut rng);
    let g = dropout_backward(mask.as_ref(), &r).unwrap();
    let n = numeric(x.data(), |p| dot(&fwd(&with(&x, p)).0, &r));
    assert_entrywise("dropout", g.data(), &n, 1e-5);
}

pub fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = random([1, 2, 2, 2], &mut rng).map(|v| 3.0 * v);
    let labels = LabelMap::new(1, 2, 2, vec![0, 1, 1, 0]).unwrap();
    let (_, g) = softmax_cross_entropy(&logits, &labels).unwrap();
    let n = numeric(logits.data(), |p| softmax_cross_entropy(&with(&logits, p), &labels).unwrap().0);
    for (a, n) in g.data().iter().zip(&n) {
        assert!((a - n).abs() < 1e-4, "analytic {a}, numeric {n}");
    }
}

pub fn patch_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let block = PatchBlock::<f64>::new(2, (2, 6), &mut rng);
    let x = random([1, 2, 8, 8], &mut rng);
    let (y, cache) = block.clone().forward_train(&x).unwrap();
    let r = random(y.shape().dims(), &mut rng);
    let (gx, ga, gb) = block.backward(&cache, &r).unwrap();
    let loss = |b: &PatchBlock<f64>, x: &Tensor64| dot(&b.clone().forward_train(x).unwrap().0, &r);

    let nx = numeric(x.data(), |p| loss(&block, &with(&x, p)));
    assert!(group_error(gx.data(), &nx) < 1e-3, "input: {}", group_error(gx.data(), &nx));

    type Get = fn(&mut PatchBlock<f64>) -> &mut [f64];
    let groups: [(&str, Get, &[f64]); 8] = [
        ("conv_a.w", |b| b.conv_a.conv.weight.data_mut(), &ga.w),
        ("conv_a.b", |b| &mut b.conv_a.conv.bias, &ga.b),
        ("conv_a.gamma", |b| &mut b.conv_a.bn.scale, &ga.scale),
        ("conv_a.beta", |b| &mut b.conv_a.bn.shift, &ga.shift),
        ("conv_b.w", |b| b.conv_b.conv.weight.data_mut(), &gb.w),
        ("conv_b.b", |b| &mut b.conv_b.conv.bias, &gb.b),
        ("conv_b.gamma", |b| &mut b.conv_b.bn.scale, &gb.scale),
        ("conv_b.beta", |b| &mut b.conv_b.bn.shift, &gb.shift),
    ];
    for (name, get, analytic) in groups {
        let mut probe = block.clone();
        let at = get(&mut probe).to_vec();
        let n = numeric(&at, |p| {
            get(&mut probe).copy_from_slice(p);
            loss(&probe, &x)
        });
        let err = group_error(analytic, &n);
        assert!(err < 1e-3, "{name}: relative error {err}");
    }
}

pub fn full_model_gradients() {
    let config = ModelConfig {
        stage_widths: [4, 4, 6, 8],
        decoder_width: 4,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut model = PNet64::new(config, &mut rng).unwrap();
    let x = random([1, 3, 32, 32], &mut rng);
    let labels = LabelMap::new(1, 32, 32, (0..1024).map(|i| ((i / 32 + i % 32) % 7 < 3) as u8).collect()).unwrap();
    let dropout_seed = 77;
    let (_, grads) = model.loss_and_grads(&x, &labels, &mut ChaCha8Rng::seed_from_u64(dropout_seed)).unwrap();

    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let mut worst = (0.0, String::new());
    for (gi, name) in names.iter().enumerate() {
        let at = model.named_params()[gi].1.data.to_vec();
        let n = numeric_with(MODEL_EPS, &at, |p| {
            model.named_params_mut()[gi].1.copy_from_slice(p);
            let (logits, _) = model.forward_train(&x, &mut ChaCha8Rng::seed_from_u64(dropout_seed)).unwrap();
            softmax_cross_entropy(&logits, &labels).unwrap().0
        });
        model.named_params_mut()[gi].1.copy_from_slice(&at);
        let err = group_error(&grads.groups[gi], &n);
        let tol = if name.starts_with("dec.classify") { 1e-3 } else { 1e-2 };
        assert!(err < tol, "{name}: relative error {err} (tolerance {tol})");
        if err > worst.0 {
            worst = (err, name.clone());
        }
    }
    println!("worst group {}: {:.2e}", worst.1, worst.0);
}
