//! Direct nested-loop convolution oracle and the exhaustive small-shape grid.

use pnet::ops::{conv2d_backward, conv2d_forward, ConvSpec};
use pnet::{Scalar, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random<T: Scalar>(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0)).unwrap()).collect();
    Tensor4::new(shape, data).unwrap()
}

/// Output size by counting valid window starts, or None when there are none.
pub fn oracle_out(size: usize, k: usize, s: usize, p: usize, d: usize) -> Option<usize> {
    let span = d * (k - 1) + 1;
    let padded = size + 2 * p;
    if padded < span {
        return None;
    }
    Some((0..).step_by(s).take_while(|&start| start + span <= padded).count())
}

pub struct Case {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    d: usize,
    p: usize,
}

pub fn tap(case: &Case, oy: usize, kk: usize) -> Option<usize> {
    let y = (oy * case.s + kk * case.d) as isize - case.p as isize;
    (y >= 0).then_some(y as usize)
}

/// Seven nested loops in f64.
pub fn oracle_forward(case: &Case, x: &[f64], wt: &[f64], b: &[f64], out_c: usize, oh: usize, ow: usize) -> Vec<f64> {
    let Case { n, c, h, w, k, .. } = *case;
    let mut out = vec![0.0; n * out_c * oh * ow];
    for ni in 0..n {
        for o in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (Some(y), Some(xx)) = (tap(case, oy, ky), tap(case, ox, kx)) else {
                                    continue;
                                };
                                if y < h && xx < w {
                                    acc += x[((ni * c + ci) * h + y) * w + xx] * wt[((o * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[((ni * out_c + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Adjoint of the oracle: returns (grad_x, grad_w, grad_b).
pub fn oracle_backward(
    case: &Case,
    x: &[f64],
    wt: &[f64],
    g: &[f64],
    out_c: usize,
    oh: usize,
    ow: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let Case { n, c, h, w, k, .. } = *case;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; out_c];
    for ni in 0..n {
        for o in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = g[((ni * out_c + o) * oh + oy) * ow + ox];
                    gb[o] += go;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (Some(y), Some(xx)) = (tap(case, oy, ky), tap(case, ox, kx)) else {
                                    continue;
                                };
                                if y < h && xx < w {
                                    let xi = ((ni * c + ci) * h + y) * w + xx;
                                    let wi = ((o * c + ci) * k + ky) * k + kx;
                                    gx[xi] += go * wt[wi];
                                    gw[wi] += go * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

pub fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.acc()).collect()
}

pub fn assert_close(what: &str, got: &[f64], want: &[f64], rel: f64, ctx: &str) {
    assert_eq!(got.len(), want.len(), "{what} length, {ctx}");
    for (i, (&a, &b)) in got.iter().zip(want).enumerate() {
        assert!(
            (a - b).abs() <= rel * b.abs().max(1.0),
            "{what}[{i}]: {a} vs oracle {b} ({ctx})"
        );
    }
}

pub fn conv_grid<T: Scalar>(rel: f64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let out_c = 2;
    let mut checked = 0;
    for n in 1..=2 {
        for c in 1..=2 {
            for h in 4..=9 {
                for w in 4..=9 {
                    for k in [1, 3, 5] {
                        for s in [1, 2] {
                            for d in [1, 2, 6] {
                                for p in 0..=6 {
                                    let case = Case { n, c, h, w, k, s, d, p };
                                    let ctx = format!("n{n} c{c} h{h} w{w} k{k} s{s} d{d} p{p}");
                                    let spec = ConvSpec::new(k, s, p, d);
                                    let x = random::<T>([n, c, h, w], &mut rng);
                                    let wt = random::<T>([out_c, c, k, k], &mut rng);
                                    let b: Vec<T> = (0..out_c).map(|_| T::from_f64(rng.random_range(-1.0..1.0)).unwrap()).collect();
                                    let result = conv2d_forward(&x, &wt, &b, &spec);
                                    let (Some(oh), Some(ow)) = (oracle_out(h, k, s, p, d), oracle_out(w, k, s, p, d)) else {
                                        assert!(result.is_err(), "expected empty-output error, {ctx}");
                                        continue;
                                    };
                                    let y = result.unwrap_or_else(|e| panic!("{e} ({ctx})"));
                                    assert_eq!(y.shape().dims(), [n, out_c, oh, ow], "{ctx}");
                                    let (xf, wf) = (to_f64(x.data()), to_f64(wt.data()));
                                    let want = oracle_forward(&case, &xf, &wf, &to_f64(&b), out_c, oh, ow);
                                    assert_close("forward", &to_f64(y.data()), &want, rel, &ctx);

                                    let g = random::<T>([n, out_c, oh, ow], &mut rng);
                                    let grads = conv2d_backward(&x, &wt, &spec, &g).unwrap();
                                    let (gx, gw, gb) = oracle_backward(&case, &xf, &wf, &to_f64(g.data()), out_c, oh, ow);
                                    assert_close("grad_x", &to_f64(grads.x.data()), &gx, rel, &ctx);
                                    assert_close("grad_w", &to_f64(grads.w.data()), &gw, rel, &ctx);
                                    assert_close("grad_b", &to_f64(&grads.b), &gb, rel, &ctx);
                                    checked += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    checked
}

