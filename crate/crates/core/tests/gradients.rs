use dsfcn::grad::check::check_gradients;
use dsfcn::grad::{conv2d_forward, conv2d_transpose_forward, Element, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so a finite difference never crosses the ReLU kink.
fn off_kink(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(dims, v).unwrap()
}

fn shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(2..=8), rng.random_range(2..=8)]
}

struct Precision {
    h: f64,
    floor: f64,
    tol: f64,
}

const F32: Precision = Precision { h: 1e-3, floor: 1e-3, tol: 1e-2 };
const F64: Precision = Precision { h: 1e-6, floor: 1e-8, tol: 1e-5 };

/// Runs one primitive through the checker; `f` maps the leaves to a tensor
/// that is reduced with fixed random weights.
fn check<T: Element>(
    p: &Precision,
    inputs: &[Tensor<f64>],
    reduce: &Tensor<f64>,
    f: impl Fn(&mut Graph<T>, &[dsfcn::grad::Var]) -> dsfcn::grad::Result<dsfcn::grad::Var>,
) -> f64 {
    let inputs: Vec<Tensor<T>> = inputs.iter().map(|t| t.cast()).collect();
    let reduce: Tensor<T> = reduce.cast();
    let r = check_gradients(&inputs, p.h, p.floor, |g, v| {
        let y = f(g, v)?;
        g.weighted_sum(y, &reduce)
    })
    .unwrap();
    r.max_error
}

fn all_primitives<T: Element>(p: &Precision, label: &str) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = Vec::new();
    for trial in 0..5 {
        let [n, c, h, w] = shape(&mut rng);
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let ks = rng.random_range(1..=3).min(h).min(w);
        let pad = rng.random_range(0..=ks / 2);

        let x = random(&mut rng, &[n, c, h, w]);
        let wt = random(&mut rng, &[k, c, ks, ks]);
        let b = random(&mut rng, &[k]);
        let oh = (h + 2 * pad - ks) / stride + 1;
        let ow = (w + 2 * pad - ks) / stride + 1;
        let e = check::<T>(p, &[x.clone(), wt, b.clone()], &random(&mut rng, &[n, k, oh, ow]), |g, v| {
            g.conv2d(v[0], v[1], v[2], stride, pad)
        });
        worst.push(("conv2d", trial, e));

        let wt_t = random(&mut rng, &[c, k, ks, ks]);
        let th = (h - 1) * stride + ks;
        let tw = (w - 1) * stride + ks;
        let tpad = pad.min((th.min(tw) - 1) / 2);
        let reduce = random(&mut rng, &[n, k, th - 2 * tpad, tw - 2 * tpad]);
        let e = check::<T>(p, &[x.clone(), wt_t, b], &reduce, |g, v| {
            g.conv2d_transpose(v[0], v[1], v[2], stride, tpad)
        });
        worst.push(("conv2d_transpose", trial, e));

        let e = check::<T>(p, &[off_kink(&mut rng, &[n, c, h, w])], &random(&mut rng, &[n, c, h, w]), |g, v| {
            g.relu(v[0])
        });
        worst.push(("relu", trial, e));

        let y = random(&mut rng, &[n, c, h, w]);
        let e = check::<T>(p, &[x.clone(), y], &random(&mut rng, &[n, c, h, w]), |g, v| g.add(v[0], v[1]));
        worst.push(("add", trial, e));

        let (rh, rw) = (rng.random_range(1..=10), rng.random_range(1..=10));
        let e = check::<T>(p, std::slice::from_ref(&x), &random(&mut rng, &[n, c, rh, rw]), |g, v| {
            g.resize_bilinear(v[0], rh, rw)
        });
        worst.push(("resize_bilinear", trial, e));

        let e = check::<T>(p, std::slice::from_ref(&x), &random(&mut rng, &[1]), |g, v| g.sum(v[0]));
        worst.push(("sum", trial, e));

        let classes = c.max(2);
        let logits = random(&mut rng, &[n, classes, h, w]).cast::<f64>();
        let targets: Vec<usize> = (0..n * h * w).map(|_| rng.random_range(0..classes)).collect();
        let e = check::<T>(p, std::slice::from_ref(&logits), &Tensor::scalar(1.0), |g, v| {
            g.softmax_cross_entropy(v[0], &targets)
        });
        worst.push(("softmax_cross_entropy", trial, e));
    }
    for (op, trial, e) in &worst {
        assert!(*e <= p.tol, "{label} {op} trial {trial}: error {e:e} > {:e}", p.tol);
    }
}

#[test]
fn finite_differences_agree_in_f32() {
    all_primitives::<f32>(&F32, "f32");
}

#[test]
fn finite_differences_agree_in_f64() {
    all_primitives::<f64>(&F64, "f64");
}

/// Direct quadruple-loop correlation used as an independent oracle.
fn brute_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = <[usize; 4]>::try_from(x.dims()).unwrap();
    let [k, _, kh, kw] = <[usize; 4]>::try_from(w.dims()).unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * k * oh * ow];
    for b in 0..n {
        for o in 0..k {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xo * stride + dx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += x.at4(b, ci, iy as usize, ix as usize) * w.at4(o, ci, dy, dx);
                                }
                            }
                        }
                    }
                    out[((b * k + o) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[1, 2, 4, 4]);
    let w = random(&mut rng, &[1, 2, 3, 3]);
    let got = conv2d_forward(&x.cast::<f32>(), &w.cast::<f32>(), None, 1, 1).unwrap();
    assert_eq!(got.dims(), &[1, 1, 4, 4]);
    for (a, b) in got.values().iter().zip(brute_conv(&x, &w, 1, 1)) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
    for (stride, pad) in [(2, 0), (2, 1), (3, 2)] {
        let x = random(&mut rng, &[2, 3, 7, 6]);
        let w = random(&mut rng, &[4, 3, 3, 2]);
        let got = conv2d_forward(&x, &w, None, stride, pad).unwrap();
        for (a, b) in got.values().iter().zip(brute_conv(&x, &w, stride, pad)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn transpose_of_ones_tiles_the_kernel() {
    let x = Tensor::<f32>::full(&[1, 1, 2, 2], 1.0);
    let w = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let out = conv2d_transpose_forward(&x, &w, None, 2, 0).unwrap();
    assert_eq!(out.dims(), &[1, 1, 4, 4]);
    let expect = [1., 2., 1., 2., 3., 4., 3., 4., 1., 2., 1., 2., 3., 4., 3., 4.];
    assert_eq!(out.values(), &expect);
}

#[test]
fn transpose_is_the_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (n, c, k) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
        let ks = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=ks / 2);
        // Pick the conv output size first so the transpose lands back on the input extent.
        let (oh, ow) = (rng.random_range(2..=5), rng.random_range(2..=5));
        let (h, w) = ((oh - 1) * stride + ks - 2 * pad, (ow - 1) * stride + ks - 2 * pad);
        let x = random(&mut rng, &[n, c, h, w]).cast::<f32>();
        let wt = random(&mut rng, &[k, c, ks, ks]).cast::<f32>();
        let y = conv2d_forward(&x, &wt, None, stride, pad).unwrap();
        assert_eq!(y.dims(), &[n, k, oh, ow]);
        let probe = random(&mut rng, y.dims()).cast::<f32>();
        // conv weights [K,C,..] double as transpose weights from K back to C channels.
        let back = conv2d_transpose_forward(&probe, &wt, None, stride, pad).unwrap();
        assert_eq!(back.dims(), x.dims());
        let dot = |a: &Tensor<f32>, b: &Tensor<f32>| -> f64 {
            a.values().iter().zip(b.values()).map(|(p, q)| (p * q) as f64).sum()
        };
        let (lhs, rhs) = (dot(&y, &probe), dot(&x, &back));
        assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn cross_entropy_matches_per_pixel_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = random(&mut rng, &[2, 3, 3, 4]);
    let targets: Vec<usize> = (0..24).map(|i| i % 3).collect();
    let mut g = Graph::<f64>::new();
    let v = g.input(logits.clone());
    let loss = g.softmax_cross_entropy(v, &targets).unwrap();
    let got = g.value(loss).values()[0];

    let mut total = 0.0;
    for b in 0..2 {
        for y in 0..3 {
            for x in 0..4 {
                let z: Vec<f64> = (0..3).map(|k| logits.at4(b, k, y, x)).collect();
                let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
                total += lse - z[targets[(b * 3 + y) * 4 + x]];
            }
        }
    }
    assert!((got - total / 24.0).abs() < 1e-6);
}

#[test]
fn uniform_logits_cost_log_k() {
    let mut g = Graph::<f64>::new();
    let v = g.input(Tensor::zeros(&[1, 3, 2, 2]));
    let loss = g.softmax_cross_entropy(v, &[0, 1, 2, 0]).unwrap();
    assert!((g.value(loss).values()[0] - 3f64.ln()).abs() < 1e-12);
}
