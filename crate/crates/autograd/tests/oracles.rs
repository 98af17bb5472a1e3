//! Forward oracles and finite-difference gradient checks for every op.

use afinet_autograd::gradcheck::{check_gradients, DEFAULT_STEP};
use afinet_autograd::ops::pool::{maxout_forward, maxpool2d_forward};
use afinet_autograd::{RowBoundary, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const INSTANCES: u64 = 10;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Six nested loops over (co, oy, ox, ci, ky, kx) with explicit padding rules.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = *x.shape() else { panic!() };
    let [co, _, kh, kw] = *k.shape() else {
        panic!()
    };
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Tensor::zeros(&[n, co, h, w]);
    for b in 0..n {
        for o in 0..co {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as isize + ky as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let ix = (ox as isize + kx as isize - pw as isize)
                                    .rem_euclid(w as isize);
                                acc += x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((o * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.data_mut()[((b * co + o) * h + oy) * w + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (kh, kw) in [(3, 3), (4, 4), (5, 5), (1, 3)] {
        let x = random(&mut rng, &[1, 2, 5, 5]);
        let k = random(&mut rng, &[3, 2, kh, kw]);
        let tape = Tape::new();
        let y = tape
            .constant(x.clone())
            .conv2d(tape.constant(k.clone()), None, 1)
            .unwrap()
            .value();
        let expected = naive_conv(&x, &k);
        assert!(
            y.max_abs_diff(&expected).unwrap() < 1e-12,
            "kernel {kh}x{kw}"
        );
    }
}

#[test]
fn maxpool_matches_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[1, 1, 4, 4]);
    let (y, _) = maxpool2d_forward(&x, 2).unwrap();
    for oy in 0..2 {
        for ox in 0..2 {
            let mut m = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    m = m.max(x.data()[(2 * oy + dy) * 4 + 2 * ox + dx]);
                }
            }
            assert_eq!(y.data()[oy * 2 + ox], m);
        }
    }
}

#[test]
fn maxout_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 4, 3, 3]);
    let (y, _) = maxout_forward(&x, 2).unwrap();
    for b in 0..2 {
        for c in 0..2 {
            for p in 0..9 {
                let a = x.data()[(b * 4 + 2 * c) * 9 + p];
                let z = x.data()[(b * 4 + 2 * c + 1) * 9 + p];
                assert_eq!(y.data()[(b * 2 + c) * 9 + p], a.max(z));
            }
        }
    }
}

fn assert_grad_ok(name: &str, errs: &[f64]) {
    for (i, e) in errs.iter().enumerate() {
        assert!(*e < TOL, "{name}: input {i} relative error {e:e}");
    }
}

#[test]
fn gradients_conv2d() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let k = if seed % 2 == 0 { 3 } else { 4 };
        let inputs = [
            random(&mut rng, &[2, 2, 4, 5]),
            random(&mut rng, &[3, 2, k, k]),
            random(&mut rng, &[3]),
        ];
        let r = random(&mut rng, &[2, 3, 4, 5]);
        let errs = check_gradients(
            |_, v| v[0].conv2d(v[1], Some(v[2]), 1)?.weighted_sum(&r),
            &inputs,
            DEFAULT_STEP,
        )
        .unwrap();
        assert_grad_ok("conv2d", &errs);
    }
}

#[test]
fn gradients_maxpool_and_maxout() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = random(&mut rng, &[1, 4, 4, 4]);
        let r = random(&mut rng, &[1, 2, 2, 2]);
        let errs = check_gradients(
            |_, v| v[0].maxout(2)?.maxpool2d(2)?.weighted_sum(&r),
            &[x],
            DEFAULT_STEP,
        )
        .unwrap();
        assert_grad_ok("maxpool+maxout", &errs);
    }
}

/// Coordinates kept away from the integer lattice where bilinear
/// interpolation is not differentiable.
fn off_lattice(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let base = rng.gen_range(lo..hi).floor();
        base + rng.gen_range(0.1..0.9)
    })
}

#[test]
fn gradients_bilinear_sample() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = random(&mut rng, &[1, 2, 4, 5]);
        let mut coords = off_lattice(&mut rng, &[1, 2, 3, 3], 0.0, 2.9);
        for v in &mut coords.data_mut()[9..] {
            *v += rng.gen_range(-6.0..6.0f64).round();
        }
        let r = random(&mut rng, &[1, 2, 3, 3]);
        let boundary = if seed % 2 == 0 {
            RowBoundary::Clamp
        } else {
            RowBoundary::Zero
        };
        let errs = check_gradients(
            |_, v| v[0].bilinear_sample(v[1], boundary)?.weighted_sum(&r),
            &[x, coords],
            DEFAULT_STEP,
        )
        .unwrap();
        assert_grad_ok("bilinear_sample", &errs);
    }
}

#[test]
fn gradients_deform_gather() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let x = random(&mut rng, &[1, 2, 4, 4]);
        let off = off_lattice(&mut rng, &[1, 18, 4, 4], -1.0, 1.0);
        let r = random(&mut rng, &[1, 18, 4, 4]);
        let errs = check_gradients(
            |_, v| v[0].deform_gather(v[1], 3, 3)?.weighted_sum(&r),
            &[x, off],
            DEFAULT_STEP,
        )
        .unwrap();
        assert_grad_ok("deform_gather", &errs);
    }
}

#[test]
fn gradients_dense_ops() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let inputs = [
            random(&mut rng, &[3, 4]),
            random(&mut rng, &[4, 5]),
            random(&mut rng, &[5]),
        ];
        let r = random(&mut rng, &[3, 5]);
        let errs = check_gradients(
            |_, v| v[0].linear(v[1], v[2])?.weighted_sum(&r),
            &inputs,
            DEFAULT_STEP,
        )
        .unwrap();
        assert_grad_ok("linear", &errs);

        let x = random(&mut rng, &[3, 6]);
        let errs = check_gradients(
            |_, v| v[0].softmax()?.weighted_sum(&random_like(seed, &[3, 6])),
            &[x.clone()],
            DEFAULT_STEP,
        )
        .unwrap();
        assert_grad_ok("softmax", &errs);

        let errs = check_gradients(
            |_, v| {
                v[0].l2_normalize(1e-12)?
                    .weighted_sum(&random_like(seed + 1, &[3, 6]))
            },
            &[x.clone()],
            DEFAULT_STEP,
        )
        .unwrap();
        assert_grad_ok("l2_normalize", &errs);

        let labels = [0usize, 5, 2];
        let errs = check_gradients(|_, v| v[0].cross_entropy(&labels), &[x], DEFAULT_STEP).unwrap();
        assert_grad_ok("cross_entropy", &errs);

        let y = random(&mut rng, &[2, 3, 2, 2]);
        let errs = check_gradients(
            |_, v| {
                v[0].global_avg_pool()?
                    .weighted_sum(&random_like(seed, &[2, 3]))
            },
            &[y],
            DEFAULT_STEP,
        )
        .unwrap();
        assert_grad_ok("global_avg_pool", &errs);
    }
}

fn random_like(seed: u64, shape: &[usize]) -> Tensor<f64> {
    random(&mut ChaCha8Rng::seed_from_u64(9_000 + seed), shape)
}

#[test]
fn softmax_rows_sum_to_one_and_l2_rows_are_unit() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[8, 25]).map(|v| v * 20.0);
    let tape = Tape::new();
    let v = tape.constant(x);
    let s = v.softmax().unwrap().value();
    for row in s.data().chunks(25) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    let l = v.l2_normalize(1e-12).unwrap().value();
    for row in l.data().chunks(25) {
        assert!((row.iter().map(|a| a * a).sum::<f64>().sqrt() - 1.0).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv2d_commutes_with_circular_column_shift(seed in 0u64..10_000, shift in -7isize..7, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[1, 2, 5, 8]).cast::<f32>();
        let kern = random(&mut rng, &[2, 2, k, k]).cast::<f32>();
        let tape = Tape::new();
        let kv = tape.constant(kern);
        let a = tape.constant(x.roll_last(shift)).conv2d(kv, None, 1).unwrap().value();
        let b = tape.constant(x).conv2d(kv, None, 1).unwrap().value().roll_last(shift);
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);
    }

    #[test]
    fn pooling_routes_gradient_to_argmax_only(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[1, 4, 4, 6]);
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = xv.maxout(2).unwrap().maxpool2d(2).unwrap();
        let r = random(&mut rng, &y.shape());
        let g = tape.backward(y.weighted_sum(&r).unwrap()).unwrap();
        let gx = g.get(xv).unwrap();
        let nonzero = gx.data().iter().filter(|v| **v != 0.0).count();
        prop_assert_eq!(nonzero, r.len());
        prop_assert!((gx.sum() - r.sum()).abs() < 1e-12);
    }
}
