//! Tensor kernels against naive loop implementations.

use dstsa::autodiff::{ConvGeometry, Tape};
use dstsa::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, geo: ConvGeometry) -> Tensor<f64> {
    let (n, t, v) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let cout_g = cout / geo.groups;
    let tout = (t + 2 * geo.padding - geo.dilation * (k - 1) - 1) / geo.stride + 1;
    let mut out = Tensor::zeros(&[n, cout, tout, v]);
    for b in 0..n {
        for o in 0..cout {
            let g = o / cout_g;
            for to in 0..tout {
                for j in 0..v {
                    let mut acc = 0.0;
                    for i in 0..cin_g {
                        for tap in 0..k {
                            let pos = (to * geo.stride + tap * geo.dilation) as isize - geo.padding as isize;
                            if pos >= 0 && (pos as usize) < t {
                                acc += w.at(&[o, i, tap]) * x.at(&[b, g * cin_g + i, pos as usize, j]);
                            }
                        }
                    }
                    out.set(&[b, o, to, j], acc);
                }
            }
        }
    }
    out
}

fn naive_max_pool(x: &Tensor<f64>, window: usize, stride: usize, padding: usize) -> Tensor<f64> {
    let (n, c, t, v) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let tout = (t + 2 * padding - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, tout, v]);
    for b in 0..n {
        for ch in 0..c {
            for to in 0..tout {
                for j in 0..v {
                    let best = (0..window)
                        .filter_map(|tap| {
                            let pos = (to * stride + tap) as isize - padding as isize;
                            (pos >= 0 && (pos as usize) < t).then(|| x.at(&[b, ch, pos as usize, j]))
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    out.set(&[b, ch, to, j], best);
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn temporal_conv_matches_loops(
        n in 1usize..3,
        groups in 1usize..4,
        cin_g in 1usize..3,
        cout_g in 1usize..3,
        t in 4usize..12,
        v in 1usize..4,
        k in 1usize..4,
        dilation in 1usize..4,
        stride in 1usize..3,
        padding in 0usize..4,
        seed in any::<u64>(),
    ) {
        let geo = ConvGeometry { stride, dilation, padding, groups };
        prop_assume!(t + 2 * padding > dilation * (k - 1));
        let x = random(&[n, groups * cin_g, t, v], seed);
        let w = random(&[groups * cout_g, cin_g, k], seed ^ 1);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let y = tape.conv_temporal(xv, wv, geo).unwrap();
        let expected = naive_conv(&x, &w, geo);
        prop_assert_eq!(tape.shape(y), expected.shape());
        prop_assert!(tape.value(y).max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn max_pool_matches_loops(
        t in 3usize..12,
        window in 1usize..4,
        stride in 1usize..3,
        padding in 0usize..2,
        seed in any::<u64>(),
    ) {
        prop_assume!(padding < window && t + 2 * padding >= window);
        let x = random(&[2, 3, t, 4], seed);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.max_pool_temporal(xv, window, stride, padding).unwrap();
        let expected = naive_max_pool(&x, window, stride, padding);
        prop_assert_eq!(tape.shape(y), expected.shape());
        prop_assert!(tape.value(y).max_abs_diff(&expected) == 0.0);
    }

    #[test]
    fn batched_matmul_matches_loops(b in 1usize..3, m in 1usize..5, k in 1usize..6, n in 1usize..5, seed in any::<u64>()) {
        let a = random(&[b, m, k], seed);
        let c = random(&[k, n], seed ^ 7);
        let mut tape = Tape::new();
        let (av, cv) = (tape.constant(a.clone()), tape.constant(c.clone()));
        let y = tape.matmul(av, cv).unwrap();
        for bi in 0..b {
            for i in 0..m {
                for j in 0..n {
                    let want: f64 = (0..k).map(|l| a.at(&[bi, i, l]) * c.at(&[l, j])).sum();
                    prop_assert!((tape.value(y).at(&[bi, i, j]) - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn strided_conv_output_length_is_ceiling_of_half() {
    for t in 2..40 {
        let geo = ConvGeometry {
            stride: 2,
            dilation: 1,
            padding: 1,
            groups: 1,
        };
        assert_eq!(geo.output_len(t, 3), Some(t.div_ceil(2)), "t = {t}");
    }
}
