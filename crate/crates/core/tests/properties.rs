//! Property tests over random inputs.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::uniform;
use wavegan::config::RunConfig;
use wavegan::data::{apply_augment, AugmentKind, AugmentOp};
use wavegan::diagnostics::{band_energy_report, steg_probe, ImageEditor};
use wavegan::loss::{attr_classification_loss, attr_regression_loss, cycle_loss, AttributeDelta};
use wavegan::nn::{Generator, GeneratorConfig, SkipMode};
use wavegan::tensor::{conv2d, transposed_conv2d, ConvGeom};
use wavegan::wavelet::{haar_pool, haar_unpool, high_freq_reconstruct, low_freq_reconstruct};
use wavegan::{Graph, Result, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adds a seeded perturbation of `amp` to every pixel; stands in for a
/// generator in the probe properties.
struct Perturb {
    amp: f32,
}

impl ImageEditor for Perturb {
    fn num_attrs(&self) -> usize {
        1
    }

    fn edit_batch(&self, x: &Tensor<f32>, _: &[AttributeDelta]) -> Result<Tensor<f32>> {
        let d: Vec<f32> = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * 0.9 + self.amp * (((i * 7919) % 13) as f32 / 13.0 - 0.5))
            .collect();
        Tensor::new(x.shape(), d)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wavelet_round_trip_and_parseval(n in 1usize..3, c in 1usize..5, h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let shape = [n, c, 2 * h, 2 * w];
        let x64 = uniform::<f64>(&shape, -1.0, 1.0, &mut rng(seed));
        let b = haar_pool(&x64).unwrap();
        prop_assert!(haar_unpool(&b).unwrap().max_abs_diff(&x64).unwrap() < 1e-12);
        let e: f64 = b.energies().iter().sum();
        prop_assert!((e - x64.sum_sq()).abs() <= 1e-10 * x64.sum_sq().max(1.0));

        let x32 = x64.cast::<f32>();
        let b32 = haar_pool(&x32).unwrap();
        prop_assert!(haar_unpool(&b32).unwrap().max_abs_diff(&x32).unwrap() < 1e-5);
        let e32: f64 = b32.energies().iter().sum();
        prop_assert!((e32 - x32.sum_sq()).abs() <= 1e-4 * x32.sum_sq());
    }

    #[test]
    fn low_plus_high_recombines(h in 1usize..6, seed in any::<u64>()) {
        let x = uniform::<f64>(&[1, 3, 2 * h, 2 * h], -1.0, 1.0, &mut rng(seed));
        let b = haar_pool(&x).unwrap();
        let lo = low_freq_reconstruct(&b).unwrap();
        let hi = high_freq_reconstruct(&b).unwrap();
        let sum: Vec<f64> = lo.data().iter().zip(hi.data()).map(|(a, b)| a + b).collect();
        prop_assert!(Tensor::new(x.shape(), sum).unwrap().max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn conv_transposed_conv_adjoint(
        stride in 1usize..3,
        k in 1usize..5,
        pad in 0usize..2,
        groups in prop::sample::select(vec![1usize, 2]),
        extra in 0usize..4,
        seed in any::<u64>(),
    ) {
        prop_assume!(pad < k);
        let h = k + stride * (extra + 1) - 2 * pad;
        let (c, o) = (2 * groups, 3 * groups);
        let mut r = rng(seed);
        let x = uniform::<f64>(&[2, c, h, h + stride], -1.0, 1.0, &mut r);
        let wt = uniform::<f64>(&[o, c / groups, k, k], -1.0, 1.0, &mut r);
        let geom = ConvGeom::grouped(stride, pad, groups);
        let y = conv2d(&x, &wt, geom).unwrap();
        let v = uniform::<f64>(y.shape(), -1.0, 1.0, &mut r);
        // The transposed op reads the same weight tensor as its adjoint.
        let xt = transposed_conv2d(&v, &wt, geom).unwrap();
        prop_assert_eq!(xt.shape(), x.shape());
        let lhs = y.dot(&v).unwrap();
        let rhs = x.dot(&xt).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn sre_nonnegative_and_h_recombines(amp in 0.0f32..0.5, seed in any::<u64>()) {
        let x = uniform::<f32>(&[2, 3, 8, 8], -1.0, 1.0, &mut rng(seed));
        let r = steg_probe(&Perturb { amp }, &x).unwrap();
        prop_assert!(r.sre >= 0.0);
        prop_assert!(r.per_sample_sre.iter().all(|&s| s >= 0.0));
        for ((h, y), xb) in r.h.data().iter().zip(r.y_bar.data()).zip(r.x_bar.data()) {
            prop_assert!((xb + h - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn band_ratio_is_scale_invariant(scale in 0.01f32..20.0, seed in any::<u64>()) {
        let x = uniform::<f32>(&[1, 3, 16, 16], -1.0, 1.0, &mut rng(seed));
        let a = band_energy_report(&x, 2).unwrap().high_ratio();
        let b = band_energy_report(&x.map(|v| v * scale), 2).unwrap().high_ratio();
        prop_assert!((a - b).abs() < 1e-4);
    }

    #[test]
    fn augmentations_stay_in_range(kind in prop::sample::select(AugmentKind::NAMES.to_vec()), seed in any::<u64>()) {
        let x = uniform::<f32>(&[2, 3, 8, 8], -1.0, 1.0, &mut rng(seed));
        let op = AugmentOp { kind: AugmentKind::parse(kind).unwrap(), seed };
        let y = apply_augment(&op, &x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        if kind == "hflip" {
            prop_assert_eq!(apply_augment(&op, &y).unwrap(), x);
        }
    }

    #[test]
    fn regression_loss_ignores_feature_scale(c0 in 0.01f64..100.0, c1 in 0.01f64..100.0, alpha in 0.0f64..2.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let f: Vec<Tensor<f64>> = (0..3).map(|_| uniform::<f64>(&[2, 5], 0.1, 1.0, &mut r)).collect();
        let eval = |s0: f64, s1: f64| -> f64 {
            let mut g = Graph::new();
            let f0 = g.constant(f[0].map(|v| v * s0));
            let f1 = g.constant(f[1].map(|v| v * s1));
            let fa = g.constant(f[2].clone());
            let l = attr_regression_loss(&mut g, f0, f1, fa, alpha).unwrap();
            g.value(l).item()
        };
        let base = eval(1.0, 1.0);
        prop_assert!(base >= 0.0);
        prop_assert!((eval(c0, c1) - base).abs() < 1e-9);
    }

    #[test]
    fn classification_loss_ignores_unmasked(p in prop::collection::vec(-5.0f64..5.0, 6), q in -5.0f64..5.0) {
        let eval = |logits: &[f64]| -> f64 {
            let mut g = Graph::new();
            let l = g.constant(Tensor::from_f64(&[2, 3], logits).unwrap());
            let t = g.constant(Tensor::from_f64(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap());
            let m = g.constant(Tensor::from_f64(&[2, 3], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap());
            let v = attr_classification_loss(&mut g, l, t, m).unwrap();
            g.value(v).item()
        };
        let mut moved = p.clone();
        moved[1] = q;
        moved[4] = -q;
        let base = eval(&p);
        prop_assert!(base >= 0.0);
        prop_assert!((eval(&moved) - base).abs() < 1e-12);
    }

    #[test]
    fn cycle_loss_matches_scalar_loop(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = uniform::<f64>(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
        let b = uniform::<f64>(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let l = cycle_loss(&mut g, av, bv).unwrap();
        let mut oracle = 0.0;
        for i in 0..a.len() {
            oracle += (a.data()[i] - b.data()[i]).abs();
        }
        prop_assert!((g.value(l).item() - oracle / a.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn config_text_round_trip(seed in any::<u64>(), bs in 1usize..64, lr in 1e-5f64..1e-2, skip in prop::sample::select(vec!["high", "low", "all"])) {
        let mut cfg = RunConfig::default();
        cfg.set("seed", &seed.to_string()).unwrap();
        cfg.set("batch_size", &bs.to_string()).unwrap();
        cfg.set("lr_g", &lr.to_string()).unwrap();
        cfg.set("skip_band_mode", skip).unwrap();
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), cfg.to_text());
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn generator_preserves_extent(
        size in prop::sample::select(vec![8usize, 16, 24, 32]),
        skip in prop::sample::select(vec![SkipMode::HighFreq, SkipMode::LowFreq, SkipMode::AllFreq, SkipMode::Vanilla, SkipMode::Off]),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let g = Generator::<f32>::new(GeneratorConfig { width: 4, num_attrs: 2, skip, output_tanh: true }, &mut r).unwrap();
        let x = uniform::<f32>(&[1, 3, size, size], -1.0, 1.0, &mut r);
        let y = g.edit(&x, &[AttributeDelta::new(vec![1, -1], 0.5).unwrap()]).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.data().iter().all(|v| v.abs() <= 1.0));
    }
}
