//! Property tests for the transform, the bias score, attacks, and data
//! generation.

mod common;

use common::*;
use jafr::attacks::{pgd, AttackConfig};
use jafr::freqbias::{bias_low, bias_low_value, loss_freq, BiasConfig};
use jafr::nn::{Model, ModelSpec};
use jafr::spectral::{dft2, dft2_raw, magnitude_raw, SpectrumMap, MAG_EPS};
use jafr::tensor::Graph;
use proptest::prelude::*;

/// Bias config whose floor is small enough to leave strictly positive maps
/// untouched; the score's scale invariance is exact only in this limit.
fn floorless() -> BiasConfig {
    BiasConfig { eps_floor: 1e-300, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dft_is_linear(seed in 0u64..1_000_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x = uniform_vec(&mut r, 36, -1.0, 1.0);
        let y = uniform_vec(&mut r, 36, -1.0, 1.0);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (xr, xi) = dft2_raw(&x, 6, 6);
        let (yr, yi) = dft2_raw(&y, 6, 6);
        let (cr, ci) = dft2_raw(&combo, 6, 6);
        for k in 0..36 {
            prop_assert!((cr[k] - (a * xr[k] + b * yr[k])).abs() < 1e-10);
            prop_assert!((ci[k] - (a * xi[k] + b * yi[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn parseval_holds(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let x = uniform_vec(&mut r, 8 * 8, -1.0, 1.0);
        let (re, im) = dft2_raw(&x, 8, 8);
        let spectral_energy: f64 = re.iter().zip(&im).map(|(a, b)| a * a + b * b).sum();
        let signal_energy: f64 = x.iter().map(|v| v * v).sum();
        let want = 64.0 * signal_energy;
        prop_assert!((spectral_energy - want).abs() <= 1e-9 * want.abs().max(1e-12));
    }

    #[test]
    fn magnitudes_are_conjugate_symmetric(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let (h, w) = (6, 8);
        let x = uniform_vec(&mut r, h * w, 0.0, 1.0);
        let (re, im) = dft2_raw(&x, h, w);
        let m = magnitude_raw(&re, &im, 0.0);
        for i in 0..h {
            for j in 0..w {
                let mirror = m[((h - i) % h) * w + ((w - j) % w)];
                prop_assert!((m[i * w + j] - mirror).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bias_is_scale_invariant(seed in 0u64..1_000_000, scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let mags = uniform_vec(&mut r, 8 * 8, 0.05, 2.0);
        let scaled: Vec<f64> = mags.iter().map(|v| v * scale).collect();
        let cfg = floorless();
        let b1 = bias_low_value(&mags, 8, 8, &cfg);
        let b2 = bias_low_value(&scaled, 8, 8, &cfg);
        prop_assert!((b1 - b2).abs() <= 1e-9 * b1.abs());
    }

    #[test]
    fn row_mass_transfer_strictly_increases_bias(seed in 0u64..1_000_000) {
        // The 1-D law behind the score: on a single-row spectrum, moving
        // mass from the highest-frequency bin to the lowest strictly
        // increases the score.
        let mut r = rng(seed);
        let l = 16;
        let row = uniform_vec(&mut r, l, 0.2, 2.0);
        let t = r.random_range(0.01..row[l - 1].min(0.15));
        let mut moved = row.clone();
        moved[0] += t;
        moved[l - 1] -= t;
        let cfg = floorless();
        let before = bias_low_value(&row, 1, l, &cfg);
        let after = bias_low_value(&moved, 1, l, &cfg);
        prop_assert!(after > before, "transfer failed: {after} <= {before}");
    }

    #[test]
    fn freq_loss_gradient_is_finite_even_with_zero_bins(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let mut mags = uniform_vec(&mut r, 36, 0.0, 1.0);
        // Zero out a third of the bins.
        for k in 0..12 {
            let at = r.random_range(0..36);
            mags[at] = 0.0;
            let _ = k;
        }
        let g = Graph::new();
        let m = SpectrumMap { height: 6, width: 6, mags: g.var(mags, &[6, 6]) };
        let loss = loss_freq(&m, &BiasConfig::default());
        prop_assert!(loss.item().is_finite());
        let grad = &loss.backward(&[&m.mags], false)[0];
        prop_assert!(grad.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn adversarial_examples_respect_budget(seed in 0u64..1_000) {
        let model = Model::init(ModelSpec::mlp([1, 4, 4], 2, vec![6]), seed);
        let mut r = rng(seed ^ 0xAB);
        let images = uniform_vec(&mut r, 8 * 16, 0.0, 1.0);
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let cfg = AttackConfig {
            iters: 3,
            restarts: 2,
            seed,
            ..AttackConfig::eval_default()
        };
        let adv = pgd(&model, &images, &labels, &cfg);
        for (a, x) in adv.iter().zip(&images) {
            prop_assert!((a - x).abs() <= cfg.epsilon + 1e-12);
            prop_assert!((0.0..=1.0).contains(a));
        }
    }
}

#[test]
fn bias_of_dc_heavy_graph_map_exceeds_uniform() {
    let g = Graph::new();
    let cfg = BiasConfig::default();
    let uniform = SpectrumMap { height: 8, width: 8, mags: g.constant(vec![0.5; 64], &[8, 8]) };
    let mut heavy = vec![0.05; 64];
    heavy[0] = 3.0;
    for j in 1..8 {
        heavy[j] = 1.0;
        heavy[j * 8] = 1.0;
    }
    let dc = SpectrumMap { height: 8, width: 8, mags: g.constant(heavy, &[8, 8]) };
    assert!(bias_low(&dc, &cfg).item() > bias_low(&uniform, &cfg).item());
}

#[test]
fn forward_and_gradients_are_bit_stable_across_runs() {
    let run = || -> (Vec<f64>, Vec<f64>) {
        let g = Graph::new();
        let x = g.var(vec![0.3, 0.7, 1.1, 1.9, 0.2, 0.9], &[2, 3]);
        let w = g.var(vec![0.5, -0.25, 1.5, 0.75, -1.0, 0.125], &[3, 2]);
        let (re, im) = dft2(&x.matmul(&w));
        let m = jafr::spectral::magnitude_map(&re, &im, MAG_EPS);
        let loss = loss_freq(&m, &BiasConfig::default());
        let grads = loss.backward(&[&x, &w], false);
        (grads[0].data(), grads[1].data())
    };
    let (a1, a2) = run();
    let (b1, b2) = run();
    for (a, b) in a1.iter().zip(&b1).chain(a2.iter().zip(&b2)) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn blob_classes_are_linearly_separable() {
    let ds = jafr::data::synth_blobs(400, 4, 17);
    let acc = linear_probe_accuracy(&ds.images, &ds.labels, ds.n, ds.image_len(), 4, 30);
    assert!(acc >= 0.95, "linear probe reached only {acc}");
}

#[test]
fn texture_spectra_decay_like_natural_images() {
    // Low-frequency bins should dominate high-frequency ones by a wide
    // margin; that is the whole point of the texture generator.
    let ds = jafr::data::synth_textures(32, 1, 32, 32, 23);
    let refs: Vec<&[f64]> = (0..ds.n).map(|i| ds.image(i)).collect();
    let mean = jafr::spectral::mean_magnitude_spectrum(refs, 1, 32, 32, MAG_EPS);
    let low = mean[1] + mean[32]; // lowest non-DC bins
    let high = mean[16 * 32 + 16]; // Nyquist corner
    assert!(low > 10.0 * high, "low {low} vs high {high}");
}
