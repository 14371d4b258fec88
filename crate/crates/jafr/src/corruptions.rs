//! Parametric common corruptions at five severities.
//!
//! Ten kinds are implemented: four noise families (gaussian, shot, impulse,
//! speckle), three photometric shifts (contrast, brightness, saturate), and
//! three structural ones (pixelate, gaussian blur, fog). Severity tables are
//! plain constants on [`CorruptionTables`]; they were picked so that expected
//! distortion grows visibly with severity on 32×32 inputs and can be
//! overridden wholesale for fidelity work. Outputs are always clipped to
//! [0,1] as the final step, and a given (seed, kind, severity) triple yields
//! the same corruption every time.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::freqbias::{bias_low_value, BiasConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    SpeckleNoise,
    Contrast,
    Brightness,
    Saturate,
    Pixelate,
    GaussianBlur,
    Fog,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 10] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::SpeckleNoise,
        CorruptionKind::Contrast,
        CorruptionKind::Brightness,
        CorruptionKind::Saturate,
        CorruptionKind::Pixelate,
        CorruptionKind::GaussianBlur,
        CorruptionKind::Fog,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian-noise",
            CorruptionKind::ShotNoise => "shot-noise",
            CorruptionKind::ImpulseNoise => "impulse-noise",
            CorruptionKind::SpeckleNoise => "speckle-noise",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Saturate => "saturate",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::GaussianBlur => "gaussian-blur",
            CorruptionKind::Fog => "fog",
        }
    }

    pub fn parse(s: &str) -> Option<CorruptionKind> {
        CorruptionKind::ALL.iter().copied().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// 1..=5.
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8, seed: u64) -> Self {
        assert!((1..=5).contains(&severity), "severity must be in 1..=5, got {severity}");
        CorruptionSpec { kind, severity, seed }
    }
}

/// Per-kind severity parameters, indexable by `severity - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionTables {
    pub gaussian_sigma: [f64; 5],
    /// Poisson rate scale; smaller is noisier.
    pub shot_rate: [f64; 5],
    /// Salt-and-pepper flip probability.
    pub impulse_p: [f64; 5],
    pub speckle_sigma: [f64; 5],
    /// Multiplier toward the per-channel mean (< 1 reduces contrast).
    pub contrast_scale: [f64; 5],
    /// Additive brightness shift.
    pub brightness_delta: [f64; 5],
    /// Per-channel stretch about 0.5 (> 1 saturates).
    pub saturate_scale: [f64; 5],
    pub pixelate_block: [usize; 5],
    pub blur_sigma: [f64; 5],
    /// Fog plasma blend amount.
    pub fog_amount: [f64; 5],
}

impl Default for CorruptionTables {
    fn default() -> Self {
        CorruptionTables {
            gaussian_sigma: [0.04, 0.06, 0.08, 0.09, 0.10],
            shot_rate: [60.0, 25.0, 12.0, 5.0, 3.0],
            impulse_p: [0.01, 0.02, 0.03, 0.05, 0.07],
            speckle_sigma: [0.06, 0.10, 0.15, 0.20, 0.28],
            contrast_scale: [0.75, 0.5, 0.4, 0.3, 0.15],
            brightness_delta: [0.05, 0.10, 0.15, 0.20, 0.30],
            saturate_scale: [1.2, 1.5, 1.9, 2.4, 3.0],
            pixelate_block: [2, 2, 4, 4, 8],
            blur_sigma: [0.4, 0.6, 0.8, 1.0, 1.5],
            fog_amount: [0.15, 0.25, 0.35, 0.45, 0.60],
        }
    }
}

/// Applies `spec` to a c×h×w image in [0,1]. The clip to [0,1] is always the
/// last step.
pub fn corrupt(
    image: &[f64],
    c: usize,
    h: usize,
    w: usize,
    spec: &CorruptionSpec,
    tables: &CorruptionTables,
) -> Vec<f64> {
    assert_eq!(image.len(), c * h * w, "corrupt: bad image dimensions");
    assert!((1..=5).contains(&spec.severity), "severity must be in 1..=5");
    let s = (spec.severity - 1) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let noise = Normal::new(0.0, tables.gaussian_sigma[s]).expect("valid std");
            image.iter().map(|&p| p + noise.sample(&mut rng)).collect()
        }
        CorruptionKind::ShotNoise => {
            let rate = tables.shot_rate[s];
            image
                .iter()
                .map(|&p| {
                    let lambda = p * rate;
                    if lambda <= 0.0 {
                        0.0
                    } else {
                        Poisson::new(lambda).expect("positive rate").sample(&mut rng) / rate
                    }
                })
                .collect()
        }
        CorruptionKind::ImpulseNoise => {
            let p_flip = tables.impulse_p[s];
            image
                .iter()
                .map(|&p| {
                    let r = rng.random_range(0.0..1.0);
                    if r < p_flip / 2.0 {
                        0.0
                    } else if r < p_flip {
                        1.0
                    } else {
                        p
                    }
                })
                .collect()
        }
        CorruptionKind::SpeckleNoise => {
            let noise = Normal::new(0.0, tables.speckle_sigma[s]).expect("valid std");
            image.iter().map(|&p| p + p * noise.sample(&mut rng)).collect()
        }
        CorruptionKind::Contrast => {
            let scale = tables.contrast_scale[s];
            let mut out = Vec::with_capacity(image.len());
            for ch in image.chunks(h * w) {
                let mean = ch.iter().sum::<f64>() / (h * w) as f64;
                out.extend(ch.iter().map(|&p| (p - mean) * scale + mean));
            }
            out
        }
        CorruptionKind::Brightness => {
            let b = tables.brightness_delta[s];
            image.iter().map(|&p| p + b).collect()
        }
        CorruptionKind::Saturate => {
            let scale = tables.saturate_scale[s];
            image.iter().map(|&p| (p - 0.5) * scale + 0.5).collect()
        }
        CorruptionKind::Pixelate => {
            let block = tables.pixelate_block[s];
            let mut out = Vec::with_capacity(image.len());
            for ch in image.chunks(h * w) {
                out.extend(pixelate_plane(ch, h, w, block));
            }
            out
        }
        CorruptionKind::GaussianBlur => {
            let sigma = tables.blur_sigma[s];
            let mut out = Vec::with_capacity(image.len());
            for ch in image.chunks(h * w) {
                out.extend(gaussian_blur_plane(ch, h, w, sigma));
            }
            out
        }
        CorruptionKind::Fog => {
            let amount = tables.fog_amount[s];
            let plasma = plasma_fractal(h, w, &mut rng);
            let mut out = Vec::with_capacity(image.len());
            for ch in image.chunks(h * w) {
                out.extend(ch.iter().zip(&plasma).map(|(&p, &f)| p + amount * f));
            }
            out
        }
    };
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Block-average downsample then nearest-neighbor upsample.
fn pixelate_plane(plane: &[f64], h: usize, w: usize, block: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    let mut i = 0;
    while i < h {
        let bh = block.min(h - i);
        let mut j = 0;
        while j < w {
            let bw = block.min(w - j);
            let mut sum = 0.0;
            for di in 0..bh {
                for dj in 0..bw {
                    sum += plane[(i + di) * w + (j + dj)];
                }
            }
            let avg = sum / (bh * bw) as f64;
            for di in 0..bh {
                for dj in 0..bw {
                    out[(i + di) * w + (j + dj)] = avg;
                }
            }
            j += block;
        }
        i += block;
    }
    out
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "blur sigma must be positive");
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();

    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += k * plane[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += k * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Diamond-square plasma on a (2^k + 1) grid, normalized to [0,1] and cropped
/// to h×w. The wibble halves each level, which concentrates the result's
/// energy at low spatial frequencies.
fn plasma_fractal(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let need = h.max(w).max(2) - 1;
    let size = need.next_power_of_two() + 1;
    let mut grid = vec![0.0f64; size * size];
    let mut step = size - 1;
    let mut amp = 1.0;
    for corner in [0, step] {
        for corner2 in [0, step] {
            grid[corner * size + corner2] = rng.random_range(-1.0..1.0);
        }
    }
    while step > 1 {
        let half = step / 2;
        // Diamond step.
        let mut i = half;
        while i < size {
            let mut j = half;
            while j < size {
                let avg = (grid[(i - half) * size + (j - half)]
                    + grid[(i - half) * size + (j + half)]
                    + grid[(i + half) * size + (j - half)]
                    + grid[(i + half) * size + (j + half)])
                    / 4.0;
                grid[i * size + j] = avg + amp * rng.random_range(-1.0..1.0);
                j += step;
            }
            i += step;
        }
        // Square step.
        let mut i = 0;
        while i < size {
            let mut j = if (i / half) % 2 == 0 { half } else { 0 };
            while j < size {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                if i >= half {
                    sum += grid[(i - half) * size + j];
                    cnt += 1.0;
                }
                if i + half < size {
                    sum += grid[(i + half) * size + j];
                    cnt += 1.0;
                }
                if j >= half {
                    sum += grid[i * size + (j - half)];
                    cnt += 1.0;
                }
                if j + half < size {
                    sum += grid[i * size + (j + half)];
                    cnt += 1.0;
                }
                grid[i * size + j] = sum / cnt + amp * rng.random_range(-1.0..1.0);
                j += step;
            }
            i += half;
        }
        step = half;
        amp /= 2.0;
    }
    let (lo, hi) = grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = (hi - lo).max(1e-12);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push((grid[y * size + x] - lo) / span);
        }
    }
    out
}

/// `B_low` of the mean delta spectrum `E[|F(C(x) - x)|]` for one corruption
/// kind, averaged across the given images and all five severities.
pub fn corruption_bias(
    images: &[&[f64]],
    c: usize,
    h: usize,
    w: usize,
    kind: CorruptionKind,
    tables: &CorruptionTables,
    cfg: &BiasConfig,
    seed: u64,
) -> f64 {
    assert!(!images.is_empty(), "corruption_bias: empty image set");
    let mut mean = vec![0.0; h * w];
    let mut count = 0usize;
    for (i, img) in images.iter().enumerate() {
        for severity in 1..=5u8 {
            let spec = CorruptionSpec::new(kind, severity, mix_seed(seed, i as u64, severity));
            let corrupted = corrupt(img, c, h, w, &spec, tables);
            let delta: Vec<f64> = corrupted.iter().zip(img.iter()).map(|(a, b)| a - b).collect();
            let spec_map =
                crate::spectral::channel_mean_spectrum_raw(&delta, c, h, w, crate::spectral::MAG_EPS);
            for (m, v) in mean.iter_mut().zip(spec_map) {
                *m += v;
            }
            count += 1;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    bias_low_value(&mean, h, w, cfg)
}

/// Derived per-image, per-severity corruption seed.
pub fn mix_seed(base: u64, image_index: u64, severity: u8) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(image_index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(severity as u64)
}
