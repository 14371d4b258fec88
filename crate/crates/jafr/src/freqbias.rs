//! The low-frequency bias score of a magnitude spectrum and the loss that
//! maximizes it.
//!
//! For a 1-D spectrum of length `l` the score is `Π_i M_i^{α_i}` with
//! exponents that fall evenly from `α_1 = 1` to `α_l = -1`. Because the
//! exponents are anti-symmetric (`α_i = -α_{l-i+1}`, so `Σα = 0`), the score
//! measures the *ratio* of low- to high-frequency mass and is invariant to
//! scaling the whole spectrum. The 2-D score `B_low` sums the per-column
//! products (row exponents) and the per-row products (column exponents):
//!
//! ```text
//! B_low(M) = Σ_j Π_i (M[i,j])^{α_i}  +  Σ_i Π_j (M[i,j])^{α_j}
//! ```
//!
//! Products are evaluated in the log domain, `exp(Σ α·ln(M+eps))`, which turns
//! each product into a matrix-vector product against the exponent vector and
//! keeps the computation stable and differentiable. The training loss is
//! `L_freq = -ln B_low`; gradient descent on it pushes spectral mass toward
//! the low-frequency bins (or away from them, under a negative weight).
//!
//! ```
//! use jafr::freqbias::make_alpha;
//!
//! let a = make_alpha(5);
//! assert_eq!(a.alphas, vec![1.0, 0.5, 0.0, -0.5, -1.0]);
//! assert_eq!(a.alphas.iter().sum::<f64>(), 0.0);
//! ```

use serde::{Deserialize, Serialize};

use crate::spectral::SpectrumMap;
use crate::tensor::Tensor;

/// Exponent vector for one spectrum axis: anti-symmetric, evenly spaced,
/// endpoints +1 and -1.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSchedule {
    pub alphas: Vec<f64>,
    /// Step between consecutive exponents (`-2/(l-1)`; 0 for the degenerate
    /// length-1 schedule).
    pub spacing: f64,
}

impl AlphaSchedule {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// Evenly spaced exponents `α_i = 1 - 2(i-1)/(l-1)`. A length-1 axis gets the
/// neutral schedule `[0]`.
pub fn make_alpha(l: usize) -> AlphaSchedule {
    assert!(l >= 1, "make_alpha: axis length must be positive");
    if l == 1 {
        return AlphaSchedule { alphas: vec![0.0], spacing: 0.0 };
    }
    let spacing = -2.0 / (l - 1) as f64;
    let alphas = (0..l).map(|i| 1.0 + spacing * i as f64).collect();
    AlphaSchedule { alphas, spacing }
}

/// How spectrum indices map to exponents.
///
/// `RawDft` assigns exponents over raw DFT index order 0..l-1, even though the
/// upper half of that range aliases negative frequencies. `FoldedFrequency`
/// assigns them by the folded frequency `min(i, l-i)`, so aliased bins share
/// the exponent of their mirror; note the folded exponents no longer sum to
/// zero for every `l`, so exact scale invariance holds only in raw mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IndexMode {
    #[default]
    RawDft,
    FoldedFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    /// Added to every magnitude before exponentiation; keeps the negative
    /// exponents finite on exactly-zero bins.
    pub eps_floor: f64,
    pub index_mode: IndexMode,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig { eps_floor: 1e-8, index_mode: IndexMode::RawDft }
    }
}

/// Exponents for an axis of length `l` under the given index mode.
pub fn axis_exponents(l: usize, mode: IndexMode) -> Vec<f64> {
    match mode {
        IndexMode::RawDft => make_alpha(l).alphas,
        IndexMode::FoldedFrequency => {
            let folded = make_alpha(l / 2 + 1).alphas;
            (0..l).map(|i| folded[i.min(l - i)]).collect()
        }
    }
}

/// The 2-D low-frequency bias score, differentiable through the spectrum.
pub fn bias_low(m: &SpectrumMap, cfg: &BiasConfig) -> Tensor {
    assert!(cfg.eps_floor > 0.0, "bias_low: eps_floor must be positive");
    let g = m.mags.graph().clone();
    let (h, w) = (m.height, m.width);
    let ln_m = m.mags.add_scalar(cfg.eps_floor).ln();
    let row_alpha = g.constant(axis_exponents(h, cfg.index_mode), &[1, h]);
    let col_alpha = g.constant(axis_exponents(w, cfg.index_mode), &[w, 1]);
    // Column products Π_i M[i,j]^{α_i}: αᵀ·lnM collapses the row axis.
    let col_products = row_alpha.matmul(&ln_m).exp();
    // Row products Π_j M[i,j]^{α_j}: lnM·α collapses the column axis.
    let row_products = ln_m.matmul(&col_alpha).exp();
    col_products.sum().add(&row_products.sum())
}

/// `L_freq = -ln B_low`. Minimizing it maximizes the low-frequency bias.
pub fn loss_freq(m: &SpectrumMap, cfg: &BiasConfig) -> Tensor {
    bias_low(m, cfg).ln().neg()
}

/// Raw-value twin of [`bias_low`] for profiling paths, same log-domain
/// evaluation on a plain h×w magnitude slice.
pub fn bias_low_value(mags: &[f64], h: usize, w: usize, cfg: &BiasConfig) -> f64 {
    assert_eq!(mags.len(), h * w, "bias_low_value: bad dimensions");
    assert!(cfg.eps_floor > 0.0, "bias_low_value: eps_floor must be positive");
    let row_alpha = axis_exponents(h, cfg.index_mode);
    let col_alpha = axis_exponents(w, cfg.index_mode);
    let ln_m: Vec<f64> = mags.iter().map(|&v| (v + cfg.eps_floor).ln()).collect();
    let mut total = 0.0;
    for j in 0..w {
        let s: f64 = (0..h).fold(0.0, |acc, i| acc + row_alpha[i] * ln_m[i * w + j]);
        total += s.exp();
    }
    for i in 0..h {
        let s: f64 = (0..w).fold(0.0, |acc, j| acc + col_alpha[j] * ln_m[i * w + j]);
        total += s.exp();
    }
    total
}

/// `B_low` of the mean channel-averaged magnitude spectrum of a sequence of
/// c×h×w items — the profiling statistic reported for models (over Jacobians)
/// and corruptions (over corruption deltas).
pub fn bias_of_mean_spectrum<'a>(
    items: impl IntoIterator<Item = &'a [f64]>,
    c: usize,
    h: usize,
    w: usize,
    cfg: &BiasConfig,
) -> f64 {
    let mean = crate::spectral::mean_magnitude_spectrum(items, c, h, w, crate::spectral::MAG_EPS);
    bias_low_value(&mean, h, w, cfg)
}
