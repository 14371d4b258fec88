//! Independent oracles for the integration suites. Everything here is
//! deliberately naive — double-sum transforms, direct products, central
//! finite differences — and stays independent of the library's computation
//! paths it is used to check.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// ‖a − b‖₂ / max(‖b‖₂, floor).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Quartic double-sum DFT straight from the definition:
/// `F[u,v] = Σ_a Σ_b x[a,b]·exp(-2πi(ua/h + vb/w))`.
pub fn naive_dft2(data: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(data.len(), h * w);
    let mut re = vec![0.0; h * w];
    let mut im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut sr = 0.0;
            let mut si = 0.0;
            for a in 0..h {
                for b in 0..w {
                    let phase = -2.0
                        * std::f64::consts::PI
                        * (u as f64 * a as f64 / h as f64 + v as f64 * b as f64 / w as f64);
                    sr += data[a * w + b] * phase.cos();
                    si += data[a * w + b] * phase.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

/// Direct-product low-frequency bias, no log-domain trick:
/// `Σ_j Π_i (M[i,j]+eps)^{α_i} + Σ_i Π_j (M[i,j]+eps)^{α_j}` with the evenly
/// spaced exponents computed independently here.
pub fn direct_bias_low(mags: &[f64], h: usize, w: usize, eps: f64) -> f64 {
    assert_eq!(mags.len(), h * w);
    let alphas = |l: usize| -> Vec<f64> {
        if l == 1 {
            return vec![0.0];
        }
        (0..l).map(|i| 1.0 - 2.0 * i as f64 / (l - 1) as f64).collect()
    };
    let row_alpha = alphas(h);
    let col_alpha = alphas(w);
    let mut total = 0.0;
    for j in 0..w {
        let mut prod = 1.0;
        for i in 0..h {
            prod *= (mags[i * w + j] + eps).powf(row_alpha[i]);
        }
        total += prod;
    }
    for i in 0..h {
        let mut prod = 1.0;
        for j in 0..w {
            prod *= (mags[i * w + j] + eps).powf(col_alpha[j]);
        }
        total += prod;
    }
    total
}

/// Softmax straight from the definition, for closed-form oracles.
pub fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// A tiny one-vs-rest perceptron probe, used only to certify that a dataset
/// is linearly separable to a given accuracy. Not a library code path.
pub fn linear_probe_accuracy(
    images: &[f64],
    labels: &[usize],
    n: usize,
    dim: usize,
    k: usize,
    epochs: usize,
) -> f64 {
    let mut weights = vec![0.0; k * (dim + 1)];
    let lr = 0.5;
    for _ in 0..epochs {
        for s in 0..n {
            let x = &images[s * dim..(s + 1) * dim];
            let scores: Vec<f64> = (0..k)
                .map(|c| {
                    let wrow = &weights[c * (dim + 1)..(c + 1) * (dim + 1)];
                    wrow[dim] + x.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let probs = naive_softmax(&scores);
            for c in 0..k {
                let err = probs[c] - if c == labels[s] { 1.0 } else { 0.0 };
                let wrow = &mut weights[c * (dim + 1)..(c + 1) * (dim + 1)];
                for (wi, xi) in wrow[..dim].iter_mut().zip(x) {
                    *wi -= lr * err * xi / n as f64 * n as f64;
                }
                wrow[dim] -= lr * err;
            }
        }
    }
    let mut hits = 0;
    for s in 0..n {
        let x = &images[s * dim..(s + 1) * dim];
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for c in 0..k {
            let wrow = &weights[c * (dim + 1)..(c + 1) * (dim + 1)];
            let score = wrow[dim] + x.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        if best == labels[s] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}
