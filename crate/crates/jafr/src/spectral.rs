//! Differentiable 2-D discrete Fourier transform and magnitude maps.
//!
//! The transform is written as two dense matrix products, `F = D_h · X · D_wᵀ`
//! with `D_n[u,a] = exp(-2πi·ua/n)`. That is O(n³) instead of an FFT's
//! O(n² log n), but inputs here are at most 64×64, the map is linear (so
//! second-order differentiation through it is exact), and it is directly
//! checkable against the quartic double-sum definition. Index (0,0) is the DC
//! bin; no quadrant shift is applied anywhere.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::tensor::{Graph, Tensor};

/// Default magnitude epsilon, added inside the square root so the gradient of
/// `|F|` is defined at exactly-zero bins.
pub const MAG_EPS: f64 = 1e-12;

/// Non-negative magnitude per (row-frequency, column-frequency) bin, kept as a
/// graph tensor so losses built on it stay differentiable.
#[derive(Clone)]
pub struct SpectrumMap {
    pub height: usize,
    pub width: usize,
    pub mags: Tensor,
}

impl SpectrumMap {
    pub fn values(&self) -> Vec<f64> {
        self.mags.data()
    }
}

/// Real and imaginary DFT coefficient matrices for size `n`:
/// `re[u*n+a] = cos(2π·ua/n)`, `im[u*n+a] = -sin(2π·ua/n)`.
pub fn dft_matrices(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "dft_matrices: n must be at least 1");
    let mut re = vec![0.0; n * n];
    let mut im = vec![0.0; n * n];
    for u in 0..n {
        for a in 0..n {
            // Reduce u*a mod n before the trig call: exp(-2πi·ua/n) is
            // periodic and this keeps large products accurate.
            let t = 2.0 * std::f64::consts::PI * ((u * a) % n) as f64 / n as f64;
            re[u * n + a] = t.cos();
            im[u * n + a] = -t.sin();
        }
    }
    (re, im)
}

/// Precomputed coefficient tensors for transforming h×w images on one graph.
/// Worth hoisting out of per-sample loops.
pub struct DftPlan {
    h: usize,
    w: usize,
    row_re: Tensor,
    row_im: Tensor,
    col_re_t: Tensor,
    col_im_t: Tensor,
}

impl DftPlan {
    pub fn new(g: &Graph, h: usize, w: usize) -> Self {
        assert!(h >= 1 && w >= 1, "DftPlan: degenerate spectrum {}x{}", h, w);
        let (hr, hi) = dft_matrices(h);
        let (wr, wi) = dft_matrices(w);
        let wr = g.constant(wr, &[w, w]).t();
        let wi = g.constant(wi, &[w, w]).t();
        DftPlan {
            h,
            w,
            row_re: g.constant(hr, &[h, h]),
            row_im: g.constant(hi, &[h, h]),
            col_re_t: wr,
            col_im_t: wi,
        }
    }

    /// Full complex DFT of a real h×w image, returned as (real, imag).
    pub fn apply(&self, image: &Tensor) -> (Tensor, Tensor) {
        assert_eq!(
            image.shape(),
            vec![self.h, self.w],
            "dft2: image shape {:?} does not match plan {}x{}",
            image.shape(),
            self.h,
            self.w
        );
        let t_re = self.row_re.matmul(image);
        let t_im = self.row_im.matmul(image);
        let re = t_re.matmul(&self.col_re_t).sub(&t_im.matmul(&self.col_im_t));
        let im = t_re.matmul(&self.col_im_t).add(&t_im.matmul(&self.col_re_t));
        (re, im)
    }
}

/// One-shot DFT of an h×w image on its own plan.
pub fn dft2(image: &Tensor) -> (Tensor, Tensor) {
    let s = image.shape();
    assert_eq!(s.len(), 2, "dft2: image must be 2-D, got {:?}", s);
    DftPlan::new(image.graph(), s[0], s[1]).apply(image)
}

/// `sqrt(re² + im² + eps)`. The eps sits inside the root so the map is
/// differentiable even where the true magnitude is zero.
pub fn magnitude_map(re: &Tensor, im: &Tensor, eps: f64) -> SpectrumMap {
    let s = re.shape();
    assert_eq!(s, im.shape(), "magnitude_map: mismatched shapes");
    assert_eq!(s.len(), 2, "magnitude_map: inputs must be 2-D");
    assert!(eps > 0.0, "magnitude_map: eps must be positive");
    let mags = re.mul(re).add(&im.mul(im)).add_scalar(eps).sqrt();
    SpectrumMap { height: s[0], width: s[1], mags }
}

/// Magnitude spectra of each channel of a c×h×w image, averaged elementwise.
pub fn channel_mean_spectrum(image: &Tensor, eps: f64) -> SpectrumMap {
    let s = image.shape();
    assert_eq!(s.len(), 3, "channel_mean_spectrum: image must be c×h×w, got {:?}", s);
    let (c, h, w) = (s[0], s[1], s[2]);
    assert!(c >= 1, "channel_mean_spectrum: zero channels");
    let plan = DftPlan::new(image.graph(), h, w);
    let mut acc: Option<Tensor> = None;
    for ch in 0..c {
        let plane = plane_of(image, ch, h, w);
        let (re, im) = plan.apply(&plane);
        let m = magnitude_map(&re, &im, eps).mags;
        acc = Some(match acc {
            None => m,
            Some(a) => a.add(&m),
        });
    }
    let mags = acc.expect("c >= 1").mul_scalar(1.0 / c as f64);
    SpectrumMap { height: h, width: w, mags }
}

fn plane_of(image: &Tensor, ch: usize, h: usize, w: usize) -> Tensor {
    let base = ch * h * w;
    let idx: Vec<usize> = (base..base + h * w).collect();
    image.gather(idx.into(), &[h, w])
}

// ── Raw (non-graph) mirrors for profiling paths ─────────────────────────

/// DFT of a plain h×w slice, same separable evaluation as [`DftPlan::apply`].
pub fn dft2_raw(data: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(data.len(), h * w);
    let g = Graph::new();
    let x = g.constant(data.to_vec(), &[h, w]);
    let (re, im) = DftPlan::new(&g, h, w).apply(&x);
    (re.data(), im.data())
}

pub fn magnitude_raw(re: &[f64], im: &[f64], eps: f64) -> Vec<f64> {
    re.iter().zip(im).map(|(&r, &i)| (r * r + i * i + eps).sqrt()).collect()
}

/// Channel-averaged magnitude spectrum of a plain c×h×w slice.
pub fn channel_mean_spectrum_raw(data: &[f64], c: usize, h: usize, w: usize, eps: f64) -> Vec<f64> {
    assert_eq!(data.len(), c * h * w);
    assert!(c >= 1, "channel_mean_spectrum_raw: zero channels");
    let mut acc = vec![0.0; h * w];
    for ch in 0..c {
        let (re, im) = dft2_raw(&data[ch * h * w..(ch + 1) * h * w], h, w);
        for (a, m) in acc.iter_mut().zip(magnitude_raw(&re, &im, eps)) {
            *a += m;
        }
    }
    for a in &mut acc {
        *a /= c as f64;
    }
    acc
}

/// Elementwise mean of the channel-averaged magnitude spectra of a sequence
/// of c×h×w items (images or Jacobians): the `E[|F(·)|]` profiling statistic.
pub fn mean_magnitude_spectrum<'a>(
    items: impl IntoIterator<Item = &'a [f64]>,
    c: usize,
    h: usize,
    w: usize,
    eps: f64,
) -> Vec<f64> {
    let mut acc = vec![0.0; h * w];
    let mut count = 0usize;
    for item in items {
        for (a, m) in acc.iter_mut().zip(channel_mean_spectrum_raw(item, c, h, w, eps)) {
            *a += m;
        }
        count += 1;
    }
    assert!(count > 0, "mean_magnitude_spectrum: empty sequence");
    for a in &mut acc {
        *a /= count as f64;
    }
    acc
}

// ── Exports ─────────────────────────────────────────────────────────────

/// 8-bit binary PGM, log-scaled (`ln(1+m)`) and normalized to the image max.
pub fn write_spectrum_pgm(path: &Path, mags: &[f64], h: usize, w: usize) -> io::Result<()> {
    assert_eq!(mags.len(), h * w);
    let scaled: Vec<f64> = mags.iter().map(|&m| (1.0 + m.max(0.0)).ln()).collect();
    let max = scaled.iter().cloned().fold(0.0f64, f64::max);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", w, h)?;
    let bytes: Vec<u8> = scaled
        .iter()
        .map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 })
        .collect();
    out.write_all(&bytes)?;
    out.flush()
}

/// Raw float magnitudes as CSV, one spectrum row per line.
pub fn write_spectrum_csv(path: &Path, mags: &[f64], h: usize, w: usize) -> io::Result<()> {
    assert_eq!(mags.len(), h * w);
    let mut out = BufWriter::new(File::create(path)?);
    for r in 0..h {
        let row: Vec<String> = mags[r * w..(r + 1) * w].iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}
