//! Reported metrics: clean and adversarial accuracy, per-corruption accuracy
//! averaged over severities, relative mean corruption error, and the model's
//! spectral profile (`B_low` of the mean Jacobian magnitude spectrum).
//!
//! Evaluation parallelizes over batches of test images; partial results are
//! merged in index order so the numbers do not depend on the worker count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::attacks::{fgsm, pgd, AttackConfig};
use crate::corruptions::{corrupt, mix_seed, CorruptionKind, CorruptionSpec, CorruptionTables};
use crate::data::{one_hot, Dataset};
use crate::freqbias::{bias_low_value, BiasConfig};
use crate::nn::{cross_entropy_each, Model};
use crate::spectral::channel_mean_spectrum_raw;
use crate::tensor::Graph;

const EVAL_BATCH: usize = 128;

/// Predicted class per sample; ties resolve to the lowest class index.
pub fn predict(model: &Model, images: &[f64], n: usize) -> Vec<usize> {
    let [c, h, w] = model.spec.input;
    assert_eq!(images.len(), n * c * h * w, "predict: bad batch");
    let k = model.spec.num_classes;
    let g = Graph::new();
    let x = g.constant(images.to_vec(), &[n, c, h, w]);
    let logits = model.bind_frozen(&g).forward(&x);
    logits.with_data(|d| {
        (0..n)
            .map(|s| {
                let row = &d[s * k..(s + 1) * k];
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    })
}

fn accuracy_on(model: &Model, images: &[f64], labels: &[usize]) -> usize {
    let n = labels.len();
    let sample = images.len() / n.max(1);
    let hits: usize = images
        .par_chunks(EVAL_BATCH * sample)
        .zip(labels.par_chunks(EVAL_BATCH))
        .map(|(img_chunk, lbl_chunk)| {
            let preds = predict(model, img_chunk, lbl_chunk.len());
            preds.iter().zip(lbl_chunk).filter(|(p, l)| p == l).count()
        })
        .sum();
    hits
}

/// Fraction of the first `limit` samples classified correctly.
pub fn clean_accuracy(model: &Model, ds: &Dataset, limit: usize) -> f64 {
    let n = limit.min(ds.n);
    assert!(n > 0, "clean_accuracy: empty evaluation set");
    let (images, labels) = ds.gather_batch(&(0..n).collect::<Vec<_>>());
    accuracy_on(model, &images, &labels) as f64 / n as f64
}

/// Accuracy under a single-step sign attack at budget `epsilon`.
pub fn fgsm_accuracy(model: &Model, ds: &Dataset, limit: usize, epsilon: f64) -> f64 {
    let n = limit.min(ds.n);
    assert!(n > 0, "fgsm_accuracy: empty evaluation set");
    let (images, labels) = ds.gather_batch(&(0..n).collect::<Vec<_>>());
    let adv = fgsm(model, &images, &labels, epsilon);
    accuracy_on(model, &adv, &labels) as f64 / n as f64
}

/// Accuracy under the full iterated attack.
pub fn pgd_accuracy(model: &Model, ds: &Dataset, limit: usize, cfg: &AttackConfig) -> f64 {
    let n = limit.min(ds.n);
    assert!(n > 0, "pgd_accuracy: empty evaluation set");
    let (images, labels) = ds.gather_batch(&(0..n).collect::<Vec<_>>());
    let adv = pgd(model, &images, &labels, cfg);
    accuracy_on(model, &adv, &labels) as f64 / n as f64
}

/// Accuracy on the corrupted set at each severity, plus the severity mean.
pub fn corruption_accuracy(
    model: &Model,
    ds: &Dataset,
    kind: CorruptionKind,
    tables: &CorruptionTables,
    limit: usize,
    seed: u64,
) -> ([f64; 5], f64) {
    let n = limit.min(ds.n);
    assert!(n > 0, "corruption_accuracy: empty evaluation set");
    let (images, labels) = ds.gather_batch(&(0..n).collect::<Vec<_>>());
    let (c, h, w) = (ds.c, ds.h, ds.w);
    let sample = c * h * w;
    let mut accs = [0.0f64; 5];
    for severity in 1..=5u8 {
        let corrupted: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let spec = CorruptionSpec::new(kind, severity, mix_seed(seed, i as u64, severity));
                corrupt(&images[i * sample..(i + 1) * sample], c, h, w, &spec, tables)
            })
            .flatten()
            .collect();
        accs[(severity - 1) as usize] = accuracy_on(model, &corrupted, &labels) as f64 / n as f64;
    }
    let mean = accs.iter().sum::<f64>() / 5.0;
    (accs, mean)
}

// ── Relative mean corruption error ──────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mce {
    Value(f64),
    /// The baseline makes no errors on this kind, so the ratio is undefined.
    UndefinedBaseline(CorruptionKind),
}

impl std::fmt::Display for Mce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mce::Value(v) => write!(f, "{v}"),
            Mce::UndefinedBaseline(kind) => write!(f, "undefined-baseline:{}", kind.name()),
        }
    }
}

#[derive(Debug, Error)]
pub enum MceError {
    #[error("reports cover different corruption kinds")]
    KindMismatch,
}

/// `100 × mean over kinds of [Σ_s err_model / Σ_s err_baseline]`. A report
/// compared with itself is exactly 100.
pub fn mce(model: &EvalReport, baseline: &EvalReport) -> Result<Mce, MceError> {
    if model.corruption_acc.len() != baseline.corruption_acc.len() {
        return Err(MceError::KindMismatch);
    }
    let mut ratios = Vec::with_capacity(model.corruption_acc.len());
    for ((mk, ma), (bk, ba)) in model.corruption_acc.iter().zip(&baseline.corruption_acc) {
        if mk != bk {
            return Err(MceError::KindMismatch);
        }
        let err_m: f64 = ma.iter().map(|a| 1.0 - a).sum();
        let err_b: f64 = ba.iter().map(|a| 1.0 - a).sum();
        if err_b == 0.0 {
            return Ok(Mce::UndefinedBaseline(*mk));
        }
        ratios.push(err_m / err_b);
    }
    assert!(!ratios.is_empty(), "mce: no corruption rows");
    Ok(Mce::Value(100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64))
}

// ── Model spectral profile ──────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ModelProfile {
    /// `B_low` of the mean Jacobian magnitude spectrum over the sample.
    pub b_low: f64,
    /// h×w mean spectrum `E[|F(J)|]`.
    pub mean_spectrum: Vec<f64>,
    pub h: usize,
    pub w: usize,
    /// Channel-averaged Jacobians of the first few images, for rendering.
    pub sample_jacobians: Vec<Vec<f64>>,
}

/// Mean Jacobian spectrum and its bias over the first `limit` images.
pub fn model_profile(
    model: &Model,
    ds: &Dataset,
    limit: usize,
    bias_cfg: &BiasConfig,
    keep_samples: usize,
) -> ModelProfile {
    let n = limit.min(ds.n);
    assert!(n > 0, "model_profile: empty sample");
    let (c, h, w) = (ds.c, ds.h, ds.w);
    let spectra: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let jac = input_jacobian_data(model, ds.image(i), ds.labels[i]);
            let spec = channel_mean_spectrum_raw(&jac, c, h, w, crate::spectral::MAG_EPS);
            let keep = if i < keep_samples { Some(channel_mean_plane(&jac, c, h, w)) } else { None };
            (spec, keep)
        })
        .collect();
    let mut mean = vec![0.0; h * w];
    let mut samples = Vec::new();
    for (spec, keep) in spectra {
        for (m, v) in mean.iter_mut().zip(spec) {
            *m += v;
        }
        if let Some(j) = keep {
            samples.push(j);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let b_low = bias_low_value(&mean, h, w, bias_cfg);
    ModelProfile { b_low, mean_spectrum: mean, h, w, sample_jacobians: samples }
}

/// `∇_x L_cls` for a single image, as raw data.
pub fn input_jacobian_data(model: &Model, image: &[f64], label: usize) -> Vec<f64> {
    let [c, h, w] = model.spec.input;
    let g = Graph::new();
    let x = g.var(image.to_vec(), &[1, c, h, w]);
    let y = g.constant(one_hot(&[label], model.spec.num_classes), &[1, model.spec.num_classes]);
    let bound = model.bind_frozen(&g);
    let loss = cross_entropy_each(&bound.forward(&x), &y).sum();
    loss.backward(&[&x], false).pop().unwrap().data()
}

fn channel_mean_plane(data: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, &v) in out.iter_mut().zip(&data[ch * h * w..(ch + 1) * h * w]) {
            *o += v;
        }
    }
    out.iter().map(|v| v / c as f64).collect()
}

/// Min-max normalized 8-bit PGM, for Jacobian renders.
pub fn write_image_pgm(path: &Path, data: &[f64], h: usize, w: usize) -> std::io::Result<()> {
    assert_eq!(data.len(), h * w);
    let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = (hi - lo).max(1e-300);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n255\n", w, h)?;
    let bytes: Vec<u8> = data.iter().map(|&v| ((v - lo) / span * 255.0).round() as u8).collect();
    out.write_all(&bytes)?;
    out.flush()
}

// ── Reports ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub tag: String,
    pub seed: u64,
    pub clean_acc: Option<f64>,
    pub fgsm_acc: Option<f64>,
    pub pgd_acc: Option<f64>,
    /// Accuracy per kind and severity, in canonical kind order.
    pub corruption_acc: Vec<(CorruptionKind, [f64; 5])>,
    pub mce: Option<Mce>,
    pub model_bias: Option<f64>,
}

impl EvalReport {
    pub fn corruption_mean(&self, kind: CorruptionKind) -> Option<f64> {
        self.corruption_acc
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, a)| a.iter().sum::<f64>() / 5.0)
    }

    /// One `metric,value` row per entry. Stable ordering, so identical
    /// reports serialize to identical bytes.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "metric,value")?;
        writeln!(out, "tag,{}", self.tag)?;
        writeln!(out, "seed,{}", self.seed)?;
        if let Some(v) = self.clean_acc {
            writeln!(out, "clean_acc,{v}")?;
        }
        if let Some(v) = self.fgsm_acc {
            writeln!(out, "fgsm_acc,{v}")?;
        }
        if let Some(v) = self.pgd_acc {
            writeln!(out, "pgd_acc,{v}")?;
        }
        for (kind, accs) in &self.corruption_acc {
            for (s, a) in accs.iter().enumerate() {
                writeln!(out, "corr_{}_s{},{}", kind.name(), s + 1, a)?;
            }
            writeln!(out, "corr_{}_mean,{}", kind.name(), accs.iter().sum::<f64>() / 5.0)?;
        }
        if let Some(m) = &self.mce {
            writeln!(out, "mce,{m}")?;
        }
        if let Some(v) = self.model_bias {
            writeln!(out, "model_bias,{v}")?;
        }
        out.flush()
    }

    pub fn read_csv(path: &Path) -> std::io::Result<EvalReport> {
        let text = std::fs::read_to_string(path)?;
        let mut report = EvalReport::default();
        let mut corr: Vec<(CorruptionKind, [f64; 5])> = Vec::new();
        for line in text.lines().skip(1) {
            let Some((metric, value)) = line.split_once(',') else { continue };
            match metric {
                "tag" => report.tag = value.to_string(),
                "seed" => report.seed = value.parse().unwrap_or(0),
                "clean_acc" => report.clean_acc = value.parse().ok(),
                "fgsm_acc" => report.fgsm_acc = value.parse().ok(),
                "pgd_acc" => report.pgd_acc = value.parse().ok(),
                "mce" => {
                    report.mce = if let Some(rest) = value.strip_prefix("undefined-baseline:") {
                        CorruptionKind::parse(rest).map(Mce::UndefinedBaseline)
                    } else {
                        value.parse().ok().map(Mce::Value)
                    }
                }
                "model_bias" => report.model_bias = value.parse().ok(),
                m if m.starts_with("corr_") => {
                    let rest = &m[5..];
                    let Some((kind_name, col)) = rest.rsplit_once('_') else { continue };
                    let Some(kind) = CorruptionKind::parse(kind_name) else { continue };
                    if let Some(sev) = col.strip_prefix('s').and_then(|s| s.parse::<usize>().ok()) {
                        let entry = match corr.iter_mut().find(|(k, _)| *k == kind) {
                            Some(e) => e,
                            None => {
                                corr.push((kind, [0.0; 5]));
                                corr.last_mut().unwrap()
                            }
                        };
                        if (1..=5).contains(&sev) {
                            entry.1[sev - 1] = value.parse().unwrap_or(0.0);
                        }
                    }
                }
                _ => {}
            }
        }
        report.corruption_acc = corr;
        Ok(report)
    }
}

/// A fixed, seeded subsample of `n` dataset rows.
pub fn seeded_subsample(ds: &Dataset, n: usize, seed: u64) -> Dataset {
    let n = n.min(ds.n);
    let mut order: Vec<usize> = (0..ds.n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5AB5_AB5A));
    for i in (1..ds.n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order.truncate(n);
    let (images, labels) = ds.gather_batch(&order);
    Dataset {
        images,
        n,
        labels,
        provenance: format!("{} (subsample n={} seed={})", ds.provenance, n, seed),
        ..ds.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::nn::ModelSpec;

    fn report_with(accs: &[(CorruptionKind, [f64; 5])]) -> EvalReport {
        EvalReport { corruption_acc: accs.to_vec(), ..Default::default() }
    }

    #[test]
    fn mce_of_baseline_against_itself_is_100() {
        let r = report_with(&[
            (CorruptionKind::Fog, [0.8, 0.7, 0.6, 0.5, 0.4]),
            (CorruptionKind::GaussianNoise, [0.9, 0.8, 0.7, 0.6, 0.5]),
        ]);
        match mce(&r, &r).unwrap() {
            Mce::Value(v) => assert_eq!(v, 100.0),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn halved_error_gives_50() {
        let base = report_with(&[
            (CorruptionKind::Fog, [0.5, 0.5, 0.5, 0.5, 0.5]),
            (CorruptionKind::Contrast, [0.75, 0.75, 0.75, 0.75, 0.75]),
        ]);
        let model = report_with(&[
            (CorruptionKind::Fog, [0.75, 0.75, 0.75, 0.75, 0.75]),
            (CorruptionKind::Contrast, [0.875, 0.875, 0.875, 0.875, 0.875]),
        ]);
        match mce(&model, &base).unwrap() {
            Mce::Value(v) => assert_eq!(v, 50.0),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn perfect_baseline_is_undefined() {
        let base = report_with(&[(CorruptionKind::Fog, [1.0; 5])]);
        let model = report_with(&[(CorruptionKind::Fog, [0.9; 5])]);
        assert_eq!(mce(&model, &base).unwrap(), Mce::UndefinedBaseline(CorruptionKind::Fog));
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let a = report_with(&[(CorruptionKind::Fog, [0.5; 5])]);
        let b = report_with(&[(CorruptionKind::Contrast, [0.5; 5])]);
        assert!(mce(&a, &b).is_err());
    }

    #[test]
    fn constant_output_model_scores_chance() {
        // All-zero parameters give identical logits; argmax resolves to
        // class 0, so accuracy equals class 0's share.
        let ds = synth_blobs(100, 4, 1);
        let mut model = Model::init(ModelSpec::mlp([1, 16, 16], 4, vec![8]), 0);
        for p in &mut model.params {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let acc = clean_accuracy(&model, &ds, ds.n);
        let share = ds.labels.iter().filter(|&&l| l == 0).count() as f64 / ds.n as f64;
        assert!((acc - share).abs() < 1e-12);
    }

    #[test]
    fn profile_is_deterministic() {
        let ds = synth_blobs(12, 3, 2);
        let model = Model::init(ModelSpec::mlp([1, 16, 16], 3, vec![8]), 5);
        let cfg = BiasConfig::default();
        let p1 = model_profile(&model, &ds, 12, &cfg, 2);
        let p2 = model_profile(&model, &ds, 12, &cfg, 2);
        assert_eq!(p1.b_low.to_bits(), p2.b_low.to_bits());
        assert_eq!(p1.mean_spectrum, p2.mean_spectrum);
        assert_eq!(p1.sample_jacobians.len(), 2);
    }

    #[test]
    fn report_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut r = report_with(&[
            (CorruptionKind::Fog, [0.8, 0.7, 0.6, 0.5, 0.4]),
            (CorruptionKind::GaussianNoise, [0.9, 0.8, 0.7, 0.6, 0.5]),
        ]);
        r.tag = "standard".into();
        r.seed = 3;
        r.clean_acc = Some(0.93);
        r.pgd_acc = Some(0.41);
        r.mce = Some(Mce::Value(95.84));
        r.model_bias = Some(1.56);
        r.write_csv(&path).unwrap();
        let back = EvalReport::read_csv(&path).unwrap();
        assert_eq!(back.tag, "standard");
        assert_eq!(back.seed, 3);
        assert_eq!(back.clean_acc, Some(0.93));
        assert_eq!(back.fgsm_acc, None);
        assert_eq!(back.pgd_acc, Some(0.41));
        assert_eq!(back.mce, Some(Mce::Value(95.84)));
        assert_eq!(back.model_bias, Some(1.56));
        assert_eq!(back.corruption_acc, r.corruption_acc);
    }

    #[test]
    fn subsample_is_seed_stable() {
        let ds = synth_blobs(50, 2, 7);
        let a = seeded_subsample(&ds, 10, 3);
        let b = seeded_subsample(&ds, 10, 3);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        let c = seeded_subsample(&ds, 10, 4);
        assert_ne!(a.images, c.images);
    }
}
