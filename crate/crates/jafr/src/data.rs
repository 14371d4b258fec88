//! Dataset ingestion: IDX and CIFAR binary files, plus seeded synthetic sets
//! for experiments that must run with no data files at hand.
//!
//! Every loader emits pixels in [0,1] as `f64` and rejects out-of-range
//! labels. Images are stored flat in (n, c, h, w) order.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("data io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("label {label} out of range for {num_classes} classes (record {index})")]
    LabelRange { label: usize, num_classes: usize, index: usize },
    #[error("unknown dataset reference '{0}'")]
    BadRef(String),
}

fn format_err<T>(offset: usize, msg: impl Into<String>) -> Result<T, DataError> {
    Err(DataError::Format { offset, msg: msg.into() })
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Flat (n, c, h, w) pixels in [0,1].
    pub images: Vec<f64>,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: String,
    pub provenance: String,
}

impl Dataset {
    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.image_len();
        &self.images[i * len..(i + 1) * len]
    }

    /// Pixels and labels for the given sample indices, batch-major.
    pub fn gather_batch(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let len = self.image_len();
        let mut pixels = Vec::with_capacity(idx.len() * len);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        (pixels, labels)
    }

    /// First `n` samples as a new dataset.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.n);
        Dataset {
            images: self.images[..n * self.image_len()].to_vec(),
            n,
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    fn validate(self) -> Result<Self, DataError> {
        for (i, &l) in self.labels.iter().enumerate() {
            if l >= self.num_classes {
                return Err(DataError::LabelRange {
                    label: l,
                    num_classes: self.num_classes,
                    index: i,
                });
            }
        }
        debug_assert!(self.images.iter().all(|&p| (0.0..=1.0).contains(&p)));
        Ok(self)
    }
}

/// One-hot rows for a label slice.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < num_classes, "label {} out of range", l);
        out[i * num_classes + l] = 1.0;
    }
    out
}

// ── IDX ─────────────────────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes(b.try_into().unwrap())),
        None => format_err(offset, "truncated header"),
    }
}

/// Loads an IDX image file and its matching IDX label file. Pixels are
/// scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path, num_classes: usize) -> Result<Dataset, DataError> {
    let img_bytes = fs::read(images_path)?;
    let magic = read_be_u32(&img_bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return format_err(0, format!("bad image magic {magic:#010x}, want {IDX_IMAGES_MAGIC:#010x}"));
    }
    let n = read_be_u32(&img_bytes, 4)? as usize;
    let h = read_be_u32(&img_bytes, 8)? as usize;
    let w = read_be_u32(&img_bytes, 12)? as usize;
    let want = 16 + n * h * w;
    if img_bytes.len() != want {
        return format_err(img_bytes.len().min(want), format!("image payload is {} bytes, want {}", img_bytes.len() - 16, n * h * w));
    }

    let lbl_bytes = fs::read(labels_path)?;
    let magic = read_be_u32(&lbl_bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return format_err(0, format!("bad label magic {magic:#010x}, want {IDX_LABELS_MAGIC:#010x}"));
    }
    let ln = read_be_u32(&lbl_bytes, 4)? as usize;
    if ln != n {
        return format_err(4, format!("{ln} labels for {n} images"));
    }
    if lbl_bytes.len() != 8 + n {
        return format_err(lbl_bytes.len().min(8 + n), "label payload truncated");
    }

    let images = img_bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels = lbl_bytes[8..].iter().map(|&b| b as usize).collect();
    Dataset {
        images,
        n,
        c: 1,
        h,
        w,
        labels,
        num_classes,
        split: String::new(),
        provenance: format!("idx:{}", images_path.display()),
    }
    .validate()
}

/// Writes u8 image planes in IDX format (the inverse of [`load_idx`]'s image
/// half; byte-exact round trip).
pub fn write_idx_images(path: &Path, pixels: &[u8], n: usize, h: usize, w: usize) -> Result<(), DataError> {
    assert_eq!(pixels.len(), n * h * w);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

// ── CIFAR binary ────────────────────────────────────────────────────────

const CIFAR_RECORD: usize = 3073; // 1 label byte + 3×32×32 pixels

/// Loads a CIFAR-10 binary batch file: records of one label byte followed by
/// the R, G, B planes of a 32×32 image.
pub fn load_cifar_bin(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return format_err(
            bytes.len(),
            format!("file length {} is not a multiple of the {CIFAR_RECORD}-byte record", bytes.len()),
        );
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[0] as usize);
        images.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset {
        images,
        n,
        c: 3,
        h: 32,
        w: 32,
        labels,
        num_classes: 10,
        split: String::new(),
        provenance: format!("cifar:{}", path.display()),
    }
    .validate()
}

/// Writes images (quantized to u8) in the CIFAR binary record layout, e.g.
/// for exporting corrupted sets.
pub fn write_cifar_bin(path: &Path, ds: &Dataset) -> Result<(), DataError> {
    assert_eq!((ds.c, ds.h, ds.w), (3, 32, 32), "CIFAR binary layout is 3x32x32");
    let mut out = Vec::with_capacity(ds.n * CIFAR_RECORD);
    for i in 0..ds.n {
        out.push(ds.labels[i] as u8);
        out.extend(ds.image(i).iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(path, out)?;
    Ok(())
}

// ── Synthetic datasets ──────────────────────────────────────────────────

/// Knobs for the synthetic blob classes.
#[derive(Debug, Clone)]
pub struct BlobsConfig {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Blob radius in pixels.
    pub sigma: f64,
    /// Pixel noise standard deviation.
    pub noise: f64,
    /// Amplitude of an optional class-keyed high-frequency grating. Zero by
    /// default; turn up to give models a high-frequency shortcut feature.
    pub hf_amp: f64,
    /// Scales the blob amplitude; values below 1 shrink the class signal
    /// toward the perturbation budgets used in robustness experiments.
    pub amp: f64,
    /// Amplitude of a class-independent smooth texture background. Zero
    /// keeps the plain dark background.
    pub background: f64,
    /// Distance of class centers from the image center. Small radii make
    /// neighboring classes overlap, which weakens the low-frequency cue.
    pub radius: f64,
    /// Image side length.
    pub side: usize,
    /// Constant brightness added to every pixel. Mid-gray offsets keep
    /// additive test-time noise symmetric instead of rectifying at the
    /// clip boundary.
    pub offset: f64,
    /// Probability that a sample's grating orientation is drawn from a
    /// random class instead of its own: a high-frequency feature that is
    /// informative but unreliable.
    pub hf_label_noise: f64,
}

impl BlobsConfig {
    pub fn new(n: usize, k: usize, seed: u64) -> Self {
        BlobsConfig { n, k, seed, sigma: 2.5, noise: 0.03, hf_amp: 0.0, amp: 1.0, background: 0.0, radius: 4.5, side: BLOB_SIDE, offset: 0.0, hf_label_noise: 0.0 }
    }
}

pub const BLOB_SIDE: usize = 16;

/// `k` Gaussian class blobs embedded as low-frequency patterns in 16×16
/// single-channel images. Classes are balanced to within one sample and
/// linearly separable at the default settings.
pub fn synth_blobs(n: usize, k: usize, seed: u64) -> Dataset {
    synth_blobs_cfg(&BlobsConfig::new(n, k, seed))
}

pub fn synth_blobs_cfg(cfg: &BlobsConfig) -> Dataset {
    assert!(cfg.n >= 1 && cfg.k >= 1, "synth_blobs: n and k must be positive");
    let side = cfg.side;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).expect("valid std");
    let jitter = Normal::new(0.0, 0.35).expect("valid std");

    // Round-robin labels keep the class balance within ±1; a seeded shuffle
    // then mixes classes across batch boundaries.
    let mut order: Vec<usize> = (0..cfg.n).collect();
    for i in (1..cfg.n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }

    let mut images = vec![0.0; cfg.n * side * side];
    let mut labels = vec![0usize; cfg.n];
    for slot in 0..cfg.n {
        let label = order[slot] % cfg.k;
        labels[slot] = label;
        let angle = 2.0 * std::f64::consts::PI * label as f64 / cfg.k as f64;
        let cx = side as f64 / 2.0 + cfg.radius * angle.cos() + jitter.sample(&mut rng);
        let cy = side as f64 / 2.0 + cfg.radius * angle.sin() + jitter.sample(&mut rng);
        let amp = cfg.amp * rng.random_range(0.65..1.0);
        // Class-keyed diagonal grating, high spatial frequency. Orientation
        // and phase are functions of the class; under hf_label_noise the
        // orientation class is occasionally resampled, making the grating an
        // informative but unreliable shortcut.
        let grating_label = if cfg.hf_label_noise > 0.0 && rng.random_range(0.0..1.0) < cfg.hf_label_noise
        {
            rng.random_range(0..cfg.k)
        } else {
            label
        };
        let (gx, gy) = grating_direction(grating_label, cfg.k);
        let phase = std::f64::consts::TAU * grating_label as f64 / cfg.k as f64;
        let background = if cfg.background > 0.0 {
            Some(smooth_plane(&mut rng, side, side))
        } else {
            None
        };
        let img = &mut images[slot * side * side..(slot + 1) * side * side];
        for y in 0..side {
            for x in 0..side {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let mut v = cfg.offset + amp * (-d2 / (2.0 * cfg.sigma * cfg.sigma)).exp();
                if let Some(bg) = &background {
                    v += cfg.background * bg[y * side + x];
                }
                if cfg.hf_amp > 0.0 {
                    v += cfg.hf_amp
                        * (std::f64::consts::TAU * (gx * x as f64 + gy * y as f64) / 2.0 + phase)
                            .sin();
                }
                v += noise.sample(&mut rng);
                img[y * side + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Dataset {
        images,
        n: cfg.n,
        c: 1,
        h: side,
        w: side,
        labels,
        num_classes: cfg.k,
        split: String::new(),
        provenance: format!("blobs:n={},k={},seed={},side={}", cfg.n, cfg.k, cfg.seed, side),
    }
}

fn grating_direction(label: usize, k: usize) -> (f64, f64) {
    let angle = std::f64::consts::PI * label as f64 / k as f64 + 0.3;
    (angle.cos(), angle.sin())
}

/// Smooth random textures whose spectra decay like natural images: white
/// noise pushed through repeated Gaussian blurs, then range-normalized.
/// Labels are all zero; these are profiling inputs, not a classification set.
pub fn synth_textures(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Dataset {
    assert!(n >= 1 && c >= 1, "synth_textures: empty dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * c * h * w);
    for _ in 0..n {
        let base = smooth_plane(&mut rng, h, w);
        for _ in 0..c {
            let own = smooth_plane(&mut rng, h, w);
            for (b, o) in base.iter().zip(own) {
                images.push((0.65 * b + 0.35 * o).clamp(0.0, 1.0));
            }
        }
    }
    Dataset {
        images,
        n,
        c,
        h,
        w,
        labels: vec![0; n],
        num_classes: 1,
        split: String::new(),
        provenance: format!("textures:n={n},c={c},h={h},w={w},seed={seed}"),
    }
}

fn smooth_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let mut plane: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    for _ in 0..3 {
        plane = crate::corruptions::gaussian_blur_plane(&plane, h, w, 1.5);
    }
    let (lo, hi) = plane.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = (hi - lo).max(1e-12);
    plane.iter().map(|&v| (v - lo) / span).collect()
}

// ── Dataset references ──────────────────────────────────────────────────

/// Parses a dataset reference string:
///
/// - `blobs:n=2048,k=4,seed=7[,hf=0.2]`
/// - `textures:n=128,c=3,h=32,w=32,seed=1`
/// - `cifar:<path>`
/// - `idx:<images-path>,<labels-path>[,classes=10]`
pub fn load_ref(r: &str) -> Result<Dataset, DataError> {
    let (kind, rest) = r.split_once(':').ok_or_else(|| DataError::BadRef(r.into()))?;
    let fields = |s: &str| -> Vec<(String, String)> {
        s.split(',')
            .filter(|p| !p.is_empty())
            .filter_map(|p| p.split_once('=').map(|(a, b)| (a.trim().into(), b.trim().into())))
            .collect()
    };
    let get = |kv: &[(String, String)], key: &str| -> Option<String> {
        kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
    };
    let parse_num = |v: Option<String>, default: u64, what: &str| -> Result<u64, DataError> {
        match v {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| DataError::BadRef(format!("{r} (bad {what})"))),
        }
    };
    match kind {
        "blobs" => {
            let kv = fields(rest);
            let mut cfg = BlobsConfig::new(
                parse_num(get(&kv, "n"), 2048, "n")? as usize,
                parse_num(get(&kv, "k"), 4, "k")? as usize,
                parse_num(get(&kv, "seed"), 0, "seed")?,
            );
            if let Some(hf) = get(&kv, "hf") {
                cfg.hf_amp = hf.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            if let Some(amp) = get(&kv, "amp") {
                cfg.amp = amp.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            if let Some(noise) = get(&kv, "noise") {
                cfg.noise = noise.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            if let Some(sigma) = get(&kv, "sigma") {
                cfg.sigma = sigma.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            if let Some(bg) = get(&kv, "bg") {
                cfg.background = bg.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            if let Some(radius) = get(&kv, "radius") {
                cfg.radius = radius.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            if let Some(side) = get(&kv, "side") {
                cfg.side = side.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            if let Some(offset) = get(&kv, "offset") {
                cfg.offset = offset.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            if let Some(p) = get(&kv, "hfnoise") {
                cfg.hf_label_noise = p.parse().map_err(|_| DataError::BadRef(r.into()))?;
            }
            Ok(synth_blobs_cfg(&cfg))
        }
        "textures" => {
            let kv = fields(rest);
            Ok(synth_textures(
                parse_num(get(&kv, "n"), 128, "n")? as usize,
                parse_num(get(&kv, "c"), 3, "c")? as usize,
                parse_num(get(&kv, "h"), 32, "h")? as usize,
                parse_num(get(&kv, "w"), 32, "w")? as usize,
                parse_num(get(&kv, "seed"), 0, "seed")?,
            ))
        }
        "cifar" => load_cifar_bin(Path::new(rest)),
        "idx" => {
            let parts: Vec<&str> = rest.split(',').collect();
            if parts.len() < 2 {
                return Err(DataError::BadRef(r.into()));
            }
            let classes = parts
                .iter()
                .find_map(|p| p.strip_prefix("classes="))
                .map(|v| v.parse().map_err(|_| DataError::BadRef(r.into())))
                .transpose()?
                .unwrap_or(10);
            load_idx(Path::new(parts[0]), Path::new(parts[1]), classes)
        }
        _ => Err(DataError::BadRef(r.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = synth_blobs(101, 4, 9);
        let b = synth_blobs(101, 4, 9);
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
        let mut counts = [0usize; 4];
        for &l in &a.labels {
            counts[l] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "class counts {:?}", counts);
        assert_eq!((a.n, a.c, a.h, a.w), (101, 1, 16, 16));
    }

    #[test]
    fn idx_round_trip_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("imgs.idx");
        let lbls = dir.path().join("lbls.idx");
        let pixels: Vec<u8> = (0..3 * 28 * 28).map(|i| (i % 251) as u8).collect();
        write_idx_images(&imgs, &pixels, 3, 28, 28).unwrap();
        write_idx_labels(&lbls, &[0, 1, 2]).unwrap();
        let ds = load_idx(&imgs, &lbls, 10).unwrap();
        assert_eq!((ds.n, ds.c, ds.h, ds.w), (3, 1, 28, 28));
        for (p, &b) in ds.images.iter().zip(&pixels) {
            assert_eq!(*p, b as f64 / 255.0);
        }
        // Re-quantize and compare bytes.
        let back: Vec<u8> = ds.images.iter().map(|&p| (p * 255.0).round() as u8).collect();
        assert_eq!(back, pixels);
    }

    #[test]
    fn truncated_idx_is_rejected_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("imgs.idx");
        let lbls = dir.path().join("lbls.idx");
        write_idx_images(&imgs, &[7u8; 2 * 4 * 4], 2, 4, 4).unwrap();
        write_idx_labels(&lbls, &[0, 1]).unwrap();
        let bytes = fs::read(&imgs).unwrap();
        fs::write(&imgs, &bytes[..bytes.len() - 5]).unwrap();
        match load_idx(&imgs, &lbls, 2) {
            Err(DataError::Format { .. }) => {}
            other => panic!("expected format error, got {:?}", other.map(|d| d.n)),
        }
    }

    #[test]
    fn cifar_round_trip_and_record_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let ds = synth_textures(4, 3, 32, 32, 3);
        let ds = Dataset { num_classes: 10, ..ds };
        write_cifar_bin(&path, &ds).unwrap();
        let back = load_cifar_bin(&path).unwrap();
        assert_eq!(back.n, 4);
        // Quantization is the only loss.
        for (a, b) in back.images.iter().zip(&ds.images) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // Corrupt the length.
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(load_cifar_bin(&path).is_err());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = dir.path().join("imgs.idx");
        let lbls = dir.path().join("lbls.idx");
        write_idx_images(&imgs, &[0u8; 16], 1, 4, 4).unwrap();
        write_idx_labels(&lbls, &[9]).unwrap();
        assert!(matches!(load_idx(&imgs, &lbls, 4), Err(DataError::LabelRange { .. })));
    }

    #[test]
    fn dataset_refs_parse() {
        let ds = load_ref("blobs:n=10,k=2,seed=1").unwrap();
        assert_eq!((ds.n, ds.num_classes), (10, 2));
        let tx = load_ref("textures:n=2,c=1,h=8,w=8,seed=0").unwrap();
        assert_eq!((tx.n, tx.c, tx.h, tx.w), (2, 1, 8, 8));
        assert!(load_ref("nonsense").is_err());
        assert!(load_ref("nonsense:x").is_err());
    }
}
