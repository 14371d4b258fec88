//! Desk-scale classifiers built entirely from graph primitives.
//!
//! Convolutions are evaluated as an index gather (im2col) followed by a
//! matmul, and pooling as a gather followed by a matmul with a constant
//! averaging column. Every layer's backward therefore decomposes into the
//! same primitive set, which is what lets the trainer differentiate through
//! a gradient.
//!
//! Two activations are supported: `relu` matches common practice, `softplus`
//! is smooth everywhere and is the one to use when second derivatives are
//! being checked against finite differences.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Softplus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Arch {
    Mlp {
        hidden: Vec<usize>,
    },
    /// Two 3×3 valid convolutions, each followed by the activation and 2×2
    /// average pooling, then one hidden linear layer.
    SmallCnn {
        channels: [usize; 2],
        hidden: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub activation: Activation,
    pub num_classes: usize,
    /// Input shape as (channels, height, width).
    pub input: [usize; 3],
}

impl ModelSpec {
    pub fn small_cnn(input: [usize; 3], num_classes: usize) -> Self {
        ModelSpec {
            arch: Arch::SmallCnn { channels: [16, 32], hidden: 128 },
            activation: Activation::Relu,
            num_classes,
            input,
        }
    }

    pub fn mlp(input: [usize; 3], num_classes: usize, hidden: Vec<usize>) -> Self {
        ModelSpec { arch: Arch::Mlp { hidden }, activation: Activation::Relu, num_classes, input }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Parameter layout (name, shape) in canonical checkpoint order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let [c, h, w] = self.input;
        let k = self.num_classes;
        match &self.arch {
            Arch::Mlp { hidden } => {
                let mut layout = Vec::new();
                let mut prev = c * h * w;
                for (i, &n) in hidden.iter().enumerate() {
                    layout.push((format!("fc{}.w", i + 1), vec![prev, n]));
                    layout.push((format!("fc{}.b", i + 1), vec![n]));
                    prev = n;
                }
                layout.push(("out.w".into(), vec![prev, k]));
                layout.push(("out.b".into(), vec![k]));
                layout
            }
            Arch::SmallCnn { channels: [c1, c2], hidden } => {
                let dims = CnnDims::compute(c, h, w, *c1, *c2);
                vec![
                    ("conv1.w".into(), vec![c * 9, *c1]),
                    ("conv1.b".into(), vec![*c1]),
                    ("conv2.w".into(), vec![c1 * 9, *c2]),
                    ("conv2.b".into(), vec![*c2]),
                    ("fc1.w".into(), vec![dims.features, *hidden]),
                    ("fc1.b".into(), vec![*hidden]),
                    ("out.w".into(), vec![*hidden, k]),
                    ("out.b".into(), vec![k]),
                ]
            }
        }
    }
}

/// Spatial bookkeeping for the two conv/pool stages.
#[derive(Debug, Clone, Copy)]
struct CnnDims {
    conv1: (usize, usize),
    pool1: (usize, usize),
    conv2: (usize, usize),
    features: usize,
}

impl CnnDims {
    fn compute(_c: usize, h: usize, w: usize, _c1: usize, c2: usize) -> CnnDims {
        assert!(h >= 10 && w >= 10, "small-cnn needs at least a 10x10 input, got {}x{}", h, w);
        let conv1 = (h - 2, w - 2);
        let pool1 = (conv1.0 / 2, conv1.1 / 2);
        let conv2 = (pool1.0 - 2, pool1.1 - 2);
        let pool2 = (conv2.0 / 2, conv2.1 / 2);
        assert!(pool2.0 >= 1 && pool2.1 >= 1, "input too small after pooling");
        CnnDims { conv1, pool1, conv2, features: c2 * pool2.0 * pool2.1 }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A classifier: spec plus parameter values. Parameters live as plain arrays
/// and are bound onto a fresh graph for each forward/backward pass.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Param>,
}

impl Model {
    /// Uniform fan-in initialization (`±1/√fan_in`) from a fixed seed.
    pub fn init(spec: ModelSpec, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .param_layout()
            .into_iter()
            .map(|(name, shape)| {
                let fan_in = if shape.len() == 2 { shape[0] } else { shape[0].max(1) };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Param { name, shape, data }
            })
            .collect();
        Model { spec, params }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "set_flat_params: length mismatch");
        let mut off = 0;
        for p in &mut self.params {
            let len = p.data.len();
            p.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
    }

    /// Bind parameters onto `g` as gradient-tracked leaves.
    pub fn bind(&self, g: &Graph) -> BoundModel<'_> {
        self.bind_impl(g, true)
    }

    /// Bind parameters as constants: forward and input gradients only,
    /// cheaper when the parameters are not being trained (attacks, eval).
    pub fn bind_frozen(&self, g: &Graph) -> BoundModel<'_> {
        self.bind_impl(g, false)
    }

    fn bind_impl(&self, g: &Graph, trainable: bool) -> BoundModel<'_> {
        let params = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.var(p.data.clone(), &p.shape)
                } else {
                    g.constant(p.data.clone(), &p.shape)
                }
            })
            .collect();
        BoundModel { spec: &self.spec, params, graph: g.clone() }
    }
}

/// A model materialized on one graph.
pub struct BoundModel<'m> {
    pub spec: &'m ModelSpec,
    pub params: Vec<Tensor>,
    graph: Graph,
}

impl BoundModel<'_> {
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        self.params.iter().collect()
    }

    /// Logits for a batch shaped (n, c, h, w).
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let s = x.shape();
        let [c, h, w] = self.spec.input;
        assert!(
            s.len() == 4 && s[1] == c && s[2] == h && s[3] == w,
            "forward: batch shape {:?} does not match input {:?}",
            s,
            self.spec.input
        );
        let n = s[0];
        match &self.spec.arch {
            Arch::Mlp { hidden } => {
                let mut t = x.reshape(&[n, c * h * w]);
                for i in 0..hidden.len() {
                    t = self.linear(&t, 2 * i);
                    t = self.activate(&t);
                }
                self.linear(&t, 2 * hidden.len())
            }
            Arch::SmallCnn { channels: [c1, c2], hidden: _ } => {
                let dims = CnnDims::compute(c, h, w, *c1, *c2);
                let t = self.conv3x3(x, n, c, (h, w), *c1, 0);
                let t = self.activate(&t);
                let t = avg_pool2(&t, n, *c1, dims.conv1);
                let t = self.conv3x3(&t, n, *c1, dims.pool1, *c2, 2);
                let t = self.activate(&t);
                let t = avg_pool2(&t, n, *c2, dims.conv2);
                let t = t.reshape(&[n, dims.features]);
                let t = self.activate(&self.linear(&t, 4));
                self.linear(&t, 6)
            }
        }
    }

    fn linear(&self, t: &Tensor, param_idx: usize) -> Tensor {
        t.matmul(&self.params[param_idx]).add(&self.params[param_idx + 1])
    }

    fn activate(&self, t: &Tensor) -> Tensor {
        match self.spec.activation {
            Activation::Relu => t.relu(),
            Activation::Softplus => t.softplus(),
        }
    }

    /// Valid 3×3 convolution via im2col gather + matmul, output in NCHW.
    fn conv3x3(
        &self,
        x: &Tensor,
        n: usize,
        c_in: usize,
        (h, w): (usize, usize),
        c_out: usize,
        param_idx: usize,
    ) -> Tensor {
        let (oh, ow) = (h - 2, w - 2);
        let patches = x.gather(im2col_indices(n, c_in, h, w), &[n * oh * ow, c_in * 9]);
        let z = patches.matmul(&self.params[param_idx]).add(&self.params[param_idx + 1]);
        // (n·oh·ow, c_out) -> (n, c_out, oh, ow)
        z.gather(positions_to_nchw(n, c_out, oh * ow), &[n, c_out, oh, ow])
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }
}

/// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
fn avg_pool2(x: &Tensor, n: usize, c: usize, (h, w): (usize, usize)) -> Tensor {
    let (ph, pw) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(n * c * ph * pw * 4);
    for s in 0..n {
        for ci in 0..c {
            let base = (s * c + ci) * h * w;
            for i in 0..ph {
                for j in 0..pw {
                    for di in 0..2 {
                        for dj in 0..2 {
                            idx.push(base + (2 * i + di) * w + (2 * j + dj));
                        }
                    }
                }
            }
        }
    }
    let g = x.graph().clone();
    let quads = x.gather(idx.into(), &[n * c * ph * pw, 4]);
    let quarter = g.constant(vec![0.25; 4], &[4, 1]);
    quads.matmul(&quarter).reshape(&[n, c, ph, pw])
}

fn im2col_indices(n: usize, c: usize, h: usize, w: usize) -> Rc<[usize]> {
    let (oh, ow) = (h - 2, w - 2);
    let mut idx = Vec::with_capacity(n * oh * ow * c * 9);
    for s in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for ci in 0..c {
                    let base = (s * c + ci) * h * w;
                    for ki in 0..3 {
                        for kj in 0..3 {
                            idx.push(base + (i + ki) * w + (j + kj));
                        }
                    }
                }
            }
        }
    }
    idx.into()
}

/// Indices regrouping a (n·positions, channels) matmul output into NCHW.
fn positions_to_nchw(n: usize, channels: usize, positions: usize) -> Rc<[usize]> {
    let mut idx = Vec::with_capacity(n * channels * positions);
    for s in 0..n {
        for ch in 0..channels {
            for p in 0..positions {
                idx.push((s * positions + p) * channels + ch);
            }
        }
    }
    idx.into()
}

/// Per-sample cross-entropy `-yᵀ log softmax(logits)`, shape n×1.
/// Softmax is applied internally through a max-shifted log-sum-exp.
pub fn cross_entropy_each(logits: &Tensor, y: &Tensor) -> Tensor {
    let s = logits.shape();
    assert_eq!(s, y.shape(), "cross_entropy: logits {:?} vs labels {:?}", s, y.shape());
    assert_eq!(s.len(), 2, "cross_entropy: expected 2-D batch");
    let k = s[1];
    y.with_data(|d| {
        for row in d.chunks(k) {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            assert!(
                ones == 1 && ones + zeros == k,
                "cross_entropy: label row is not one-hot: {:?}",
                row
            );
        }
    });
    let logp = logits.sub(&logits.logsumexp_rows());
    y.mul(&logp).row_sums().neg()
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy(logits: &Tensor, y: &Tensor) -> Tensor {
    cross_entropy_each(logits, y).mean()
}

/// Gradient of the summed per-sample loss with respect to the input batch:
/// row `s` is exactly `∇_{x_s} L_cls(x_s, y_s)`. Returned with the graph
/// attached, so losses built on it remain differentiable in the parameters.
pub fn input_jacobian(model: &BoundModel, x: &Tensor, y: &Tensor) -> Tensor {
    let logits = model.forward(x);
    let ce = cross_entropy_each(&logits, y);
    ce.sum().backward(&[x], true).pop().expect("one wrt tensor")
}

// ── Checkpoints ─────────────────────────────────────────────────────────

const CKPT_MAGIC: &[u8; 8] = b"JAFRMDL\0";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed spec block: {0}")]
    Spec(#[from] serde_json::Error),
    #[error("parameter payload length {got} does not match spec ({want})")]
    Payload { got: usize, want: usize },
}

impl Model {
    /// Versioned binary: magic, version, spec as JSON, then the flat `f64`
    /// little-endian payload in canonical parameter order. Round-trips
    /// bit-exactly.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        let spec = serde_json::to_vec(&self.spec)?;
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&(self.num_params() as u64).to_le_bytes());
        for p in &self.params {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, CheckpointError> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            let s = bytes.get(*at..*at + n).ok_or(CheckpointError::BadMagic)?;
            *at += n;
            Ok(s)
        };
        if take(&mut at, 8)? != CKPT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let spec_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let spec: ModelSpec = serde_json::from_slice(take(&mut at, spec_len)?)?;
        let count = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap()) as usize;
        let layout = spec.param_layout();
        let want: usize = layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if count != want || bytes.len() - at != want * 8 {
            return Err(CheckpointError::Payload { got: (bytes.len() - at) / 8, want });
        }
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let n: usize = shape.iter().product();
            let data = take(&mut at, n * 8)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.push(Param { name, shape, data });
        }
        Ok(Model { spec, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(g: &Graph, labels: &[usize], k: usize) -> Tensor {
        let mut data = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            data[i * k + l] = 1.0;
        }
        g.constant(data, &[labels.len(), k])
    }

    #[test]
    fn zero_final_layer_gives_uniform_softmax() {
        let spec = ModelSpec::mlp([1, 4, 4], 10, vec![8]);
        let mut model = Model::init(spec, 1);
        let last = model.params.len() - 2;
        for p in &mut model.params[last..] {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let g = Graph::new();
        let x = g.constant(vec![0.3; 16], &[1, 1, 4, 4]);
        let logits = model.bind_frozen(&g).forward(&x);
        for p in logits.softmax_rows().data() {
            assert!((p - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let spec = ModelSpec::small_cnn([1, 12, 12], 3);
        let model = Model::init(spec, 7);
        let g = Graph::new();
        let a: Vec<f64> = (0..144).map(|i| (i as f64) / 144.0).collect();
        let b: Vec<f64> = (0..144).map(|i| ((i * 7) % 144) as f64 / 144.0).collect();
        let mut batch = a.clone();
        batch.extend_from_slice(&b);
        let bound = model.bind_frozen(&g);
        let both = bound.forward(&g.constant(batch.clone(), &[2, 1, 12, 12])).data();
        let solo_a = bound.forward(&g.constant(a, &[1, 1, 12, 12])).data();
        let solo_b = bound.forward(&g.constant(b, &[1, 1, 12, 12])).data();
        for i in 0..3 {
            assert!((both[i] - solo_a[i]).abs() < 1e-12);
            assert!((both[3 + i] - solo_b[i]).abs() < 1e-12);
        }
        // Swapping batch order permutes outputs identically.
        let mut swapped = batch[144..].to_vec();
        swapped.extend_from_slice(&batch[..144]);
        let sw = bound.forward(&g.constant(swapped, &[2, 1, 12, 12])).data();
        for i in 0..3 {
            assert!((sw[i] - both[3 + i]).abs() < 1e-12);
            assert!((sw[3 + i] - both[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let g = Graph::new();
        let logits = g.constant(vec![0.5; 10], &[1, 10]);
        let y = onehot(&g, &[3], 10);
        let loss = cross_entropy(&logits, &y).item();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logit_drives_loss_to_zero() {
        let g = Graph::new();
        let mut prev = f64::INFINITY;
        for &scale in &[1.0, 4.0, 16.0, 64.0] {
            let mut row = vec![0.0; 5];
            row[2] = scale;
            let logits = g.constant(row, &[1, 5]);
            let y = onehot(&g, &[2], 5);
            let loss = cross_entropy(&logits, &y).item();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    #[should_panic(expected = "not one-hot")]
    fn rejects_soft_labels() {
        let g = Graph::new();
        let logits = g.constant(vec![0.0, 0.0], &[1, 2]);
        let y = g.constant(vec![0.5, 0.5], &[1, 2]);
        let _ = cross_entropy(&logits, &y);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::init(ModelSpec::small_cnn([3, 12, 12], 4), 99);
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back.spec, model.spec);
        for (a, b) in back.flat_params().iter().zip(model.flat_params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = Model::init(ModelSpec::mlp([1, 4, 4], 2, vec![4]), 0);
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(Model::load(&path).is_err());
    }
}
