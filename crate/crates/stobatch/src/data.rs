//! Dataset ingestion and the fixed disjoint batch plan.
//!
//! Inputs are normalized to the signed range [-1, 1]. Batches are built
//! once, stay disjoint, and never change across epochs: the privacy
//! argument composes per-batch guarantees in parallel, which only holds
//! when every example lives in exactly one fixed batch.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::noise::fnv1a_f64;
use crate::rng::rng_for;

pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// One labeled example: features in [-1, 1]^d, one-hot label.
#[derive(Debug, Clone)]
pub struct Example {
    features: Vec<f64>,
    label: Vec<f64>,
}

impl Example {
    pub fn new(features: Vec<f64>, label: Vec<f64>) -> Result<Self> {
        if let Some(v) = features.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("feature {v} outside [-1, 1]")));
        }
        let ones = label.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || label.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Consistency("label must be one-hot".into()));
        }
        Ok(Self { features, label })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn class(&self) -> usize {
        self.label.iter().position(|&v| v == 1.0).unwrap()
    }

    pub fn one_hot(&self) -> &[f64] {
        &self.label
    }
}

/// Columnar dataset: n x d features with class labels in 0..n_classes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.n_classes];
        y[self.labels[i]] = 1.0;
        y
    }

    /// Seeded shuffle split into (first `n_a`, next `n_b`) examples.
    pub fn split(&self, n_a: usize, n_b: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if n_a + n_b > self.len() {
            return Err(Error::Config(format!(
                "split {}+{} exceeds {} examples",
                n_a,
                n_b,
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng_for("split", seed, &[]));
        let take = |ixs: &[usize]| -> Dataset {
            let rows = ixs.iter().map(|&i| self.features.row(i).to_vec()).collect();
            Dataset {
                features: Matrix::from_rows(rows).expect("uniform row widths"),
                labels: ixs.iter().map(|&i| self.labels[i]).collect(),
                n_classes: self.n_classes,
            }
        };
        Ok((take(&order[..n_a]), take(&order[n_a..n_a + n_b])))
    }
}

fn read_be_u32(bytes: &[u8], off: usize, what: &str) -> Result<u32> {
    let end = off + 4;
    if bytes.len() < end {
        return Err(Error::Format(format!("truncated before {what}")));
    }
    Ok(u32::from_be_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]))
}

/// Load an IDX image file: big-endian magic 0x00000803, then count, rows,
/// cols, then row-major pixel bytes. Returns values in [0, 255].
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Matrix> {
    let bytes = fs::read(path.as_ref())?;
    let magic = read_be_u32(&bytes, 0, "image magic")?;
    if magic != IDX_MAGIC_IMAGES {
        return Err(Error::Format(format!("bad image magic 0x{magic:08x}")));
    }
    let count = read_be_u32(&bytes, 4, "image count")? as usize;
    let rows = read_be_u32(&bytes, 8, "row count")? as usize;
    let cols = read_be_u32(&bytes, 12, "col count")? as usize;
    let pixels = count
        .checked_mul(rows * cols)
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() < pixels {
        return Err(Error::Format(format!(
            "truncated payload: {} pixel bytes, header needs {}",
            payload.len(),
            pixels
        )));
    }
    let data = payload[..pixels].iter().map(|&b| f64::from(b)).collect();
    Matrix::from_flat(count, rows * cols, data)
}

/// Load an IDX label file: big-endian magic 0x00000801, then count, then
/// one label byte per example.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let bytes = fs::read(path.as_ref())?;
    let magic = read_be_u32(&bytes, 0, "label magic")?;
    if magic != IDX_MAGIC_LABELS {
        return Err(Error::Format(format!("bad label magic 0x{magic:08x}")));
    }
    let count = read_be_u32(&bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Format(format!(
            "truncated payload: {} label bytes, header needs {count}",
            payload.len()
        )));
    }
    Ok(payload[..count].to_vec())
}

/// Load a paired image/label set, checking that the counts agree.
pub fn load_idx_pair(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(Matrix, Vec<u8>)> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.rows() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images vs {} labels",
            images.rows(),
            labels.len()
        )));
    }
    Ok((images, labels))
}

/// Affine map [0, 255] -> [-1, 1]: x / 127.5 - 1.
pub fn normalize_signed(raw: &Matrix) -> Result<Matrix> {
    if let Some(v) = raw.as_slice().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::Range(format!("raw value {v} outside [0, 255]")));
    }
    let data = raw.as_slice().iter().map(|v| v / 127.5 - 1.0).collect();
    Matrix::from_flat(raw.rows(), raw.cols(), data)
}

/// k x k average pooling over square images, used to pick the encoder input
/// dimension d independently of the stored image size.
pub fn avg_pool(images: &Matrix, side: usize, k: usize) -> Result<Matrix> {
    if side * side != images.cols() {
        return Err(Error::Shape(format!(
            "images with {} columns are not {side}x{side}",
            images.cols()
        )));
    }
    if k == 0 || side % k != 0 {
        return Err(Error::Config(format!("pool factor {k} does not divide side {side}")));
    }
    let out_side = side / k;
    let mut rows = Vec::with_capacity(images.rows());
    for i in 0..images.rows() {
        let img = images.row(i);
        let mut pooled = vec![0.0; out_side * out_side];
        for (p, cell) in pooled.iter_mut().enumerate() {
            let (pr, pc) = (p / out_side, p % out_side);
            let mut s = 0.0;
            for dr in 0..k {
                for dc in 0..k {
                    s += img[(pr * k + dr) * side + (pc * k + dc)];
                }
            }
            *cell = s / (k * k) as f64;
        }
        rows.push(pooled);
    }
    Matrix::from_rows(rows)
}

/// Seeded, linearly separable Gaussian clusters clipped to [-1, 1]^d,
/// one cluster per class.
pub fn synth_dataset(k: usize, d: usize, n: usize, seed: u64) -> Result<Dataset> {
    if d < 1 || k < 2 {
        return Err(Error::Config(format!("synth dataset needs d >= 1 and k >= 2, got d={d} k={k}")));
    }
    if n < k {
        return Err(Error::Config(format!("n={n} must be at least k={k}")));
    }
    let mut rng = rng_for("synth", seed, &[]);
    // Class centers: unit-ish directions scaled to 0.7, re-drawn until all
    // pairs are at least distance 0.9 apart. With sigma 0.1 the clusters
    // stay separable after clipping.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centers.len() < k {
        let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let cand: Vec<f64> = raw.iter().map(|v| 0.7 * v / norm).collect();
        let ok = centers.iter().all(|c| {
            let dist: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            dist >= 0.9
        });
        if ok {
            centers.push(cand);
        }
    }
    let sigma = 0.1;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let center = &centers[class];
        let row: Vec<f64> = center
            .iter()
            .map(|&c| {
                // Box-Muller normal draw
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                (c + sigma * z).clamp(-1.0, 1.0)
            })
            .collect();
        rows.push(row);
        labels.push(class);
    }
    Ok(Dataset { features: Matrix::from_rows(rows)?, labels, n_classes: k })
}

/// The fixed batch plan: floor(n/m) disjoint batches of exactly m indices,
/// remainder recorded in `dropped`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    batches: Vec<Vec<usize>>,
    m: usize,
    pub seed: u64,
    pub dropped: Vec<usize>,
}

pub fn build_batch_plan(n_examples: usize, m: usize, seed: u64) -> Result<BatchPlan> {
    if m == 0 {
        return Err(Error::Config("batch size m must be >= 1".into()));
    }
    if m > n_examples {
        return Err(Error::Config(format!("batch size {m} exceeds {n_examples} examples")));
    }
    let mut order: Vec<usize> = (0..n_examples).collect();
    order.shuffle(&mut rng_for("plan", seed, &[]));
    let n_batches = n_examples / m;
    let batches = (0..n_batches).map(|b| order[b * m..(b + 1) * m].to_vec()).collect();
    let dropped = order[n_batches * m..].to_vec();
    Ok(BatchPlan { batches, m, seed, dropped })
}

impl BatchPlan {
    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn batch(&self, i: usize) -> &[usize] {
        &self.batches[i]
    }

    /// FNV-1a over the index layout; checked at epoch boundaries to assert
    /// the plan was never regenerated mid-run.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        mix(self.m as u64);
        for b in &self.batches {
            for &ix in b {
                mix(ix as u64);
            }
        }
        for &ix in &self.dropped {
            mix(ix as u64);
        }
        h
    }
}

/// The plan plus every example's perturbed features x + chi1/m, computed
/// from the single training draw. Construction is the only way to obtain
/// one, so adversarial crafting can demand provenance by type.
#[derive(Debug, Clone)]
pub struct PerturbedBatchPlan {
    plan: BatchPlan,
    perturbed: Matrix,
    chi1_fp: u64,
}

/// A batch view into the perturbed features.
#[derive(Debug, Clone)]
pub struct PerturbedBatch<'a> {
    pub indices: &'a [usize],
    plan: &'a PerturbedBatchPlan,
}

impl<'a> PerturbedBatch<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn feature_row(&self, pos: usize) -> &'a [f64] {
        self.plan.perturbed.row(self.indices[pos])
    }
}

pub fn perturb_batches(
    plan: BatchPlan,
    data: &Matrix,
    chi1: &[f64],
    m: usize,
) -> Result<PerturbedBatchPlan> {
    if chi1.len() != data.cols() {
        return Err(Error::Shape(format!(
            "chi1 length {} vs feature dimension {}",
            chi1.len(),
            data.cols()
        )));
    }
    if m != plan.m() {
        return Err(Error::Config(format!("m={m} does not match plan batch size {}", plan.m())));
    }
    let mf = m as f64;
    let mut rows = Vec::with_capacity(data.rows());
    for i in 0..data.rows() {
        rows.push(data.row(i).iter().zip(chi1).map(|(&x, &c)| x + c / mf).collect());
    }
    Ok(PerturbedBatchPlan { plan, perturbed: Matrix::from_rows(rows)?, chi1_fp: fnv1a_f64(chi1) })
}

impl PerturbedBatchPlan {
    pub fn plan(&self) -> &BatchPlan {
        &self.plan
    }

    pub fn n_batches(&self) -> usize {
        self.plan.n_batches()
    }

    pub fn m(&self) -> usize {
        self.plan.m()
    }

    pub fn dim(&self) -> usize {
        self.perturbed.cols()
    }

    pub fn batch(&self, i: usize) -> PerturbedBatch<'_> {
        PerturbedBatch { indices: self.plan.batch(i), plan: self }
    }

    pub fn perturbed_row(&self, example: usize) -> &[f64] {
        self.perturbed.row(example)
    }

    /// Fingerprint of the chi1 used at construction; training verifies it
    /// against the bundle it was handed.
    pub fn chi1_fingerprint(&self) -> u64 {
        self.chi1_fp
    }
}
