//! Datasets: deterministic synthetic generation and IDX loading.
//!
//! The synthetic task is a desk-scale classification benchmark with a knowable
//! robustness ceiling. Each class owns a template image built from a 4×4 cell
//! grid: cell values sit at `0.5 ± margin/2` according to the bits of the
//! class index, identically across channels. Any two distinct templates
//! therefore differ by exactly `margin` in ℓ∞, so a classifier with decision
//! margin above ε exists whenever `margin > 2ε` — which makes "robust accuracy
//! ≥ x at ε" a well-posed target for training tests. Samples are the template
//! plus i.i.d. Gaussian pixel noise, clamped to `[0, 1]`.

use std::io::Read;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Tensor};

/// An in-memory labeled image set.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar = f32> {
    /// `[N, C, H, W]`, values in `[0, 1]`.
    pub images: Tensor<T>,
    /// Class labels, length `N`, each in `[0, class_count)`.
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Checks the container invariants.
    pub fn validate(&self) -> Result<()> {
        let shape = self.images.shape();
        if shape.len() != 4 {
            return Err(Error::Data(format!(
                "images must be [N, C, H, W], got {shape:?}"
            )));
        }
        if shape[0] != self.labels.len() || shape[0] == 0 {
            return Err(Error::Data(format!(
                "{} images vs {} labels",
                shape[0],
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.class_count) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {} classes",
                self.class_count
            )));
        }
        if !self
            .images
            .data()
            .iter()
            .all(|v| v.to_f64() >= 0.0 && v.to_f64() <= 1.0)
        {
            return Err(Error::Data("pixel values escape [0, 1]".into()));
        }
        Ok(())
    }

    /// Assembles a batch from sample indices.
    pub fn gather(&self, idx: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let shape = self.images.shape();
        let sample = shape[1] * shape[2] * shape[3];
        let mut data = Vec::with_capacity(idx.len() * sample);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            assert!(i < self.len(), "sample index {i} out of range");
            data.extend_from_slice(&self.images.data()[i * sample..][..sample]);
            labels.push(self.labels[i]);
        }
        let batch = Tensor::new(
            vec![idx.len(), shape[1], shape[2], shape[3]],
            data,
        );
        (batch, labels)
    }

    /// Converts elementwise through f64.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            class_count: self.class_count,
        }
    }
}

/// Recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub class_count: usize,
    pub per_class: usize,
    pub resolution: usize,
    pub channels: usize,
    /// Exact pairwise ℓ∞ separation of class templates; must exceed twice the
    /// training ε for the robust-classification task to be solvable.
    pub margin: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.class_count > 1 << 16 {
            return Err(Error::Data(format!(
                "class_count {} not in [1, 65536]",
                self.class_count
            )));
        }
        if self.per_class == 0 {
            return Err(Error::Data("per_class must be positive".into()));
        }
        if self.resolution < 4 {
            return Err(Error::Data(
                "resolution must be at least 4 (template cell grid)".into(),
            ));
        }
        if self.channels == 0 {
            return Err(Error::Data("channels must be positive".into()));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(Error::Data(format!(
                "margin {} not in (0, 1]",
                self.margin
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Data("noise_std must be non-negative".into()));
        }
        Ok(())
    }
}

/// The per-class template images, `[class_count, C, H, W]`.
///
/// Cell (i, j) of the 4×4 grid takes value `0.5 + margin/2` when bit
/// `4i + j` of the class index is set, else `0.5 − margin/2`, replicated
/// across channels.
pub fn class_templates<T: Scalar>(spec: &SynthSpec) -> Tensor<T> {
    let (k, c, r) = (spec.class_count, spec.channels, spec.resolution);
    let (hi, lo) = (
        T::from_f64(0.5 + spec.margin / 2.0),
        T::from_f64(0.5 - spec.margin / 2.0),
    );
    let mut data = Vec::with_capacity(k * c * r * r);
    for class in 0..k {
        let mut plane = Vec::with_capacity(r * r);
        for y in 0..r {
            for x in 0..r {
                let cell = (y * 4 / r) * 4 + x * 4 / r;
                let set = class >> cell & 1 == 1;
                plane.push(if set { hi } else { lo });
            }
        }
        for _ in 0..c {
            data.extend_from_slice(&plane);
        }
    }
    Tensor::new(vec![k, c, r, r], data)
}

/// Brute-force minimum pairwise ℓ∞ distance between class templates.
/// By construction this equals `spec.margin` whenever `class_count ≥ 2`.
pub fn template_margin<T: Scalar>(templates: &Tensor<T>) -> f64 {
    let k = templates.shape()[0];
    let sample = templates.numel() / k;
    let mut min = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            let ta = &templates.data()[a * sample..][..sample];
            let tb = &templates.data()[b * sample..][..sample];
            let mut dist = 0.0f64;
            for (&va, &vb) in ta.iter().zip(tb) {
                dist = dist.max((va.to_f64() - vb.to_f64()).abs());
            }
            min = min.min(dist);
        }
    }
    if min.is_finite() {
        min
    } else {
        0.0
    }
}

/// Generates a synthetic split. `split` selects an independent noise stream
/// over the same templates (0 = train, 1 = holdout by convention), so splits
/// share geometry but never samples.
///
/// Returns the dataset and the measured template margin.
pub fn synth_generate<T: Scalar>(spec: &SynthSpec, split: u64) -> Result<(Dataset<T>, f64)> {
    spec.validate()?;
    let templates = class_templates::<T>(spec);
    let margin = template_margin(&templates);
    let (k, c, r) = (spec.class_count, spec.channels, spec.resolution);
    let sample = c * r * r;

    let mut rng: ChaCha8Rng = stream_rng(spec.seed, Stream::Synth { split });
    let n = k * spec.per_class;
    let mut data = Vec::with_capacity(n * sample);
    let mut labels = Vec::with_capacity(n);
    for class in 0..k {
        let template = &templates.data()[class * sample..][..sample];
        for _ in 0..spec.per_class {
            for &t in template {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = (t.to_f64() + z * spec.noise_std).clamp(0.0, 1.0);
                data.push(T::from_f64(v));
            }
            labels.push(class);
        }
    }
    let dataset = Dataset {
        images: Tensor::new(vec![n, c, r, r], data),
        labels,
        class_count: k,
    };
    Ok((dataset, margin))
}

fn read_be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    let end = at + 4;
    if bytes.len() < end {
        return Err(Error::Data(format!("truncated {what}")));
    }
    Ok(u32::from_be_bytes([
        bytes[at],
        bytes[at + 1],
        bytes[at + 2],
        bytes[at + 3],
    ]))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label file pair (the MNIST container format): u8
/// single-channel images scaled to `[0, 1]` as value/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset<f32>> {
    let mut img_bytes = Vec::new();
    std::fs::File::open(images_path)?.read_to_end(&mut img_bytes)?;
    let mut lbl_bytes = Vec::new();
    std::fs::File::open(labels_path)?.read_to_end(&mut lbl_bytes)?;

    let magic = read_be_u32(&img_bytes, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "bad magic {magic:#010x} in image file (want {IDX_IMAGES_MAGIC:#010x})"
        )));
    }
    let n = read_be_u32(&img_bytes, 4, "image header")? as usize;
    let h = read_be_u32(&img_bytes, 8, "image header")? as usize;
    let w = read_be_u32(&img_bytes, 12, "image header")? as usize;
    let payload = &img_bytes[16.min(img_bytes.len())..];
    if payload.len() != n * h * w {
        return Err(Error::Data(format!(
            "truncated image payload: {} bytes for {n}x{h}x{w}",
            payload.len()
        )));
    }

    let lmagic = read_be_u32(&lbl_bytes, 0, "label header")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "bad magic {lmagic:#010x} in label file (want {IDX_LABELS_MAGIC:#010x})"
        )));
    }
    let ln = read_be_u32(&lbl_bytes, 4, "label header")? as usize;
    if ln != n {
        return Err(Error::Data(format!(
            "image count {n} does not match label count {ln}"
        )));
    }
    let lpayload = &lbl_bytes[8.min(lbl_bytes.len())..];
    if lpayload.len() != n {
        return Err(Error::Data(format!(
            "truncated label payload: {} bytes for {n} labels",
            lpayload.len()
        )));
    }
    if n == 0 {
        return Err(Error::Data("empty dataset".into()));
    }

    let images = Tensor::new(
        vec![n, 1, h, w],
        payload.iter().map(|&b| f32::from(b) / 255.0).collect(),
    );
    let labels: Vec<usize> = lpayload.iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().copied().max().unwrap_or(0) + 1;
    Ok(Dataset {
        images,
        labels,
        class_count,
    })
}
