//! Dataset ingestion: MNIST IDX files, CIFAR-10 binary batches and seeded
//! synthetic sets.
//!
//! Pixels are scaled from `[0, 255]` to `[-1, 1]` as `p / 127.5 - 1`.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bitops::Shape;
use crate::error::{Error, Result};
use crate::inference::InputTensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Bytes per CIFAR-10 record: one label byte and a 3x32x32 image.
pub const CIFAR_RECORD_BYTES: usize = 3073;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<InputTensor>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<InputTensor>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Consistency(format!(
                "label {bad} outside {class_count} classes"
            )));
        }
        if let Some(first) = samples.first() {
            if samples.iter().any(|s| s.shape != first.shape) {
                return Err(Error::Consistency("samples differ in shape".into()));
            }
        }
        Ok(LabeledDataset {
            samples,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Shape shared by every sample, `None` when empty.
    pub fn sample_shape(&self) -> Option<Shape> {
        self.samples.first().map(|s| s.shape)
    }

    /// The first `n` samples, or all of them if there are fewer.
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            samples: self.samples[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
        }
    }

    /// Splits off the last `fraction` of samples, preserving order.
    pub fn split_tail(&self, fraction: f64) -> (LabeledDataset, LabeledDataset) {
        let tail = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let cut = self.len() - tail;
        let part = |r: std::ops::Range<usize>| LabeledDataset {
            samples: self.samples[r.clone()].to_vec(),
            labels: self.labels[r].to_vec(),
            class_count: self.class_count,
        };
        (part(0..cut), part(cut..self.len()))
    }

    /// Sample count per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

#[inline]
pub fn scale_pixel(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

/// Reads a file, transparently inflating gzip.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct BeReader<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> BeReader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::parse(
                self.pos,
                format!(
                    "{} truncated: need {n} bytes, {} remain",
                    self.what,
                    self.data.len() - self.pos
                ),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let at = self.pos;
        let m = self.u32()?;
        if m != expected {
            return Err(Error::parse(
                at,
                format!(
                    "{}: bad IDX magic {m:#010x}, expected {expected:#010x}",
                    self.what
                ),
            ));
        }
        Ok(())
    }
}

/// Parses an IDX image file: returns samples of shape `1 x rows x cols`.
pub fn parse_idx_images(data: &[u8]) -> Result<Vec<InputTensor>> {
    let mut r = BeReader {
        data,
        pos: 0,
        what: "image file",
    };
    r.magic(IDX_IMAGES_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let shape = Shape::new(1, rows, cols);
    let per = rows * cols;
    if per == 0 {
        return Err(Error::parse(8, "image file: zero-sized images"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let px = r.take(per)?;
        out.push(InputTensor {
            shape,
            data: px.iter().map(|&p| scale_pixel(p)).collect(),
        });
    }
    Ok(out)
}

/// Parses an IDX label file.
pub fn parse_idx_labels(data: &[u8]) -> Result<Vec<usize>> {
    let mut r = BeReader {
        data,
        pos: 0,
        what: "label file",
    };
    r.magic(IDX_LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    Ok(r.take(n)?.iter().map(|&l| l as usize).collect())
}

/// Images only, for benchmarking. Accepts plain or gzipped IDX.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<InputTensor>> {
    parse_idx_images(&read_maybe_gz(path.as_ref())?)
}

/// Loads a labeled IDX pair. The class count is one more than the largest
/// label seen.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledDataset> {
    let samples = load_idx_images(images)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels.as_ref())?)?;
    if samples.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(samples, labels, classes)
}

/// Standard MNIST file names inside `dir`, gzipped or not.
pub fn load_mnist(dir: impl AsRef<Path>, train: bool) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let stem = if train { "train" } else { "t10k" };
    let pick = |kind: &str| {
        let plain = dir.join(format!("{stem}-{kind}"));
        let gz = dir.join(format!("{stem}-{kind}.gz"));
        if plain.exists() {
            plain
        } else {
            gz
        }
    };
    load_idx(pick("images-idx3-ubyte"), pick("labels-idx1-ubyte"))
}

/// Parses CIFAR-10 binary batch records into `3 x 32 x 32` samples.
pub fn parse_cifar10(data: &[u8]) -> Result<LabeledDataset> {
    if !data.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        let whole = data.len() / CIFAR_RECORD_BYTES * CIFAR_RECORD_BYTES;
        return Err(Error::parse(
            whole,
            format!("truncated CIFAR-10 record: {} trailing bytes", data.len() - whole),
        ));
    }
    let shape = Shape::new(3, 32, 32);
    let mut samples = Vec::with_capacity(data.len() / CIFAR_RECORD_BYTES);
    let mut labels = Vec::with_capacity(samples.capacity());
    for (i, rec) in data.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::parse(
                i * CIFAR_RECORD_BYTES,
                format!("CIFAR-10 label {} out of range", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        samples.push(InputTensor {
            shape,
            data: rec[1..].iter().map(|&p| scale_pixel(p)).collect(),
        });
    }
    LabeledDataset::new(samples, labels, 10)
}

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<LabeledDataset> {
    let mut all = LabeledDataset {
        samples: Vec::new(),
        labels: Vec::new(),
        class_count: 10,
    };
    for p in paths {
        let part = parse_cifar10(&read_maybe_gz(p.as_ref())?)?;
        all.samples.extend(part.samples);
        all.labels.extend(part.labels);
    }
    Ok(all)
}

/// Seeded point clouds around distinct hypercube vertices.
///
/// Each class gets a random vertex of `{-1, 1}^dim`; samples are uniform in
/// a ball around it whose radius is below a quarter of the smallest
/// centroid distance, so nearest-centroid (a linear rule) is always right.
/// Labels cycle through the classes. Samples have shape `1 x 1 x dim`.
pub fn synth_separable(dim: usize, classes: usize, n: usize, seed: u64) -> Result<LabeledDataset> {
    if dim == 0 || classes == 0 || n == 0 {
        return Err(Error::invalid("synthetic set needs positive dim, classes and n"));
    }
    if dim < usize::BITS as usize && classes > 1usize << dim {
        return Err(Error::invalid(format!(
            "{classes} classes need more than {dim} dimensions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = synth_centroids(&mut rng, dim, classes);
    let radius = synth_radius(&centroids);
    let shape = Shape::vector(dim);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let dir: Vec<f32> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir
            .iter()
            .map(|v| v * v)
            .sum::<f32>()
            .sqrt()
            .max(f32::MIN_POSITIVE);
        let r = radius * rng.random::<f32>().powf(1.0 / dim as f32);
        let data = centroids[c]
            .iter()
            .zip(&dir)
            .map(|(&m, &d)| m + r * d / norm)
            .collect();
        samples.push(InputTensor { shape, data });
        labels.push(c);
    }
    LabeledDataset::new(samples, labels, classes)
}

fn synth_centroids(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> Vec<Vec<f32>> {
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(classes);
    // Dense sets: walk a shuffled enumeration so the loop always ends.
    if dim <= 16 && classes * 2 > 1 << dim {
        use rand::seq::SliceRandom;
        let mut ids: Vec<usize> = (0..1usize << dim).collect();
        ids.shuffle(rng);
        return ids[..classes]
            .iter()
            .map(|&id| {
                (0..dim)
                    .map(|j| if id >> j & 1 == 1 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
    }
    while out.len() < classes {
        let v: Vec<f32> = (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Cloud radius: strictly less than a quarter of the closest centroid pair.
fn synth_radius(centroids: &[Vec<f32>]) -> f32 {
    let mut min = f32::INFINITY;
    for (i, a) in centroids.iter().enumerate() {
        for b in &centroids[i + 1..] {
            let d = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f32>()
                .sqrt();
            min = min.min(d);
        }
    }
    if min.is_finite() {
        min / 4.5
    } else {
        1.0
    }
}
