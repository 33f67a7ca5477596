//! Dataset arguments.
//!
//! A dataset is named by one of:
//! - `mnist`: the MNIST files under `$EBNN_MNIST_DIR`, else `data/mnist`
//! - a directory holding MNIST IDX files (plain or gzipped)
//! - an IDX image file, with labels from `--labels`
//! - `cifar:DIR`: the CIFAR-10 binary batches in `DIR`
//! - `synth:DIM:CLASSES:N[:SEED]`: separable points, split 80/20

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ebnn::dataio::{load_cifar10, load_idx, load_idx_images, load_mnist, synth_separable};
use ebnn::{InputTensor, LabeledDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("EBNN_MNIST_DIR").map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from)
}

fn synth(spec: &str, split: Split) -> Result<LabeledDataset> {
    let parts: Vec<&str> = spec.split(':').collect();
    if !(4..=5).contains(&parts.len()) {
        bail!("synthetic data is synth:DIM:CLASSES:N[:SEED], got {spec:?}");
    }
    let num =
        |s: &str, what: &str| -> Result<usize> { s.parse().with_context(|| format!("bad {what} {s:?}")) };
    let dim = num(parts[1], "dimension")?;
    let classes = num(parts[2], "class count")?;
    let n = num(parts[3], "sample count")?;
    let seed = parts.get(4).map_or(Ok(0), |s| num(s, "seed"))? as u64;
    let all = synth_separable(dim, classes, n, seed)?;
    let (train, test) = all.split_tail(0.2);
    Ok(match split {
        Split::Train => train,
        Split::Test => test,
    })
}

fn cifar(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let names: Vec<PathBuf> = match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    Ok(load_cifar10(&names)?)
}

/// Loads a labeled split.
pub fn load(spec: &str, labels: Option<&Path>, split: Split) -> Result<LabeledDataset> {
    let train = split == Split::Train;
    let data = if spec == "mnist" {
        load_mnist(mnist_dir(), train)?
    } else if spec.starts_with("synth:") {
        synth(spec, split)?
    } else if let Some(dir) = spec.strip_prefix("cifar:") {
        cifar(Path::new(dir), split)?
    } else {
        let path = Path::new(spec);
        if path.is_dir() {
            load_mnist(path, train)?
        } else if let Some(labels) = labels {
            load_idx(path, labels)?
        } else {
            bail!("{spec}: an IDX image file needs --labels");
        }
    };
    if data.is_empty() {
        bail!("{spec}: no samples");
    }
    Ok(data)
}

/// Loads samples only; labels are optional for an IDX image file.
pub fn load_samples(spec: &str, labels: Option<&Path>, split: Split) -> Result<Vec<InputTensor>> {
    let path = Path::new(spec);
    if labels.is_none() && path.is_file() {
        let x = load_idx_images(path)?;
        if x.is_empty() {
            bail!("{spec}: no samples");
        }
        return Ok(x);
    }
    Ok(load(spec, labels, split)?.samples)
}
