//! Byte-exact dataset ingestion: MNIST (IDX) and CIFAR-10 (binary batches),
//! normalization to `[0, 1]`, splits and batching.

use std::fs::File;
use std::io::Read;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

mod fetch;

pub use fetch::{fetch, fetch_sources, FetchSource, Unpack, MIRROR_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loaded dataset: all images in one `N x C x H x W` tensor (train split
/// first, then test), labels as class indices.
pub struct DatasetHandle<T> {
    pub name: String,
    pub images: Tensor<T>,
    pub labels: Vec<u8>,
    pub n_train: usize,
    pub n_test: usize,
}

impl<T: Scalar> std::fmt::Debug for DatasetHandle<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DatasetHandle")
            .field("name", &self.name)
            .field("shape", &self.images.shape())
            .field("n_train", &self.n_train)
            .field("n_test", &self.n_test)
            .finish()
    }
}

impl<T: Scalar> DatasetHandle<T> {
    pub fn from_parts(
        name: &str,
        images: Tensor<T>,
        labels: Vec<u8>,
        n_train: usize,
        n_test: usize,
    ) -> Result<Self> {
        let n = n_train + n_test;
        if images.shape().len() != 4 || images.shape()[0] != n {
            return Err(Error::Format(format!(
                "images shape {:?} does not hold {n} samples",
                images.shape()
            )));
        }
        if labels.len() != n {
            return Err(Error::Format(format!(
                "{} labels for {n} images",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= 10) {
            return Err(Error::Data(format!("label {bad} outside [0, 10)")));
        }
        Ok(DatasetHandle {
            name: name.to_string(),
            images,
            labels,
            n_train,
            n_test,
        })
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.n_train,
            Split::Test => self.n_train..self.n_train + self.n_test,
        }
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split_range(split).len()
    }

    /// `(C, H, W)` of one sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Copies the given samples into a fresh `B x C x H x W` batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let (c, h, w) = self.sample_shape();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i] as usize);
        }
        let t = Tensor::from_vec(data, &[indices.len(), c, h, w]).expect("consistent stride");
        (t, labels)
    }
}

/// Mini-batch stream over one split: a seeded shuffle, then `ceil(N / bs)`
/// batches with the final short batch included.
pub struct Batches<'a, T> {
    ds: &'a DatasetHandle<T>,
    order: Vec<usize>,
    bs: usize,
    cursor: usize,
}

pub fn batches<'a, T: Scalar, R: Rng>(
    ds: &'a DatasetHandle<T>,
    split: Split,
    bs: usize,
    rng: &mut R,
) -> Result<Batches<'a, T>> {
    if bs == 0 {
        return Err(Error::Arg("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = ds.split_range(split).collect();
    order.shuffle(rng);
    Ok(Batches {
        ds,
        order,
        bs,
        cursor: 0,
    })
}

/// Fixed-order batches (evaluation).
pub fn batches_sequential<'a, T: Scalar>(
    ds: &'a DatasetHandle<T>,
    split: Split,
    bs: usize,
) -> Result<Batches<'a, T>> {
    if bs == 0 {
        return Err(Error::Arg("batch size must be at least 1".into()));
    }
    Ok(Batches {
        ds,
        order: ds.split_range(split).collect(),
        bs,
        cursor: 0,
    })
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = (Tensor<T>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.bs).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        Some(self.ds.gather(idx))
    }
}

// ---- MNIST (IDX format) ----------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    if path.exists() {
        File::open(path)?.read_to_end(&mut buf)?;
        return Ok(buf);
    }
    let gz = path.with_extension(match path.extension() {
        Some(e) => format!("{}.gz", e.to_string_lossy()),
        None => "gz".to_string(),
    });
    if gz.exists() {
        let mut dec = flate2::read::GzDecoder::new(File::open(&gz)?);
        dec.read_to_end(&mut buf).map_err(|e| {
            Error::Format(format!("{}: gzip decode failed: {e}", gz.display()))
        })?;
        return Ok(buf);
    }
    Err(Error::Availability(format!(
        "{} not found (also tried {})",
        path.display(),
        gz.display()
    )))
}

fn be_u32(buf: &[u8], offset: usize, what: &str, path: &Path) -> Result<u32> {
    let bytes = buf.get(offset..offset + 4).ok_or_else(|| {
        Error::Format(format!(
            "{}: truncated reading {what} at offset {offset}",
            path.display()
        ))
    })?;
    Ok(u32::from_be_bytes(bytes.try_into().unwrap()))
}

/// Parses an IDX image file (magic `0x00000803`, big-endian dims) into raw
/// bytes plus `(count, rows, cols)`.
pub fn parse_idx_images(buf: &[u8], path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let magic = be_u32(buf, 0, "magic", path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x} at offset 0 (want {IDX_IMAGES_MAGIC:#010x})",
            path.display()
        )));
    }
    let count = be_u32(buf, 4, "image count", path)? as usize;
    let rows = be_u32(buf, 8, "rows", path)? as usize;
    let cols = be_u32(buf, 12, "cols", path)? as usize;
    let need = 16 + count * rows * cols;
    if buf.len() != need {
        return Err(Error::Format(format!(
            "{}: expected {need} bytes for {count} images of {rows}x{cols}, got {} (truncation at offset {})",
            path.display(),
            buf.len(),
            buf.len().min(need)
        )));
    }
    Ok((buf[16..].to_vec(), count, rows, cols))
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(buf: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(buf, 0, "magic", path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic:#010x} at offset 0 (want {IDX_LABELS_MAGIC:#010x})",
            path.display()
        )));
    }
    let count = be_u32(buf, 4, "label count", path)? as usize;
    let need = 8 + count;
    if buf.len() != need {
        return Err(Error::Format(format!(
            "{}: expected {need} bytes for {count} labels, got {} (truncation at offset {})",
            path.display(),
            buf.len(),
            buf.len().min(need)
        )));
    }
    Ok(buf[8..].to_vec())
}

fn load_idx_pair<T: Scalar>(
    dir: &Path,
    images_name: &str,
    labels_name: &str,
) -> Result<(Vec<T>, Vec<u8>, usize)> {
    let images_path = dir.join(images_name);
    let labels_path = dir.join(labels_name);
    let (pixels, count, rows, cols) =
        parse_idx_images(&read_file(&images_path)?, &images_path)?;
    if (rows, cols) != (28, 28) {
        return Err(Error::Format(format!(
            "{}: expected 28x28 images, got {rows}x{cols}",
            images_path.display()
        )));
    }
    let labels = parse_idx_labels(&read_file(&labels_path)?, &labels_path)?;
    if labels.len() != count {
        return Err(Error::Format(format!(
            "{}: {count} images but {} labels",
            labels_path.display(),
            labels.len()
        )));
    }
    let scale = T::from_f64(1.0 / 255.0);
    let data: Vec<T> = pixels
        .iter()
        .map(|&p| T::from_f64(p as f64) * scale)
        .collect();
    Ok((data, labels, count))
}

/// Loads MNIST from `train-images-idx3-ubyte` / `train-labels-idx1-ubyte` /
/// `t10k-...` (raw or `.gz`) under `dir`, scaled into `[0, 1]`.
pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<DatasetHandle<T>> {
    let (mut data, mut labels, n_train) =
        load_idx_pair::<T>(dir, "train-images-idx3-ubyte", "train-labels-idx1-ubyte")?;
    let (test_data, test_labels, n_test) =
        load_idx_pair::<T>(dir, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")?;
    data.extend_from_slice(&test_data);
    labels.extend_from_slice(&test_labels);
    let images = Tensor::from_vec(data, &[n_train + n_test, 1, 28, 28])?;
    DatasetHandle::from_parts("mnist", images, labels, n_train, n_test)
}

// ---- CIFAR-10 (binary batches) ---------------------------------------

/// One CIFAR-10 record: a label byte then channel-planar R, G, B planes.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

/// Splits one binary batch file into labels and channel-planar pixel bytes.
pub fn parse_cifar_batch(buf: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    if buf.is_empty() || !buf.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::Format(format!(
            "{}: length {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
            path.display(),
            buf.len()
        )));
    }
    let n = buf.len() / CIFAR_RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * 3072);
    for rec in buf.chunks_exact(CIFAR_RECORD_BYTES) {
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

fn cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads CIFAR-10 from the six canonical `.bin` batch files under `dir`
/// (or `dir/cifar-10-batches-bin`), scaled into `[0, 1]`.
pub fn load_cifar10<T: Scalar>(dir: &Path) -> Result<DatasetHandle<T>> {
    let dir = cifar_dir(dir);
    let scale = T::from_f64(1.0 / 255.0);
    let mut data: Vec<T> = Vec::new();
    let mut labels: Vec<u8> = Vec::new();
    let mut n_train = 0usize;
    let files: Vec<(String, bool)> = (1..=5)
        .map(|i| (format!("data_batch_{i}.bin"), true))
        .chain(std::iter::once(("test_batch.bin".to_string(), false)))
        .collect();
    let mut n_test = 0usize;
    for (name, is_train) in files {
        let path = dir.join(&name);
        let buf = read_file(&path)?;
        let (batch_labels, pixels) = parse_cifar_batch(&buf, &path)?;
        if is_train {
            n_train += batch_labels.len();
        } else {
            n_test += batch_labels.len();
        }
        labels.extend_from_slice(&batch_labels);
        data.extend(pixels.iter().map(|&p| T::from_f64(p as f64) * scale));
    }
    let images = Tensor::from_vec(data, &[n_train + n_test, 3, 32, 32])?;
    DatasetHandle::from_parts("cifar10", images, labels, n_train, n_test)
}
