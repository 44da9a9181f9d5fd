//! IDX (MNIST, Fashion-MNIST) and CIFAR binary loaders, one-hot targets and
//! seeded batch streams.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use flate2::read::GzDecoder;
use ndarray::{Array1, Array2, ShapeBuilder};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ChannelNorm, DatasetConfig, DatasetKind};
use crate::error::{Error, Result};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images stored one sample per column, contiguous per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.nrows()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.images = self.images.slice(ndarray::s![.., ..n]).to_owned();
            self.labels.truncate(n);
        }
    }

    /// Gathers the given samples into a batch.
    pub fn batch<F: Real>(&self, indices: &[usize]) -> Batch<F> {
        let b = indices.len();
        let mut x = Array2::<F>::zeros((self.dim(), b));
        let mut y = Array2::<F>::zeros((self.num_classes, b));
        let mut labels = Vec::with_capacity(b);
        for (j, &i) in indices.iter().enumerate() {
            x.column_mut(j)
                .zip_mut_with(&self.images.column(i), |d, &s| *d = F::of(s));
            y[[self.labels[i], j]] = F::one();
            labels.push(self.labels[i]);
        }
        Batch { x, y, labels }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch<F: Real = f64> {
    pub x: Array2<F>,
    pub y: Array2<F>,
    pub labels: Vec<usize>,
}

pub fn one_hot<F: Real>(label: usize, num_classes: usize) -> Result<Array1<F>> {
    if label >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside 0..{num_classes}"
        )));
    }
    let mut v = Array1::zeros(num_classes);
    v[label] = F::one();
    Ok(v)
}

/// Reads a whole file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut raw = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut raw)
        .map_err(|e| Error::data(path, e.to_string()))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::data(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::data(path, "truncated header"))
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Parses an IDX image/label pair; pixels are scaled into `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = read_maybe_gz(images)?;
    let lab = read_maybe_gz(labels)?;

    let magic = be_u32(&img, 0, images)?;
    if magic != IDX_IMAGES {
        return Err(Error::data(
            images,
            format!("bad magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        ));
    }
    let magic = be_u32(&lab, 0, labels)?;
    if magic != IDX_LABELS {
        return Err(Error::data(
            labels,
            format!("bad magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        ));
    }

    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let dim = rows * cols;
    let pixels = img
        .get(16..16 + n * dim)
        .ok_or_else(|| Error::data(images, format!("truncated: expected {n} images of {dim} bytes")))?;

    let n_labels = be_u32(&lab, 4, labels)? as usize;
    if n_labels != n {
        return Err(Error::data(labels, format!("{n_labels} labels for {n} images")));
    }
    let raw_labels = lab
        .get(8..8 + n)
        .ok_or_else(|| Error::data(labels, format!("truncated: expected {n} labels")))?;
    let labels_vec: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let num_classes = 10;
    if let Some(bad) = labels_vec.iter().find(|&&l| l >= num_classes) {
        return Err(Error::data(labels, format!("label {bad} outside 0..{num_classes}")));
    }

    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = Array2::from_shape_vec((dim, n).f(), data).expect("length checked above");
    Ok(Dataset {
        images,
        labels: labels_vec,
        num_classes,
        split,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

const CIFAR_PIXELS: usize = 3072;

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Parses CIFAR binary batches (label byte(s) then 1024 R, G and B bytes per
/// record). CIFAR-100 records carry a coarse and a fine label; the fine label
/// is used.
pub fn load_cifar(paths: &[PathBuf], variant: CifarVariant, norm: &ChannelNorm, split: Split) -> Result<Dataset> {
    let record = variant.label_bytes() + CIFAR_PIXELS;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_maybe_gz(path)?;
        if bytes.len() % record != 0 {
            return Err(Error::data(
                path,
                format!("truncated record: {} bytes is not a multiple of {record}", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(record) {
            let label = rec[variant.label_bytes() - 1] as usize;
            if label >= variant.num_classes() {
                return Err(Error::data(
                    path,
                    format!("label {label} outside 0..{}", variant.num_classes()),
                ));
            }
            labels.push(label);
            let pixels = &rec[variant.label_bytes()..];
            data.extend(pixels.iter().enumerate().map(|(i, &p)| {
                let c = i / 1024;
                (p as f64 / 255.0 - norm.mean[c]) / norm.std[c]
            }));
        }
    }
    let n = labels.len();
    let images = Array2::from_shape_vec((CIFAR_PIXELS, n).f(), data).expect("whole records only");
    Ok(Dataset {
        images,
        labels,
        num_classes: variant.num_classes(),
        split,
    })
}

/// Inverse of the CIFAR channel normalization, back to `[0, 1]` pixels.
pub fn denormalize_cifar(x: &Array2<f64>, norm: &ChannelNorm) -> Array2<f64> {
    let mut out = x.clone();
    for ((i, _), v) in out.indexed_iter_mut() {
        let c = i / 1024;
        *v = *v * norm.std[c] + norm.mean[c];
    }
    out
}

fn find_file(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    for name in names {
        for candidate in [dir.join(name), dir.join(format!("{name}.gz"))] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
    }
    Err(Error::data(dir, format!("none of {names:?} found")))
}

/// Loads one split of the dataset described by `cfg`, honouring its limits.
pub fn load_dataset(cfg: &DatasetConfig, split: Split) -> Result<Dataset> {
    let dir = &cfg.dir;
    let mut ds = match cfg.kind {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let prefix = if split == Split::Train { "train" } else { "t10k" };
            let images = find_file(
                dir,
                &[
                    &format!("{prefix}-images-idx3-ubyte"),
                    &format!("{prefix}-images.idx3-ubyte"),
                ],
            )?;
            let labels = find_file(
                dir,
                &[
                    &format!("{prefix}-labels-idx1-ubyte"),
                    &format!("{prefix}-labels.idx1-ubyte"),
                ],
            )?;
            load_idx(&images, &labels, split)?
        }
        DatasetKind::Cifar10 => {
            let files = match split {
                Split::Train => (1..=5)
                    .map(|i| find_file(dir, &[&format!("data_batch_{i}.bin")]))
                    .collect::<Result<Vec<_>>>()?,
                Split::Test => vec![find_file(dir, &["test_batch.bin"])?],
            };
            load_cifar(&files, CifarVariant::Cifar10, &cfg.normalization, split)?
        }
        DatasetKind::Cifar100 => {
            let name = if split == Split::Train { "train.bin" } else { "test.bin" };
            load_cifar(
                &[find_file(dir, &[name])?],
                CifarVariant::Cifar100,
                &cfg.normalization,
                split,
            )?
        }
    };
    let limit = match split {
        Split::Train => cfg.train_limit,
        Split::Test => cfg.test_limit,
    };
    if let Some(n) = limit {
        ds.truncate(n);
    }
    Ok(ds)
}

/// Sample order for one epoch, fixed by `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Shuffled mini-batches for one epoch; the final short batch is kept.
pub struct BatchStream<'a, F: Real> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Real> Iterator for BatchStream<'_, F> {
    type Item = Batch<F>;

    fn next(&mut self) -> Option<Batch<F>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.data.batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl<F: Real> ExactSizeIterator for BatchStream<'_, F> {}

pub fn batch_stream<F: Real>(data: &Dataset, batch_size: usize, seed: u64, epoch: usize) -> BatchStream<'_, F> {
    assert!(batch_size > 0, "batch size must be positive");
    BatchStream {
        data,
        order: epoch_permutation(data.len(), seed, epoch),
        batch_size,
        pos: 0,
        _marker: std::marker::PhantomData,
    }
}

/// Sequential, unshuffled batches (for evaluation).
pub fn sequential_batches<F: Real>(data: &Dataset, batch_size: usize) -> impl Iterator<Item = Batch<F>> + '_ {
    let n = data.len();
    (0..n.div_ceil(batch_size)).map(move |i| {
        let idx: Vec<usize> = (i * batch_size..((i + 1) * batch_size).min(n)).collect();
        data.batch(&idx)
    })
}

/// Fills a bounded queue from `iter` on a helper thread while `consume`
/// drains it in order.
pub fn prefetched<T, I, R>(iter: I, depth: usize, consume: impl FnOnce(&mut dyn Iterator<Item = T>) -> R) -> R
where
    T: Send,
    I: Iterator<Item = T> + Send,
{
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel(depth.max(1));
        scope.spawn(move || {
            for item in iter {
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        consume(&mut rx.into_iter())
    })
}
