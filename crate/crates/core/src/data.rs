//! IDX decoding and task construction over MNIST-family datasets.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, IdxError, Result};
use crate::real::Real;
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const CLASSES: usize = 10;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Idx {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> core::result::Result<usize, IdxError> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize),
        None => Err(IdxError::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        }),
    }
}

/// Parses an unsigned-byte IDX container: big-endian magic, big-endian
/// extents, payload.
pub fn parse_idx(bytes: &[u8]) -> core::result::Result<Idx, IdxError> {
    let magic = be_u32(bytes, 0)? as u32;
    let (dims, header) = match magic {
        IMAGES_MAGIC => (vec![be_u32(bytes, 4)?, be_u32(bytes, 8)?, be_u32(bytes, 12)?], 16),
        LABELS_MAGIC => (vec![be_u32(bytes, 4)?], 8),
        other => return Err(IdxError::BadMagic(other)),
    };
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(IdxError::DimensionMismatch {
            expected: usize::MAX,
            actual: bytes.len() - header,
        })?;
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::DimensionMismatch {
            expected: payload,
            actual: bytes.len() - header,
        });
    }
    let data = bytes[header..].to_vec();
    Ok(match magic {
        IMAGES_MAGIC => Idx::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: data,
        },
        _ => Idx::Labels(data),
    })
}

/// Serializes to the IDX byte layout accepted by [`parse_idx`].
pub fn encode_idx(idx: &Idx) -> Vec<u8> {
    let mut out = Vec::new();
    match idx {
        Idx::Images {
            count,
            rows,
            cols,
            pixels,
        } => {
            out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
            for d in [count, rows, cols] {
                out.extend_from_slice(&(*d as u32).to_be_bytes());
            }
            out.extend_from_slice(pixels);
        }
        Idx::Labels(labels) => {
            out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
            out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
            out.extend_from_slice(labels);
        }
    }
    out
}

/// Raw byte `v` mapped to `v / 255 * 2 - 1`.
pub fn scale_pixel<T: Real>(v: u8) -> T {
    T::from_f64(v as f64 / 255.0 * 2.0 - 1.0)
}

fn pixel_table<T: Real>() -> [T; 256] {
    let mut t = [T::zero(); 256];
    for (v, slot) in t.iter_mut().enumerate() {
        *slot = scale_pixel(v as u8);
    }
    t
}

/// Images and labels of one split. Pixels are kept as raw bytes and scaled
/// to `[-1, 1]` when batches are gathered.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(IdxError::CountMismatch {
                images: pixels.len() / PIXELS,
                labels: labels.len(),
            }
            .into());
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= CLASSES) {
            return Err(IdxError::LabelOutOfRange { index, label }.into());
        }
        Ok(LabeledDataset {
            name: name.into(),
            pixels,
            labels,
        })
    }

    pub fn from_idx(name: impl Into<String>, images: Idx, labels: Idx) -> Result<Self> {
        match (images, labels) {
            (
                Idx::Images {
                    count,
                    rows,
                    cols,
                    pixels,
                },
                Idx::Labels(labels),
            ) => {
                if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
                    return Err(IdxError::ImageSize { rows, cols }.into());
                }
                if count != labels.len() {
                    return Err(IdxError::CountMismatch {
                        images: count,
                        labels: labels.len(),
                    }
                    .into());
                }
                Self::new(name, pixels, labels)
            }
            (Idx::Labels(_), _) => Err(IdxError::BadMagic(LABELS_MAGIC).into()),
            (_, Idx::Images { .. }) => Err(IdxError::BadMagic(IMAGES_MAGIC).into()),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        &self.pixels[i * PIXELS..(i + 1) * PIXELS]
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            name: self.name.clone(),
            pixels: self.pixels[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

/// Pixel permutation: permuted image `j` reads original pixel `perm[j]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<u16>);

impl Permutation {
    pub fn identity() -> Self {
        Permutation((0..PIXELS as u16).collect())
    }

    /// Fisher-Yates shuffle from the `(master_seed, task_index)` stream.
    pub fn shuffled(master_seed: u64, task_index: u64) -> Self {
        let mut p: Vec<u16> = (0..PIXELS as u16).collect();
        p.shuffle(&mut rng::stream(master_seed, Purpose::Permutation, task_index));
        Permutation(p)
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p as usize)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u16; self.0.len()];
        for (j, &p) in self.0.iter().enumerate() {
            inv[p as usize] = j as u16;
        }
        Permutation(inv)
    }

    pub fn apply<V: Copy>(&self, image: &[V]) -> Vec<V> {
        self.0.iter().map(|&p| image[p as usize]).collect()
    }
}

/// A dataset seen through a pixel permutation, optionally restricted to a
/// subset of its examples.
#[derive(Debug, Clone)]
pub struct TaskView<'a> {
    dataset: &'a LabeledDataset,
    permutation: Permutation,
    task_index: usize,
    subset: Option<Vec<u32>>,
}

/// Task `0` is the unpermuted dataset; task `k >= 1` uses
/// [`Permutation::shuffled`]`(master_seed, k)`. Train and test splits built
/// with the same arguments share the permutation.
pub fn make_permuted_task(dataset: &LabeledDataset, master_seed: u64, task_index: usize) -> TaskView<'_> {
    let permutation = if task_index == 0 {
        Permutation::identity()
    } else {
        Permutation::shuffled(master_seed, task_index as u64)
    };
    TaskView {
        dataset,
        permutation,
        task_index,
        subset: None,
    }
}

impl<'a> TaskView<'a> {
    /// Unpermuted view of the whole dataset.
    pub fn whole(dataset: &'a LabeledDataset) -> Self {
        make_permuted_task(dataset, 0, 0)
    }

    /// Same permutation, restricted to `indices` of the underlying dataset.
    pub fn with_subset(&self, indices: Vec<u32>) -> Self {
        TaskView {
            dataset: self.dataset,
            permutation: self.permutation.clone(),
            task_index: self.task_index,
            subset: Some(indices),
        }
    }

    pub fn dataset(&self) -> &'a LabeledDataset {
        self.dataset
    }

    pub fn permutation(&self) -> &Permutation {
        &self.permutation
    }

    pub fn task_index(&self) -> usize {
        self.task_index
    }

    pub fn len(&self) -> usize {
        self.subset.as_ref().map_or(self.dataset.len(), |s| s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn resolve(&self, position: usize) -> usize {
        match &self.subset {
            Some(s) => s[position] as usize,
            None => position,
        }
    }

    pub fn label(&self, position: usize) -> u8 {
        self.dataset.labels[self.resolve(position)]
    }

    /// Scaled, permuted images and labels at the given view positions.
    pub fn gather<T: Real>(&self, positions: &[u32]) -> (Tensor<T>, Vec<u8>) {
        let table = pixel_table::<T>();
        let perm = self.permutation.as_slice();
        let mut data = Vec::with_capacity(positions.len() * PIXELS);
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            let i = self.resolve(p as usize);
            let img = self.dataset.image(i);
            data.extend(perm.iter().map(|&src| table[img[src as usize] as usize]));
            labels.push(self.dataset.labels[i]);
        }
        let tensor = Tensor::from_vec(&[positions.len(), PIXELS], data).expect("gather shape");
        (tensor, labels)
    }

    /// Consecutive chunks of at most `size` examples, in view order.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Vec<u32>> + '_ {
        let n = self.len() as u32;
        let size = size.max(1) as u32;
        (0..n).step_by(size as usize).map(move |s| (s..(s + size).min(n)).collect())
    }
}

/// Disjoint class-balanced shards of a training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSplit {
    pub subsets: Vec<Vec<u32>>,
}

impl StreamSplit {
    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }
}

/// Per class, shuffles the example indices and deals them round-robin into
/// `k` subsets. The dealing position carries over from one class to the
/// next so subset sizes stay within one of each other as well.
pub fn make_stream_splits(labels: &[u8], k: usize, seed: u64) -> Result<StreamSplit> {
    if k == 0 {
        return Err(Error::InvalidArgument("number of splits must be >= 1"));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_class: Vec<Vec<u32>> = vec![Vec::new(); 256];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i as u32);
    }
    let min_class = by_class.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
    if k > min_class {
        return Err(Error::TooManySplits { splits: k, min_class });
    }
    let mut subsets = vec![Vec::new(); k];
    let mut dealer = 0usize;
    for (class, mut members) in by_class.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng::stream(seed, Purpose::StreamSplit, class as u64));
        for idx in members {
            subsets[dealer % k].push(idx);
            dealer += 1;
        }
    }
    Ok(StreamSplit { subsets })
}

/// Shuffled example order for one epoch, from the `(seed, stream_index)`
/// stream.
pub fn epoch_order(n: usize, seed: u64, stream_index: u64) -> Vec<u32> {
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut rng::stream(seed, Purpose::EpochOrder, stream_index));
    order
}
