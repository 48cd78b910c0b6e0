//! Synthetic stand-in dataset: grayscale textured backgrounds with 0-3
//! bright elliptical blobs, exact half-maximum ground-truth masks,
//! histogram equalization, labeled-fraction subsetting and fold making.

mod equalize;
mod generate;
pub mod manifest;
pub mod pgm;

pub use equalize::hist_equalize;
pub use generate::{generate_dataset, generate_image, Blob, ShapeConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("need at least {k} labeled samples for {k} folds, got {n}")]
    TooFewLabeled { n: usize, k: usize },
    #[error("unsupported labeled fraction {0}; expected one of 0.25, 0.5, 0.75, 1.0")]
    BadFraction(f64),
    #[error("fold count must be >= 2, got {0}")]
    BadFoldCount(usize),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad {what} file {path}, line {line}: {detail}")]
    Parse { what: &'static str, path: String, line: usize, detail: String },
}

/// Single-channel image with pixels in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGrid {
    pub id: u64,
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f32>,
}

impl SampleGrid {
    pub fn new(id: u64, h: usize, w: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), h * w);
        debug_assert!(pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        SampleGrid { id, h, w, pixels }
    }
}

/// Binary pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskGrid {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<u8>,
}

impl MaskGrid {
    pub fn new(h: usize, w: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), h * w);
        debug_assert!(pixels.iter().all(|&p| p <= 1));
        MaskGrid { h, w, pixels }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        MaskGrid { h, w, pixels: vec![0; h * w] }
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0)
    }

    /// Number of 4-connected foreground components.
    pub fn lesion_count(&self) -> usize {
        crate::metrics::connected_components(self).len()
    }
}

/// Labeled/unlabeled corpus plus an optional fold partition of labeled ids.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub labeled: Vec<(SampleGrid, MaskGrid)>,
    pub unlabeled: Vec<SampleGrid>,
    pub folds: Vec<Vec<u64>>,
    pub labeled_fraction: f64,
}

pub const SUPPORTED_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Keep round(fraction * n) labeled pairs chosen by a seeded shuffle.
/// Subsets are nested across fractions for the same seed.
pub fn subset_labeled(split: &DatasetSplit, fraction: f64, seed: u64) -> Result<DatasetSplit, SynthError> {
    if !SUPPORTED_FRACTIONS.iter().any(|&f| (f - fraction).abs() < 1e-9) {
        return Err(SynthError::BadFraction(fraction));
    }
    let n = split.labeled.len();
    let keep = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kept: Vec<usize> = order.into_iter().take(keep).collect();
    kept.sort_unstable();
    Ok(DatasetSplit {
        labeled: kept.iter().map(|&i| split.labeled[i].clone()).collect(),
        unlabeled: split.unlabeled.clone(),
        folds: Vec::new(),
        labeled_fraction: fraction,
    })
}

/// Partition labeled ids into k folds with sizes differing by at most one.
///
/// Folds are stratified by foreground area: images are sorted by mask
/// size and dealt into folds one block at a time with a freshly shuffled
/// fold order per block, so every fold holds a representative mix of
/// empty, small and large lesions. This keeps held-out folds comparable
/// in difficulty, which matters when fold means are compared across
/// methods with an unpaired test.
pub fn make_folds(split: &DatasetSplit, k: usize, repeat_seed: u64) -> Result<Vec<Vec<u64>>, SynthError> {
    if k < 2 {
        return Err(SynthError::BadFoldCount(k));
    }
    if split.labeled.len() < k {
        return Err(SynthError::TooFewLabeled { n: split.labeled.len(), k });
    }
    let mut order: Vec<usize> = (0..split.labeled.len()).collect();
    order.sort_by_key(|&i| (split.labeled[i].1.foreground_count(), split.labeled[i].0.id));
    let mut rng = ChaCha8Rng::seed_from_u64(repeat_seed);
    let mut folds = vec![Vec::new(); k];
    for block in order.chunks(k) {
        let mut slots: Vec<usize> = (0..k).collect();
        slots.shuffle(&mut rng);
        for (j, &i) in block.iter().enumerate() {
            folds[slots[j]].push(split.labeled[i].0.id);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// FNV-1a digest over every pixel of every image and mask, in id order.
pub fn dataset_digest(split: &DatasetSplit) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for (img, mask) in &split.labeled {
        for b in img.id.to_le_bytes() {
            eat(b);
        }
        for p in &img.pixels {
            for b in p.to_bits().to_le_bytes() {
                eat(b);
            }
        }
        for p in &mask.pixels {
            eat(*p);
        }
    }
    for img in &split.unlabeled {
        for b in img.id.to_le_bytes() {
            eat(b);
        }
        for p in &img.pixels {
            for b in p.to_bits().to_le_bytes() {
                eat(b);
            }
        }
    }
    h
}
