//! The Noise-and-Box task: 32x32 single-channel images of uniform noise, half
//! of which carry an 8x8 square of ones. The label says whether the square
//! is present.

pub mod io;

pub use io::{export_csv, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SorError};
use crate::rng::{stream, unit_f64};
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 32;
pub const BOX_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub noise_ub: f64,
    pub seed: u64,
    /// Statistics already applied to the pixels, if any.
    pub standardized: Option<Standardizer>,
}

/// Images stored as `n x H x W x C` with 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<f64>, meta: DatasetMeta) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(SorError::dim(format!(
                "images {:?} do not match {} labels",
                images.shape(),
                labels.len()
            )));
        }
        if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(SorError::invalid(format!("label {y} is not 0 or 1")));
        }
        Ok(Dataset { images, labels, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// `H x W x C` shape of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn pixels(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Tensor {
        Tensor::new(self.image_shape().to_vec(), self.pixels(i).to_vec()).expect("image shape")
    }
}

/// Draws `n` images. Per image, in stream order: 1024 noise pixels
/// (row-major, each `noise_ub * U[0,1)`), one coin (`U[0,1) < 0.5` stamps a
/// box), then for positives the box row and column, each uniform on `0..=24`.
pub fn generate(n: usize, noise_ub: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(SorError::invalid("dataset size must be at least 1"));
    }
    if !(noise_ub > 0.0 && noise_ub.is_finite()) {
        return Err(SorError::invalid(format!("noise upper bound must be > 0, got {noise_ub}")));
    }
    let mut rng = stream(seed);
    let px = IMAGE_SIZE * IMAGE_SIZE;
    let mut data = Vec::with_capacity(n * px);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = data.len();
        data.extend((0..px).map(|_| noise_ub * unit_f64(&mut rng)));
        let positive = unit_f64(&mut rng) < 0.5;
        if positive {
            stamp_box(&mut data[start..], &mut rng);
        }
        labels.push(if positive { 1.0 } else { 0.0 });
    }
    let images = Tensor::new(vec![n, IMAGE_SIZE, IMAGE_SIZE, 1], data)?;
    Dataset::new(
        images,
        labels,
        DatasetMeta {
            noise_ub,
            seed,
            standardized: None,
        },
    )
}

fn stamp_box(image: &mut [f64], rng: &mut impl RngCore) {
    let top = rng.gen_range(0..=IMAGE_SIZE - BOX_SIZE);
    let left = rng.gen_range(0..=IMAGE_SIZE - BOX_SIZE);
    for y in top..top + BOX_SIZE {
        image[y * IMAGE_SIZE + left..y * IMAGE_SIZE + left + BOX_SIZE].fill(1.0);
    }
}

/// Global pixel mean and sample standard deviation of a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let x = train.images().data();
        if x.len() < 2 {
            return Err(SorError::invalid("need at least two pixels to estimate a deviation"));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(SorError::invalid("training pixels have zero variance"));
        }
        Ok(Standardizer { mean, std })
    }

    /// `(x - mean) / std` on every pixel.
    pub fn apply(&self, data: &Dataset) -> Dataset {
        let pixels = data.images().data().iter().map(|v| (v - self.mean) / self.std).collect();
        let images = Tensor::new(data.images().shape().to_vec(), pixels).expect("same shape");
        Dataset {
            images,
            labels: data.labels.clone(),
            meta: DatasetMeta {
                standardized: Some(*self),
                ..data.meta
            },
        }
    }
}
