//! Labeled grayscale images, the synthetic stand-in task, class-skewed
//! splits, augmentation and the `FND1` text format.

pub mod augment;
pub mod format;
pub mod splits;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentParams};
pub use format::{load_external, load_splits, read_dataset, save_dataset, save_splits, write_dataset, SPLIT_FILES};
pub use splits::{make_splits, partition_by_class, split_pool, synthetic_splits, SkewProtocol};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Label of the healthy, majority class.
pub const MAJORITY: usize = 0;
/// Label of the unhealthy, minority class.
pub const MINORITY: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// Position in the pool the image was drawn from.
    pub id: usize,
    pub label: usize,
    /// `[1×h×w]`, values in `[0, 1]`.
    pub pixels: Tensor<f64>,
}

impl LabeledImage {
    pub fn new(id: usize, label: usize, pixels: Tensor<f64>) -> Result<Self> {
        if label > MINORITY {
            return Err(Error::Config(format!("label {label} is not 0 or 1")));
        }
        if pixels.rank() != 3 || pixels.shape()[0] != 1 {
            return Err(Error::InvalidShape {
                shape: pixels.shape().to_vec(),
                reason: "image must be [1×h×w]".into(),
            });
        }
        if let Some(p) = pixels.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { id, label, pixels })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub majority: usize,
    pub minority: usize,
}

impl ClassCounts {
    pub const fn new(majority: usize, minority: usize) -> Self {
        Self { majority, minority }
    }

    pub fn total(&self) -> usize {
        self.majority + self.minority
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub images: Vec<LabeledImage>,
}

impl DatasetSplit {
    pub fn new(name: impl Into<String>, images: Vec<LabeledImage>) -> Self {
        Self {
            name: name.into(),
            images,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn counts(&self) -> ClassCounts {
        let minority = self.images.iter().filter(|i| i.label == MINORITY).count();
        ClassCounts::new(self.images.len() - minority, minority)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.label).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.id).collect()
    }

    /// Stacks the selected images into a `[m×1×h×w]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f64>> {
        let Some(&first) = indices.first() else {
            return Err(Error::EmptyBatch("DatasetSplit::batch"));
        };
        let shape = self.images[first].pixels.shape().to_vec();
        let mut data = Vec::with_capacity(indices.len() * self.images[first].pixels.len());
        for &i in indices {
            let img = &self.images[i];
            if img.pixels.shape() != shape.as_slice() {
                return Err(Error::shape("DatasetSplit::batch", img.pixels.shape(), &shape));
            }
            data.extend_from_slice(img.pixels.data());
        }
        Tensor::new(vec![indices.len(), shape[0], shape[1], shape[2]], data)
    }
}

/// Train, validation and test splits used by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: DatasetSplit,
    pub val: DatasetSplit,
    pub test: DatasetSplit,
}
