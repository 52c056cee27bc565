use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_synthetic, ClassCounts, DatasetSplit, LabeledImage, Splits, MAJORITY, MINORITY};
use crate::error::{Error, Result};

/// Per-split class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkewProtocol {
    pub train: ClassCounts,
    pub val: ClassCounts,
    pub test: ClassCounts,
}

impl Default for SkewProtocol {
    /// 1000/10 train, 150/7 validation, 150/150 test.
    fn default() -> Self {
        Self {
            train: ClassCounts::new(1000, 10),
            val: ClassCounts::new(150, 7),
            test: ClassCounts::new(150, 150),
        }
    }
}

impl SkewProtocol {
    pub fn required(&self) -> ClassCounts {
        ClassCounts::new(
            self.train.majority + self.val.majority + self.test.majority,
            self.train.minority + self.val.minority + self.test.minority,
        )
    }
}

/// Samples disjoint splits without replacement from per-class pools.
///
/// Each split lists its images in ascending pool id.
pub fn make_splits(
    majority_pool: &[LabeledImage],
    minority_pool: &[LabeledImage],
    protocol: &SkewProtocol,
    seed: u64,
) -> Result<Splits> {
    let need = protocol.required();
    if majority_pool.len() < need.majority {
        return Err(Error::InsufficientPool {
            class: "majority",
            required: need.majority,
            available: majority_pool.len(),
        });
    }
    if minority_pool.len() < need.minority {
        return Err(Error::InsufficientPool {
            class: "minority",
            required: need.minority,
            available: minority_pool.len(),
        });
    }
    if majority_pool.iter().any(|i| i.label != MAJORITY) || minority_pool.iter().any(|i| i.label != MINORITY) {
        return Err(Error::Config("class pools contain mislabeled images".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut majority: Vec<usize> = (0..majority_pool.len()).collect();
    let mut minority: Vec<usize> = (0..minority_pool.len()).collect();
    majority.shuffle(&mut rng);
    minority.shuffle(&mut rng);

    let take = |counts: ClassCounts, name: &str, offsets: &mut (usize, usize)| {
        let mut images: Vec<LabeledImage> = majority[offsets.0..offsets.0 + counts.majority]
            .iter()
            .map(|&i| majority_pool[i].clone())
            .chain(
                minority[offsets.1..offsets.1 + counts.minority]
                    .iter()
                    .map(|&i| minority_pool[i].clone()),
            )
            .collect();
        offsets.0 += counts.majority;
        offsets.1 += counts.minority;
        images.sort_by_key(|i| i.id);
        DatasetSplit::new(name, images)
    };
    let mut offsets = (0, 0);
    let train = take(protocol.train, "train", &mut offsets);
    let val = take(protocol.val, "val", &mut offsets);
    let test = take(protocol.test, "test", &mut offsets);
    Ok(Splits { train, val, test })
}

/// Generates a synthetic pool exactly large enough for `protocol` and splits
/// it. The pool and the split draw use independent streams of `seed`.
pub fn synthetic_splits(protocol: &SkewProtocol, seed: u64) -> Result<Splits> {
    let need = protocol.required();
    split_pool(&generate_synthetic(need.majority, need.minority, seed), protocol, seed)
}

/// Partitions a mixed pool by label and splits it on a stream of `seed`
/// independent of the one that generated the pool.
pub fn split_pool(pool: &[LabeledImage], protocol: &SkewProtocol, seed: u64) -> Result<Splits> {
    let (majority, minority) = partition_by_class(pool);
    make_splits(&majority, &minority, protocol, seed ^ SPLIT_STREAM)
}

const SPLIT_STREAM: u64 = 0x5EED_5911_7000_0001;

/// Splits a mixed pool by label.
pub fn partition_by_class(pool: &[LabeledImage]) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    pool.iter().cloned().partition(|i| i.label == MAJORITY)
}
