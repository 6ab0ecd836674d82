use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Train/validation/test partition, stored as sorted sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    All,
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::All => "all",
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SplitName::All),
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Invalid(format!("unknown split '{s}'"))),
        }
    }
}

/// Percentages of the validation and test shares; train takes the rest.
const VAL_PERCENT: usize = 16;
const TEST_PERCENT: usize = 20;

/// `round(n * pct / 100)` with exact halves rounded down, so the slack lands
/// in the train share.
fn share(n: usize, pct: usize) -> (usize, usize) {
    let num = n * pct;
    (num / 100, num % 100)
}

fn round_half_down(n: usize, pct: usize) -> usize {
    let (q, r) = share(n, pct);
    if r > 50 {
        q + 1
    } else {
        q
    }
}

impl SplitAssignment {
    pub fn get(&self, name: SplitName) -> Option<&[usize]> {
        match name {
            SplitName::All => None,
            SplitName::Train => Some(&self.train),
            SplitName::Val => Some(&self.val),
            SplitName::Test => Some(&self.test),
        }
    }

    pub fn ids<'a>(&self, dataset: &'a Dataset, name: SplitName) -> Vec<&'a str> {
        match self.get(name) {
            Some(idx) => idx.iter().map(|&i| dataset.samples[i].sample_id.as_str()).collect(),
            None => dataset.samples.iter().map(|s| s.sample_id.as_str()).collect(),
        }
    }

    /// Checks that the three parts partition `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return Err(Error::Invalid(format!("split is not a partition at index {i}")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Invalid("split does not cover the dataset".into()));
        }
        Ok(())
    }
}

/// Class-stratified 64/16/20 split, deterministic in `seed`.
///
/// Split totals are rounded with halves going to train. Each class gets the
/// floor of its exact share and the remaining slots go to the classes with
/// the largest fractional remainders (lowest class index on ties).
pub fn split_dataset(dataset: &Dataset, seed: u64) -> Result<SplitAssignment> {
    let n = dataset.len();
    if n < 5 {
        return Err(Error::Invalid(format!(
            "cannot split {n} samples into non-empty train/val/test sets (need at least 5)"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();

    let val_quota = apportion(&sizes, VAL_PERCENT, round_half_down(n, VAL_PERCENT), &vec![0; sizes.len()]);
    let test_quota = apportion(&sizes, TEST_PERCENT, round_half_down(n, TEST_PERCENT), &val_quota);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitAssignment {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        let (v, t) = (val_quota[c], test_quota[c]);
        split.val.extend_from_slice(&members[..v]);
        split.test.extend_from_slice(&members[v..v + t]);
        split.train.extend_from_slice(&members[v + t..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Largest-remainder apportionment of `total` slots over classes, with at
/// most `sizes[c] - taken[c]` slots per class.
fn apportion(sizes: &[usize], pct: usize, total: usize, taken: &[usize]) -> Vec<usize> {
    let mut quota: Vec<usize> = sizes.iter().map(|&s| share(s, pct).0).collect();
    let mut left = total.saturating_sub(quota.iter().sum());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| share(sizes[b], pct).1.cmp(&share(sizes[a], pct).1).then(a.cmp(&b)));
    // a second sweep only matters when capacity blocked the first
    while left > 0 {
        let before = left;
        for &c in &order {
            if left == 0 {
                break;
            }
            if quota[c] + taken[c] < sizes[c] {
                quota[c] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    quota
}
