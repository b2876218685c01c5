//! Balanced flooded / non-flooded sampling and stratified splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FeatureTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub n_per_class: usize,
    /// (train, val, test)
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            n_per_class: 811,
            ratios: (0.7, 0.15, 0.15),
            seed: 42,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.ratios;
        for r in [a, b, c] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::InvalidArgument(format!("split ratio {r} outside (0, 1)")));
            }
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split ratios sum to {}", a + b + c)));
        }
        if self.n_per_class == 0 {
            return Err(Error::InvalidArgument("n_per_class must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<i64>,
    pub val: Vec<i64>,
    pub test: Vec<i64>,
    pub provenance: SplitProvenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitProvenance {
    pub seed: u64,
    pub n_per_class: usize,
    pub ratios: (String, String, String),
}

impl DataSplit {
    /// All sampled ids in ascending order.
    pub fn all_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.train.iter().chain(&self.val).chain(&self.test).copied().collect();
        ids.sort_unstable();
        ids
    }
}

/// Per-class split sizes.
///
/// Rule: the training share is floored per class; the validation total is
/// `floor(ratio_val * N)` over the combined sample, dealt to the classes in
/// label order (0 first) as evenly as possible; the test split takes
/// whatever remains. With 811 per class and (0.7, 0.15, 0.15) this gives
/// train 567 + 567, val 122 + 121, test 122 + 123.
pub fn split_sizes(n_per_class: usize, ratios: (f64, f64, f64)) -> [[usize; 3]; 2] {
    // 0.15 * 2000 evaluates to 299.99999999999997
    let floor = |v: f64| (v + 1e-9).floor() as usize;
    let train = floor(ratios.0 * n_per_class as f64).min(n_per_class);
    let total = 2 * n_per_class;
    let val_total = floor(ratios.1 * total as f64).min(2 * (n_per_class - train));
    let val0 = val_total.div_ceil(2);
    let val1 = val_total - val0;
    [
        [train, val0, n_per_class - train - val0],
        [train, val1, n_per_class - train - val1],
    ]
}

pub fn balanced_sample(table: &FeatureTable, spec: &SplitSpec) -> Result<DataSplit> {
    spec.validate()?;
    if !table.has_labels() {
        return Err(Error::InvalidArgument("balanced sampling requires labels on every point".into()));
    }
    let mut by_class: [Vec<i64>; 2] = [Vec::new(), Vec::new()];
    for p in &table.points {
        by_class[p.label.unwrap() as usize].push(p.id);
    }
    for (label, ids) in by_class.iter().enumerate() {
        if ids.len() < spec.n_per_class {
            return Err(Error::InsufficientClass {
                label: label as u8,
                available: ids.len(),
                requested: spec.n_per_class,
            });
        }
    }
    let sizes = split_sizes(spec.n_per_class, spec.ratios);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (label, ids) in by_class.iter_mut().enumerate() {
        // independent of input row order
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let [a, b, _] = sizes[label];
        let chosen = &ids[..spec.n_per_class];
        train.extend_from_slice(&chosen[..a]);
        val.extend_from_slice(&chosen[a..a + b]);
        test.extend_from_slice(&chosen[a + b..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(DataSplit {
        train,
        val,
        test,
        provenance: SplitProvenance {
            seed: spec.seed,
            n_per_class: spec.n_per_class,
            ratios: (
                spec.ratios.0.to_string(),
                spec.ratios.1.to_string(),
                spec.ratios.2.to_string(),
            ),
        },
    })
}
