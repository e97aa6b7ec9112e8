use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::IngestError;

use super::interactions::{Interaction, InteractionSet};

/// Per-user train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(IngestError::InvalidRatios(format!(
                "{parts:?} must be finite and non-negative"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IngestError::InvalidRatios(format!("{parts:?} sum to {sum}")));
        }
        Ok(())
    }

    /// `(train, validation, test)` counts for a user with `n` records.
    ///
    /// Validation and test get `round(n * ratio)`; train gets the remainder and
    /// never drops below one record.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let mut val = (n as f64 * self.validation).round() as usize;
        let mut test = (n as f64 * self.test).round() as usize;
        while n > 0 && val + test > n - 1 {
            if test >= val && test > 0 {
                test -= 1;
            } else {
                val -= 1;
            }
        }
        (n - val - test, val, test)
    }
}

/// Train/validation/test partition plus cold-start flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: InteractionSet,
    pub validation: InteractionSet,
    pub test: InteractionSet,
    pub seed: u64,
    pub ratios: SplitRatios,
    /// Threshold used to flag cold users/items, when one was applied.
    pub min_train_count: Option<usize>,
    pub cold_users: BTreeSet<usize>,
    pub cold_items: BTreeSet<usize>,
}

impl SplitBundle {
    pub fn n_users(&self) -> usize {
        self.train.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.train.n_items()
    }
}

/// Seeded per-user shuffle-and-cut split.
pub fn split_dataset(
    interactions: &InteractionSet,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitBundle, IngestError> {
    ratios.validate()?;
    if interactions.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (user, records) in interactions.records_by_user().into_iter().enumerate() {
        if records.is_empty() {
            return Err(IngestError::UserWithoutRecords(user));
        }
        let mut shuffled: Vec<Interaction> = records.to_vec();
        shuffled.shuffle(&mut rng);
        let (_, n_val, n_test) = ratios.counts(shuffled.len());
        let mut it = shuffled.into_iter();
        validation.extend(it.by_ref().take(n_val));
        test.extend(it.by_ref().take(n_test));
        train.extend(it);
    }
    Ok(SplitBundle {
        train: interactions.with_records(train)?,
        validation: interactions.with_records(validation)?,
        test: interactions.with_records(test)?,
        seed,
        ratios,
        min_train_count: None,
        cold_users: BTreeSet::new(),
        cold_items: BTreeSet::new(),
    })
}

/// [`split_dataset`], then flags users (and items) with fewer than
/// `min_train_count` training records as cold.
pub fn cold_start_split(
    interactions: &InteractionSet,
    ratios: SplitRatios,
    min_train_count: usize,
    seed: u64,
) -> Result<SplitBundle, IngestError> {
    if min_train_count == 0 {
        return Err(IngestError::InvalidThreshold);
    }
    let mut bundle = split_dataset(interactions, ratios, seed)?;
    let mut user_counts = vec![0usize; bundle.n_users()];
    let mut item_counts = vec![0usize; bundle.n_items()];
    for r in bundle.train.records() {
        user_counts[r.user] += 1;
        item_counts[r.item] += 1;
    }
    bundle.cold_users = (0..user_counts.len())
        .filter(|&u| user_counts[u] < min_train_count)
        .collect();
    bundle.cold_items = (0..item_counts.len())
        .filter(|&i| item_counts[i] < min_train_count)
        .collect();
    bundle.min_train_count = Some(min_train_count);
    Ok(bundle)
}
