use std::collections::HashSet;

use rand::Rng;

use crate::error::TrainError;
use crate::ingest::InteractionSet;

/// Per-user sets of training positives.
#[derive(Debug, Clone)]
pub struct PositiveIndex {
    n_items: usize,
    sorted: Vec<Vec<usize>>,
    lookup: Vec<HashSet<usize>>,
}

impl PositiveIndex {
    pub fn new(train: &InteractionSet) -> Self {
        let sorted = train.items_by_user();
        let lookup = sorted.iter().map(|items| items.iter().copied().collect()).collect();
        Self {
            n_items: train.n_items(),
            sorted,
            lookup,
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_users(&self) -> usize {
        self.sorted.len()
    }

    /// Sorted training positives of `user`.
    pub fn items(&self, user: usize) -> &[usize] {
        &self.sorted[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.lookup[user].contains(&item)
    }

    /// Draws one uniform item outside the user's positives.
    pub fn sample_negative<R: Rng + ?Sized>(&self, user: usize, rng: &mut R) -> Result<usize, TrainError> {
        let n_pos = self.sorted[user].len();
        if n_pos >= self.n_items {
            return Err(TrainError::NoNegativeAvailable(user));
        }
        // Rejection sampling while positives are a minority, otherwise index
        // straight into the complement.
        if n_pos * 2 <= self.n_items {
            loop {
                let j = rng.random_range(0..self.n_items);
                if !self.lookup[user].contains(&j) {
                    return Ok(j);
                }
            }
        }
        let mut rank = rng.random_range(0..self.n_items - n_pos);
        for &p in &self.sorted[user] {
            if p <= rank {
                rank += 1;
            } else {
                break;
            }
        }
        Ok(rank)
    }
}

/// `count` negatives for `user`, uniform over non-positives, with replacement.
pub fn sample_negatives<R: Rng + ?Sized>(
    index: &PositiveIndex,
    user: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>, TrainError> {
    (0..count).map(|_| index.sample_negative(user, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn index(n_items: usize, positives: &[usize]) -> PositiveIndex {
        PositiveIndex::new(&InteractionSet::from_pairs(1, n_items, positives.iter().map(|&i| (0, i))).unwrap())
    }

    #[test]
    fn forced_support() {
        let positives: Vec<usize> = (0..10).filter(|&i| i != 7).collect();
        let idx = index(10, &positives);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_negatives(&idx, 0, 50, &mut rng).unwrap().iter().all(|&j| j == 7));
    }

    #[test]
    fn never_returns_a_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for positives in [vec![0, 3, 4], (0..15).collect::<Vec<_>>()] {
            let idx = index(20, &positives);
            for j in sample_negatives(&idx, 0, 100_000, &mut rng).unwrap() {
                assert!(!positives.contains(&j));
            }
        }
    }

    #[test]
    fn complement_branch_is_uniform() {
        let idx = index(12, &(0..9).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 12];
        for j in sample_negatives(&idx, 0, 30_000, &mut rng).unwrap() {
            counts[j] += 1;
        }
        for c in &counts[9..] {
            assert!((*c as f64 - 10_000.0).abs() < 500.0, "{counts:?}");
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let idx = index(50, &[1, 2, 3]);
        let a = sample_negatives(&idx, 0, 200, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_negatives(&idx, 0, 200, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_user_is_an_error() {
        let idx = index(3, &[0, 1, 2]);
        assert!(matches!(
            sample_negatives(&idx, 0, 1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(TrainError::NoNegativeAvailable(0))
        ));
    }
}
