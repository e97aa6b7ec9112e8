//! Block-structured synthetic data with known ground truth.
//!
//! Items are split into contiguous blocks. Every block has one non-negative
//! feature centroid per modality; an item's feature row is
//! `(1 - noise) * centroid + noise * |gaussian|`, so `noise = 1` makes the
//! features carry no block information. Each user has a home block and a
//! secondary block and mostly interacts with popular items of those two.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ingest::{IdMap, Interaction, InteractionSet, ModalityFeatures};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_blocks: usize,
    pub n_modalities: usize,
    pub feature_dim: usize,
    /// Feature noise in [0, 1].
    pub noise: f64,
    /// Interactions per user range from `min_activity` to `max_activity`,
    /// skewed toward the low end.
    pub min_activity: usize,
    pub max_activity: usize,
    /// Exponent of the activity skew; 1 is uniform.
    pub activity_skew: f64,
    /// Zipf exponent of item popularity within a block.
    pub popularity_exponent: f64,
    /// Share of a user's in-block interactions drawn from the secondary block.
    pub secondary_rate: f64,
    /// Probability that an interaction ignores the user's blocks.
    pub off_block_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_users: 1000,
            n_items: 500,
            n_blocks: 50,
            n_modalities: 2,
            feature_dim: 16,
            noise: 0.2,
            min_activity: 2,
            max_activity: 10,
            activity_skew: 3.0,
            popularity_exponent: 1.0,
            secondary_rate: 0.5,
            off_block_rate: 0.05,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), Error> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.n_blocks == 0 || self.n_blocks > self.n_items {
            return fail("need 1 <= n_blocks <= n_items");
        }
        if self.n_users == 0 || self.n_modalities == 0 || self.feature_dim == 0 {
            return fail("n_users, n_modalities and feature_dim must be positive");
        }
        if [self.noise, self.off_block_rate, self.secondary_rate]
            .iter()
            .any(|r| !(0.0..=1.0).contains(r))
        {
            return fail("noise, secondary_rate and off_block_rate must be in [0, 1]");
        }
        if self.secondary_rate > 0.0 && self.n_blocks < 2 {
            return fail("a secondary block needs n_blocks >= 2");
        }
        if self.min_activity == 0 || self.min_activity > self.max_activity {
            return fail("need 1 <= min_activity <= max_activity");
        }
        if self.max_activity > self.n_items / self.n_blocks {
            return fail("max_activity exceeds the smallest block");
        }
        if !(self.activity_skew > 0.0) || !(self.popularity_exponent >= 0.0) {
            return fail("activity_skew must be positive and popularity_exponent non-negative");
        }
        Ok(())
    }

    /// Block of item `i`; blocks are contiguous and differ in size by at most one.
    pub fn item_block(&self, item: usize) -> usize {
        item * self.n_blocks / self.n_items
    }

    pub fn block_items(&self, block: usize) -> std::ops::Range<usize> {
        let start = (block * self.n_items).div_ceil(self.n_blocks);
        let end = ((block + 1) * self.n_items).div_ceil(self.n_blocks);
        start..end
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub interactions: InteractionSet,
    pub features: Vec<ModalityFeatures>,
    pub item_blocks: Vec<usize>,
    /// Home block of each user.
    pub user_blocks: Vec<usize>,
    pub secondary_blocks: Vec<usize>,
}

pub fn modality_name(m: usize) -> String {
    format!("modality{m}")
}

pub fn make_synthetic(spec: &SynthSpec) -> Result<SynthDataset, Error> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let item_blocks: Vec<usize> = (0..spec.n_items).map(|i| spec.item_block(i)).collect();

    let mut features = Vec::with_capacity(spec.n_modalities);
    for m in 0..spec.n_modalities {
        let centroids = Array2::from_shape_simple_fn((spec.n_blocks, spec.feature_dim), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z.abs()
        });
        let values = Array2::from_shape_fn((spec.n_items, spec.feature_dim), |(i, d)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (1.0 - spec.noise) * centroids[[item_blocks[i], d]] + spec.noise * z.abs()
        });
        features.push(ModalityFeatures::new(modality_name(m), values)?);
    }

    // Popularity order inside a block is a fixed random permutation.
    let mut popularity = vec![0.0; spec.n_items];
    for b in 0..spec.n_blocks {
        let mut items: Vec<usize> = spec.block_items(b).collect();
        rand::seq::SliceRandom::shuffle(items.as_mut_slice(), &mut rng);
        for (rank, item) in items.into_iter().enumerate() {
            popularity[item] = 1.0 / ((rank + 1) as f64).powf(spec.popularity_exponent);
        }
    }

    let mut user_blocks = Vec::with_capacity(spec.n_users);
    let mut secondary_blocks = Vec::with_capacity(spec.n_users);
    let mut records = Vec::new();
    let span = (spec.max_activity - spec.min_activity) as f64;
    for user in 0..spec.n_users {
        let block = user % spec.n_blocks;
        let secondary = if spec.n_blocks > 1 {
            (block + 1 + rng.random_range(0..spec.n_blocks - 1)) % spec.n_blocks
        } else {
            block
        };
        user_blocks.push(block);
        secondary_blocks.push(secondary);
        let u: f64 = rng.random();
        let n = spec.min_activity + (span * u.powf(spec.activity_skew)).round() as usize;
        let mut n_home = 0;
        let mut n_secondary = 0;
        for _ in 0..n {
            let r: f64 = rng.random();
            if r < spec.off_block_rate {
                continue;
            }
            if rng.random::<f64>() < spec.secondary_rate {
                n_secondary += 1;
            } else {
                n_home += 1;
            }
        }
        let mut items = Vec::with_capacity(n);
        for (b, count) in [(block, n_home), (secondary, n_secondary)] {
            let pool: Vec<usize> = spec.block_items(b).collect();
            let picked = sample_weighted(&mut rng, pool.len(), |k| popularity[pool[k]], count)
                .map_err(|e| Error::Config(format!("synthetic sampling failed: {e}")))?;
            items.extend(picked.into_iter().map(|k| pool[k]));
        }
        while items.len() < n {
            let j = rng.random_range(0..spec.n_items);
            if !items.contains(&j) {
                items.push(j);
            }
        }
        records.extend(items.into_iter().map(|item| Interaction {
            user,
            item,
            weight: 1.0,
            timestamp: None,
        }));
    }
    let interactions = InteractionSet::from_records(
        Arc::new(IdMap::sequential("u", spec.n_users)),
        Arc::new(IdMap::sequential("i", spec.n_items)),
        records,
    )?;
    Ok(SynthDataset {
        spec: spec.clone(),
        interactions,
        features,
        item_blocks,
        user_blocks,
        secondary_blocks,
    })
}

/// Files written by [`SynthDataset::write`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub interactions: PathBuf,
    pub features: Vec<(String, PathBuf)>,
    pub item_labels: PathBuf,
    pub user_labels: PathBuf,
    pub config: PathBuf,
}

impl SynthDataset {
    /// Writes interactions, feature CSVs, block labels and a starter `experiment.ini`.
    pub fn write(&self, dir: &Path) -> Result<SynthFiles, Error> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let interactions = dir.join("interactions.csv");
        self.interactions.write_csv(&interactions)?;
        let mut features = Vec::new();
        for f in &self.features {
            let path = dir.join(format!("{}.csv", f.modality));
            f.write_csv(&path, self.interactions.items())?;
            features.push((f.modality.clone(), path));
        }
        let write_labels = |name: &str, header: &str, ids: &IdMap, blocks: &[usize]| -> Result<PathBuf, Error> {
            let path = dir.join(name);
            let mut text = format!("{header},block\n");
            for (idx, b) in blocks.iter().enumerate() {
                text.push_str(&format!("{},{b}\n", ids.id(idx).expect("index in range")));
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        };
        let item_labels = write_labels("item_blocks.csv", "item", self.interactions.items(), &self.item_blocks)?;
        let user_labels = write_labels("user_blocks.csv", "user", self.interactions.users(), &self.user_blocks)?;

        let config = dir.join("experiment.ini");
        let mut ini = String::from("[ingest]\ninteractions = interactions.csv\n");
        for (name, _) in &features {
            ini.push_str(&format!("feature.{name} = {name}.csv\n"));
        }
        ini.push_str(&format!(
            "train_ratio = 0.9\nvalidation_ratio = 0\ntest_ratio = 0.1\ncold_threshold = 5\nseed = {}\n\n\
             [modality_graph]\nk = 10\nsigma = 0.7\n\n[fusion_conv]\nn_layers = 1\n\n\
             [model_train]\nmode = mmrs\nembedding_dim = 32\nlearning_rate = 0.01\nbatch_size = 1024\n\
             epochs = 20\nl2_reg = 0.001\nseed = {}\n\n[eval]\nks = 5,10,20\n",
            self.spec.seed, self.spec.seed
        ));
        std::fs::write(&config, ini).map_err(|e| Error::io(&config, e))?;
        Ok(SynthFiles {
            interactions,
            features,
            item_labels,
            user_labels,
            config,
        })
    }
}
