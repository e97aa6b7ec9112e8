use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, TrainError};
use crate::eval::{mean_recall_at_k, ScoreModel};
use crate::graph::GraphConfig;
use crate::ingest::{ModalityFeatures, SplitBundle};

use super::forward::{backward, forward, ItemGraphState};
use super::loss::{bpr_objective, BprTriple, LossParts};
use super::optim::{Optimizer, OptimizerKind};
use super::sampler::PositiveIndex;
use super::{ModelConfig, ModelParams};

const SAMPLER_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2_reg: f64,
    pub seed: u64,
    pub negatives_per_positive: usize,
    pub optimizer: OptimizerKind,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Cutoff of the per-epoch validation recall.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 512,
            epochs: 100,
            l2_reg: 1e-4,
            seed: 42,
            negatives_per_positive: 1,
            optimizer: OptimizerKind::Adam,
            patience: 10,
            eval_k: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(TrainError::InvalidConfig("negatives_per_positive must be at least 1".into()));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("l2_reg must be >= 0, got {}", self.l2_reg)));
        }
        if self.eval_k == 0 {
            return Err(TrainError::InvalidConfig("eval_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over minibatches of BPR + L2.
    pub loss: f64,
    pub bpr: f64,
    pub reg: f64,
    /// `None` when there is no validation split.
    pub val_recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub eval_k: usize,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// `epoch,loss,val_recall@K` rows; floats use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut out = format!("epoch,loss,val_recall@{}\n", self.eval_k);
        for e in &self.epochs {
            let recall = e.val_recall.map(|r| r.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", e.epoch, e.loss, recall).expect("write to string");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), Error> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Best-validation parameters with everything needed to score and reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// `Ô` at the kept epoch.
    pub item_repr: Array2<f64>,
    pub model_config: ModelConfig,
    pub graph_config: GraphConfig,
    pub train_config: TrainConfig,
    pub history: TrainHistory,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
}

impl ScoreModel for TrainedModel {
    fn n_users(&self) -> usize {
        self.params.n_users()
    }

    fn n_items(&self) -> usize {
        self.item_repr.nrows()
    }

    fn score_user(&self, user: usize) -> Vec<f64> {
        self.item_repr.dot(&self.params.user_emb.row(user)).to_vec()
    }
}

struct Scorer<'a> {
    user_emb: &'a Array2<f64>,
    item_repr: &'a Array2<f64>,
}

impl ScoreModel for Scorer<'_> {
    fn n_users(&self) -> usize {
        self.user_emb.nrows()
    }

    fn n_items(&self) -> usize {
        self.item_repr.nrows()
    }

    fn score_user(&self, user: usize) -> Vec<f64> {
        self.item_repr.dot(&self.user_emb.row(user)).to_vec()
    }
}

fn transform_shapes(features: &[ModalityFeatures], graph: &GraphConfig, model: &ModelConfig) -> Vec<(usize, usize)> {
    if model.use_item_graph {
        features.iter().map(|f| (graph.transform_dim, f.dim())).collect()
    } else {
        Vec::new()
    }
}

fn build_triples(
    train: &SplitBundle,
    index: &PositiveIndex,
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BprTriple>, TrainError> {
    let mut triples = Vec::with_capacity(train.train.len() * negatives);
    for r in train.train.records() {
        for _ in 0..negatives {
            let neg = index.sample_negative(r.user, rng)?;
            triples.push(BprTriple { user: r.user, pos: r.item, neg });
        }
    }
    triples.shuffle(rng);
    Ok(triples)
}

/// Trains the graph-enhanced model (or MF, when `model.use_item_graph` is off).
///
/// Each epoch optionally rebuilds the learned neighbor sets, samples one
/// shuffled pass of BPR triples and applies one optimizer step per minibatch.
/// The returned parameters are those with the best validation recall.
pub fn train(
    splits: &SplitBundle,
    features: &[ModalityFeatures],
    graph_config: &GraphConfig,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    train_config.validate()?;
    let n_users = splits.n_users();
    let n_items = splits.n_items();
    if splits.train.is_empty() {
        return Err(TrainError::EmptyTriples);
    }
    if model_config.embedding_dim == 0 {
        return Err(TrainError::InvalidConfig("embedding_dim must be at least 1".into()));
    }
    if model_config.use_item_graph {
        if features.is_empty() {
            return Err(TrainError::InvalidConfig("the item graph needs at least one modality".into()));
        }
        if let Some(f) = features.iter().find(|f| f.n_items() != n_items) {
            return Err(TrainError::ShapeMismatch(format!(
                "modality `{}` has {} rows but the dataset has {n_items} items",
                f.modality,
                f.n_items()
            )));
        }
        graph_config.validate(n_items)?;
    }

    let mut params = ModelParams::init(
        n_users,
        n_items,
        model_config.embedding_dim,
        &transform_shapes(features, graph_config, model_config),
        model_config.init_scale,
        train_config.seed,
    );
    let mut state = ItemGraphState::new(features, graph_config, model_config)?;
    state.rebuild_learned(&params.transforms)?;
    let index = PositiveIndex::new(&splits.train);
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    rng.set_stream(SAMPLER_STREAM);
    let mut optimizer = Optimizer::new(train_config.optimizer, train_config.learning_rate, &params);

    let validate = |params: &ModelParams, item_repr: &Array2<f64>| -> Option<f64> {
        if splits.validation.is_empty() {
            return None;
        }
        let scorer = Scorer {
            user_emb: &params.user_emb,
            item_repr,
        };
        mean_recall_at_k(&scorer, &splits.train, &splits.validation, train_config.eval_k)
    };

    let initial_repr = forward(&params, &state)?.item_repr;
    let mut best = (params.clone(), initial_repr, 0usize);
    let mut best_recall = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut history = TrainHistory {
        eval_k: train_config.eval_k,
        epochs: Vec::new(),
    };
    let relearn_every = graph_config.relearn_every.max(1);

    for epoch in 1..=train_config.epochs {
        if epoch > 1 && (epoch - 1) % relearn_every == 0 {
            state.rebuild_learned(&params.transforms)?;
        }
        let last_good = params.clone();
        let triples = build_triples(splits, &index, train_config.negatives_per_positive, &mut rng)?;
        let mut sum = LossParts::default();
        let mut n_batches = 0usize;
        for batch in triples.chunks(train_config.batch_size) {
            let fwd = forward(&params, &state)?;
            let parts = bpr_objective(&params, &fwd, batch, train_config.l2_reg)?;
            if !parts.total().is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                });
            }
            let grads = backward(&params, &state, &fwd, batch, train_config.l2_reg)?;
            optimizer.step(&mut params, &grads);
            sum.bpr += parts.bpr;
            sum.reg += parts.reg;
            n_batches += 1;
        }
        if let Some(group) = params.first_non_finite() {
            warn!("parameter group `{group}` became non-finite at epoch {epoch}");
            return Err(TrainError::Diverged {
                epoch,
                last_good: Box::new(last_good),
            });
        }
        let item_repr = forward(&params, &state)?.item_repr;
        let val_recall = validate(&params, &item_repr);
        let record = EpochRecord {
            epoch,
            loss: (sum.bpr + sum.reg) / n_batches as f64,
            bpr: sum.bpr / n_batches as f64,
            reg: sum.reg / n_batches as f64,
            val_recall,
        };
        debug!(
            "epoch {epoch}: loss {:.6} val_recall@{} {:?}",
            record.loss, train_config.eval_k, val_recall
        );
        history.epochs.push(record);

        let score = val_recall.unwrap_or(f64::INFINITY);
        if val_recall.is_none() || score > best_recall {
            best_recall = score;
            best = (params.clone(), item_repr, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if train_config.patience > 0 && since_best >= train_config.patience {
                info!("early stop at epoch {epoch}; best epoch {}", best.2);
                break;
            }
        }
    }

    let (params, item_repr, best_epoch) = best;
    Ok(TrainedModel {
        params,
        item_repr,
        model_config: model_config.clone(),
        graph_config: graph_config.clone(),
        train_config: train_config.clone(),
        history,
        best_epoch,
    })
}

/// Dot-product MF trained with the same loop, sampler and optimizer.
pub fn train_mf(
    splits: &SplitBundle,
    embedding_dim: usize,
    train_config: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    train(
        splits,
        &[],
        &GraphConfig::default(),
        &ModelConfig::mf(embedding_dim),
        train_config,
    )
}
