use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError};
use crate::ingest::{InteractionSet, SplitBundle};

use super::metrics::{average_precision, ndcg_at_k, precision_recall_at_k, RankedList};

/// Anything that can score every item for a user.
pub trait ScoreModel: Sync {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    fn score_user(&self, user: usize) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    All,
    Warm,
    Cold,
}

impl Segment {
    pub fn name(self) -> &'static str {
        match self {
            Segment::All => "all",
            Segment::Warm => "warm",
            Segment::Cold => "cold",
        }
    }

    fn includes(self, splits: &SplitBundle, user: usize) -> bool {
        match self {
            Segment::All => true,
            Segment::Warm => !splits.cold_users.contains(&user),
            Segment::Cold => splits.cold_users.contains(&user),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Seed for the negatives of the rating-error protocol.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![5, 10, 15],
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub segment: Segment,
    pub n_users_evaluated: usize,
    pub metrics: Vec<MetricsAtK>,
    pub mae: f64,
    pub rmse: f64,
    pub n_rating_pairs: usize,
}

impl SegmentReport {
    pub fn at(&self, k: usize) -> Option<&MetricsAtK> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

pub const RATING_PROTOCOL: &str = "mae/rmse: prediction = sigmoid(score); target 1 for each held-out \
     test item and 0 for an equal number of seeded uniform negatives outside the user's train and \
     test items; pairs pooled over the segment's users";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub segments: Vec<SegmentReport>,
}

impl EvalReport {
    pub fn segment(&self, segment: Segment) -> Option<&SegmentReport> {
        self.segments.iter().find(|s| s.segment == segment)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `segment,K,metric,value` rows; `K` is empty for mae and rmse.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment,K,metric,value\n");
        for s in &self.segments {
            let name = s.segment.name();
            for m in &s.metrics {
                for (metric, value) in [
                    ("precision", m.precision),
                    ("recall", m.recall),
                    ("ndcg", m.ndcg),
                    ("map", m.map),
                ] {
                    writeln!(out, "{name},{},{metric},{value}", m.k).expect("write to string");
                }
            }
            writeln!(out, "{name},,mae,{}", s.mae).expect("write to string");
            writeln!(out, "{name},,rmse,{}", s.rmse).expect("write to string");
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), Error> {
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

struct UserResult {
    metrics: Vec<MetricsAtK>,
    abs_err: f64,
    sq_err: f64,
    n_pairs: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn evaluate_user(
    model: &dyn ScoreModel,
    user: usize,
    train: &HashSet<usize>,
    relevant: &HashSet<usize>,
    config: &EvalConfig,
    clamp_warned: &AtomicBool,
) -> Result<UserResult, EvalError> {
    let scores = model.score_user(user);
    let ranked = RankedList::from_scores(user, &scores, train);
    let mut metrics = Vec::with_capacity(config.ks.len());
    for &requested in &config.ks {
        let k = requested.min(ranked.len()).max(1);
        if k < requested && !clamp_warned.swap(true, Ordering::Relaxed) {
            warn!("K={requested} exceeds the {} candidate items of user {user}; clamping", ranked.len());
        }
        let (precision, recall) = precision_recall_at_k::<f64>(&ranked.items, relevant, k)?.expect("relevant non-empty");
        metrics.push(MetricsAtK {
            k: requested,
            precision,
            recall,
            ndcg: ndcg_at_k(&ranked.items, relevant, k)?.expect("relevant non-empty"),
            map: average_precision::<f64>(&ranked.items, relevant, k)?.expect("relevant non-empty"),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(user as u64);
    let n_items = scores.len();
    let mut pairs: Vec<(f64, f64)> = relevant.iter().map(|&i| (sigmoid(scores[i]), 1.0)).collect();
    // HashSet order is not stable; sort positives for a reproducible sum.
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let available = n_items - train.union(relevant).count();
    if available > 0 {
        for _ in 0..relevant.len() {
            let j = loop {
                let j = rng.random_range(0..n_items);
                if !train.contains(&j) && !relevant.contains(&j) {
                    break j;
                }
            };
            pairs.push((sigmoid(scores[j]), 0.0));
        }
    }
    let abs_err = pairs.iter().map(|(p, a)| (p - a).abs()).sum();
    let sq_err = pairs.iter().map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(UserResult {
        metrics,
        abs_err,
        sq_err,
        n_pairs: pairs.len(),
    })
}

fn item_sets(set: &InteractionSet) -> Vec<HashSet<usize>> {
    set.items_by_user().into_iter().map(|items| items.into_iter().collect()).collect()
}

/// Scores all items for each test user, masks training positives, and
/// averages per-user metrics within each requested segment.
pub fn evaluate_all_ranking(
    model: &dyn ScoreModel,
    splits: &SplitBundle,
    config: &EvalConfig,
    segments: &[Segment],
) -> Result<EvalReport, EvalError> {
    if config.ks.iter().any(|&k| k == 0) {
        return Err(EvalError::InvalidK);
    }
    if model.n_items() != splits.n_items() || model.n_users() != splits.n_users() {
        return Err(EvalError::LengthMismatch(model.n_items(), splits.n_items()));
    }
    let train = item_sets(&splits.train);
    let test = item_sets(&splits.test);
    let clamp_warned = AtomicBool::new(false);
    let users: Vec<usize> = (0..splits.n_users()).filter(|&u| !test[u].is_empty()).collect();
    let results: Vec<UserResult> = users
        .par_iter()
        .map(|&u| evaluate_user(model, u, &train[u], &test[u], config, &clamp_warned))
        .collect::<Result<_, _>>()?;

    let mut reports = Vec::with_capacity(segments.len());
    for &segment in segments {
        let members: Vec<&UserResult> = users
            .iter()
            .zip(&results)
            .filter(|(&u, _)| segment.includes(splits, u))
            .map(|(_, r)| r)
            .collect();
        if members.is_empty() {
            return Err(EvalError::NoEvaluableUsers(segment.name()));
        }
        let n = members.len() as f64;
        let metrics = config
            .ks
            .iter()
            .enumerate()
            .map(|(idx, &k)| {
                let mean = |f: fn(&MetricsAtK) -> f64| members.iter().map(|r| f(&r.metrics[idx])).sum::<f64>() / n;
                MetricsAtK {
                    k,
                    precision: mean(|m| m.precision),
                    recall: mean(|m| m.recall),
                    ndcg: mean(|m| m.ndcg),
                    map: mean(|m| m.map),
                }
            })
            .collect();
        let n_pairs: usize = members.iter().map(|r| r.n_pairs).sum();
        let abs: f64 = members.iter().map(|r| r.abs_err).sum();
        let sq: f64 = members.iter().map(|r| r.sq_err).sum();
        reports.push(SegmentReport {
            segment,
            n_users_evaluated: members.len(),
            metrics,
            mae: abs / n_pairs as f64,
            rmse: (sq / n_pairs as f64).sqrt(),
            n_rating_pairs: n_pairs,
        });
    }
    Ok(EvalReport {
        protocol: RATING_PROTOCOL.to_string(),
        segments: reports,
    })
}

/// `[All]`, plus warm and cold when the split flags both kinds of users.
pub fn default_segments(splits: &SplitBundle) -> Vec<Segment> {
    let has_cold = !splits.cold_users.is_empty();
    let has_warm = splits.cold_users.len() < splits.n_users();
    if splits.min_train_count.is_some() && has_cold && has_warm {
        vec![Segment::All, Segment::Warm, Segment::Cold]
    } else {
        vec![Segment::All]
    }
}

/// Mean recall@k over users with held-out items, training positives masked.
/// `None` when no user has held-out items.
pub fn mean_recall_at_k(
    model: &dyn ScoreModel,
    train: &InteractionSet,
    heldout: &InteractionSet,
    k: usize,
) -> Option<f64> {
    let train = item_sets(train);
    let heldout = item_sets(heldout);
    let recalls: Vec<f64> = (0..heldout.len())
        .into_par_iter()
        .filter(|&u| !heldout[u].is_empty())
        .map(|u| {
            let ranked = RankedList::from_scores(u, &model.score_user(u), &train[u]);
            let k = k.min(ranked.len()).max(1);
            precision_recall_at_k::<f64>(&ranked.items, &heldout[u], k)
                .expect("k >= 1")
                .expect("non-empty")
                .1
        })
        .collect();
    if recalls.is_empty() {
        None
    } else {
        Some(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SplitRatios;
    use std::collections::BTreeSet;

    struct Table(Vec<Vec<f64>>);

    impl ScoreModel for Table {
        fn n_users(&self) -> usize {
            self.0.len()
        }
        fn n_items(&self) -> usize {
            self.0[0].len()
        }
        fn score_user(&self, user: usize) -> Vec<f64> {
            self.0[user].clone()
        }
    }

    fn bundle(n_users: usize, n_items: usize, train: &[(usize, usize)], test: &[(usize, usize)]) -> SplitBundle {
        let mk = |pairs: &[(usize, usize)]| InteractionSet::from_pairs(n_users, n_items, pairs.iter().copied()).unwrap();
        SplitBundle {
            train: mk(train),
            validation: mk(&[]),
            test: mk(test),
            seed: 0,
            ratios: SplitRatios::default(),
            min_train_count: Some(2),
            cold_users: BTreeSet::from([2]),
            cold_items: BTreeSet::new(),
        }
    }

    // Scores are item-descending for user 0, so item 0 (train) is masked.
    fn toy() -> (Table, SplitBundle) {
        let table = Table(vec![
            vec![0.9, 0.8, 0.7, 0.6, 0.5],
            vec![0.1, 0.2, 0.3, 0.4, 0.5],
            vec![0.5, 0.0, 0.9, 0.0, 0.0],
        ]);
        let splits = bundle(
            3,
            5,
            &[(0, 0), (0, 4), (1, 4), (1, 0), (2, 1)],
            &[(0, 2), (1, 3), (1, 1), (2, 2)],
        );
        (table, splits)
    }

    #[test]
    fn toy_report_matches_hand_values() {
        let (table, splits) = toy();
        let cfg = EvalConfig { ks: vec![1, 2], seed: 3 };
        let report = evaluate_all_ranking(&table, &splits, &cfg, &[Segment::All, Segment::Warm, Segment::Cold]).unwrap();
        // user 0 ranks [1, 2, 3]; user 1 ranks [3, 2, 1]; user 2 ranks [2, 0, 3, 4].
        let all = report.segment(Segment::All).unwrap();
        assert_eq!(all.n_users_evaluated, 3);
        let at1 = all.at(1).unwrap();
        assert!((at1.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((at1.recall - (0.0 + 0.5 + 1.0) / 3.0).abs() < 1e-15);
        let at2 = all.at(2).unwrap();
        assert!((at2.precision - (0.5 + 0.5 + 0.5) / 3.0).abs() < 1e-15);
        let ndcg_u0 = (1.0 / 3f64.log2()) / 1.0;
        let ndcg_u1 = 1.0 / (1.0 + 1.0 / 3f64.log2());
        assert!((at2.ndcg - (ndcg_u0 + ndcg_u1 + 1.0) / 3.0).abs() < 1e-15);
        let map_u0 = 0.5;
        let map_u1 = 1.0 / 2.0;
        assert!((at2.map - (map_u0 + map_u1 + 1.0) / 3.0).abs() < 1e-15);
        let cold = report.segment(Segment::Cold).unwrap();
        assert_eq!(cold.n_users_evaluated, 1);
        assert_eq!(cold.at(2).unwrap().ndcg, 1.0);
        assert_eq!(report.segment(Segment::Warm).unwrap().n_users_evaluated, 2);
        // 4 positives + 4 negatives
        assert_eq!(all.n_rating_pairs, 8);
    }

    #[test]
    fn training_positives_never_ranked() {
        let (table, splits) = toy();
        let train = item_sets(&splits.train);
        for u in 0..3 {
            let ranked = RankedList::from_scores(u, &table.score_user(u), &train[u]);
            assert!(ranked.items.iter().all(|i| !train[u].contains(i)));
        }
    }

    #[test]
    fn oversized_k_is_clamped() {
        let (table, splits) = toy();
        let cfg = EvalConfig { ks: vec![50], seed: 3 };
        let report = evaluate_all_ranking(&table, &splits, &cfg, &[Segment::All]).unwrap();
        let m = report.segments[0].at(50).unwrap();
        assert_eq!(m.recall, 1.0);
        assert!(m.precision > 0.0 && m.precision <= 1.0);
    }

    #[test]
    fn empty_segment_is_an_error() {
        let (table, mut splits) = toy();
        splits.cold_users.clear();
        assert!(matches!(
            evaluate_all_ranking(&table, &splits, &EvalConfig::default(), &[Segment::Cold]),
            Err(EvalError::NoEvaluableUsers("cold"))
        ));
        assert_eq!(default_segments(&splits), vec![Segment::All]);
    }

    #[test]
    fn csv_layout() {
        let (table, splits) = toy();
        let cfg = EvalConfig { ks: vec![1], seed: 3 };
        let csv = evaluate_all_ranking(&table, &splits, &cfg, &[Segment::All]).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "segment,K,metric,value");
        assert!(lines[1].starts_with("all,1,precision,"));
        assert!(lines[5].starts_with("all,,mae,"));
        assert!(lines[6].starts_with("all,,rmse,"));
    }

    #[test]
    fn validation_recall_helper() {
        let (table, splits) = toy();
        let r = mean_recall_at_k(&table, &splits.train, &splits.test, 1).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        assert_eq!(mean_recall_at_k(&table, &splits.train, &splits.validation, 1), None);
    }
}
