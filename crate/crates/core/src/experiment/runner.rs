use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::eval::{default_segments, evaluate_all_ranking, EvalReport, Segment};
use crate::graph::GraphConfig;
use crate::ingest::{
    cold_start_split, load_interactions, load_modality_features, split_dataset, ModalityFeatures,
    SplitBundle,
};
use crate::model::{load_checkpoint, save_checkpoint, train, TrainedModel};

use super::config::{ExperimentConfig, Mode};

/// Split interactions plus the features of every configured modality.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub splits: SplitBundle,
    pub features: Vec<ModalityFeatures>,
}

/// Loads interactions, splits them, and loads features (in mmrs mode).
pub fn load_data(config: &ExperimentConfig) -> Result<ExperimentData, Error> {
    let interactions = load_interactions(&config.interactions, config.format)?;
    info!(
        "loaded {} interactions ({} users, {} items)",
        interactions.len(),
        interactions.n_users(),
        interactions.n_items()
    );
    let splits = match config.cold_threshold {
        Some(t) => cold_start_split(&interactions, config.ratios, t, config.split_seed)?,
        None => split_dataset(&interactions, config.ratios, config.split_seed)?,
    };
    let mut features = Vec::new();
    if config.mode == Mode::Mmrs {
        for (name, path) in &config.features {
            let (f, report) =
                load_modality_features(path, name, interactions.items(), config.max_missing_features)?;
            if report.unknown > 0 {
                warn!("{}: {} rows with unknown item ids ignored", path.display(), report.unknown);
            }
            features.push(f);
        }
    }
    Ok(ExperimentData { splits, features })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: TrainedModel,
    pub report: EvalReport,
}

/// Trains according to `config.mode` and evaluates on the test split.
pub fn run_in_memory(config: &ExperimentConfig, data: &ExperimentData) -> Result<RunOutcome, Error> {
    let features: &[ModalityFeatures] = match config.mode {
        Mode::Mmrs => &data.features,
        Mode::Mf => &[],
    };
    let model = train(&data.splits, features, &config.graph, &config.model, &config.train)?;
    let report = evaluate_all_ranking(&model, &data.splits, &config.eval, &default_segments(&data.splits))?;
    Ok(RunOutcome { model, report })
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library_version: String,
    pub mode: Mode,
    pub config_hash: String,
    pub train_seed: u64,
    pub split_seed: u64,
    pub eval_seed: u64,
    pub threads: Option<usize>,
    pub best_epoch: usize,
    pub config: String,
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs one experiment and writes `model.mmck`, `history.csv`,
/// `report.json`, `report.csv` and `manifest.json` under `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<RunOutcome, Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let data = load_data(config)?;
    let outcome = run_in_memory(config, &data)?;
    save_checkpoint(&outcome.model, &out.join("model.mmck"))?;
    outcome.model.history.write_csv(&out.join("history.csv"))?;
    outcome.report.write(out, "report")?;
    let manifest = Manifest {
        library_version: crate::VERSION.to_string(),
        mode: config.mode,
        config_hash: config.hash(),
        train_seed: config.train.seed,
        split_seed: config.split_seed,
        eval_seed: config.eval.seed,
        threads: config.threads,
        best_epoch: outcome.model.best_epoch,
        config: config.canonical_text(),
    };
    write_text(
        &out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(outcome)
}

/// Re-evaluates a saved checkpoint on the split described by `config`.
pub fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport, Error> {
    let data = load_data(config)?;
    let ck = load_checkpoint(checkpoint)?;
    ck.expect_shape(data.splits.n_users(), data.splits.n_items(), ck.header.dim)?;
    let segments = default_segments(&data.splits);
    Ok(evaluate_all_ranking(&ck, &data.splits, &config.eval, &segments)?)
}

/// Ranking cutoff reported by [`sweep_k`].
pub const SWEEP_CUTOFF: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub ndcg: f64,
    pub recall: f64,
    pub precision: f64,
    pub map: f64,
}

/// Retrains from scratch for every neighbor count and reports test metrics at
/// cutoff 20 over all users.
pub fn sweep_k(config: &ExperimentConfig, data: &ExperimentData, k_values: &[usize]) -> Result<Vec<SweepRow>, Error> {
    let n_items = data.splits.n_items();
    if let Some(&bad) = k_values.iter().find(|&&k| k == 0 || k >= n_items) {
        return Err(Error::Config(format!("sweep k={bad} outside [1, {n_items})")));
    }
    let mut eval = config.eval.clone();
    eval.ks = vec![SWEEP_CUTOFF];
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let graph = GraphConfig { k, ..config.graph.clone() };
        let model = train(&data.splits, &data.features, &graph, &config.model, &config.train)?;
        let report = evaluate_all_ranking(&model, &data.splits, &eval, &[Segment::All])?;
        let m = report.segments[0].metrics[0];
        info!("sweep k={k}: ndcg@{SWEEP_CUTOFF} {:.5}", m.ndcg);
        rows.push(SweepRow {
            k,
            ndcg: m.ndcg,
            recall: m.recall,
            precision: m.precision,
            map: m.map,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let c = SWEEP_CUTOFF;
    let mut out = format!("k,ndcg@{c},recall@{c},precision@{c},map@{c}\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.k, r.ndcg, r.recall, r.precision, r.map).expect("write to string");
    }
    out
}

/// Writes `sweep_k.csv` under `out` and returns its path.
pub fn write_sweep(rows: &[SweepRow], out: &Path) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("sweep_k.csv");
    write_text(&path, &sweep_csv(rows))?;
    Ok(path)
}

