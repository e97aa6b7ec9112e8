//! INI experiment configuration.
//!
//! ```ini
//! [ingest]
//! interactions = data/interactions.csv
//! format = csv
//! feature.visual = data/visual.csv
//! feature.text = data/text.mmfv
//! cold_threshold = 5
//!
//! [model_train]
//! mode = mmrs
//! epochs = 40
//! ```
//!
//! Relative paths resolve against the directory of the config file. Any key can
//! be overridden with `section.key=value`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::eval::EvalConfig;
use crate::graph::GraphConfig;
use crate::ingest::{InteractionFormat, SplitRatios};
use crate::model::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mmrs,
    Mf,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mmrs" => Ok(Mode::Mmrs),
            "mf" => Ok(Mode::Mf),
            other => Err(format!("unknown mode `{other}` (expected mmrs or mf)")),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mmrs => "mmrs",
            Mode::Mf => "mf",
        }
    }
}

/// A parsed experiment, with every path already resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub interactions: PathBuf,
    pub format: InteractionFormat,
    /// `(modality, path)`, sorted by modality name.
    pub features: Vec<(String, PathBuf)>,
    pub max_missing_features: usize,
    pub ratios: SplitRatios,
    pub cold_threshold: Option<usize>,
    pub split_seed: u64,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mode: Mode,
    pub eval: EvalConfig,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    raw: RawConfig,
    base: PathBuf,
}

type RawConfig = BTreeMap<String, BTreeMap<String, String>>;

const SECTIONS: [&str; 6] = ["ingest", "modality_graph", "fusion_conv", "model_train", "eval", "cli"];

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

struct Section<'a> {
    name: &'static str,
    values: Option<&'a BTreeMap<String, String>>,
}

impl Section<'_> {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Error>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.and_then(|v| v.get(key)) {
            None => Ok(None),
            Some(raw) => raw
                .trim()
                .parse()
                .map(Some)
                .map_err(|e| config_err(format!("[{}] {key} = {raw}: {e}", self.name))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, Error>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, Error>
    where
        T::Err: std::fmt::Display,
    {
        let Some(raw) = self.values.and_then(|v| v.get(key)) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|part| {
                part.trim()
                    .parse()
                    .map_err(|e| config_err(format!("[{}] {key} = {raw}: {e}", self.name)))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn check_keys(&self, allowed: &[&str], prefixes: &[&str]) -> Result<(), Error> {
        for key in self.values.into_iter().flat_map(|v| v.keys()) {
            if !allowed.contains(&key.as_str()) && !prefixes.iter().any(|p| key.starts_with(p)) {
                return Err(config_err(format!("unknown key `{key}` in [{}]", self.name)));
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, raw: &str) -> PathBuf {
    let p = Path::new(raw.trim());
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_ini_str(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_ini_str(text: &str, base: &Path) -> Result<Self, Error> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| config_err(e.to_string()))?;
        let mut raw = RawConfig::new();
        for (section, props) in &ini {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(config_err("keys outside of a section"));
                }
                continue;
            };
            if !SECTIONS.contains(&section) {
                return Err(config_err(format!("unknown section [{section}]")));
            }
            let entry = raw.entry(section.to_string()).or_default();
            for (k, v) in props.iter() {
                entry.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Self::from_raw(raw, base.to_path_buf())
    }

    /// Re-parses with `section.key=value` overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, Error> {
        let mut raw = self.raw.clone();
        for spec in overrides {
            let (lhs, value) = spec
                .split_once('=')
                .ok_or_else(|| config_err(format!("override `{spec}` is not section.key=value")))?;
            let (section, key) = lhs
                .trim()
                .split_once('.')
                .ok_or_else(|| config_err(format!("override `{spec}` is not section.key=value")))?;
            if !SECTIONS.contains(&section) {
                return Err(config_err(format!("unknown section [{section}] in override `{spec}`")));
            }
            raw.entry(section.to_string())
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_raw(raw, self.base.clone())
    }

    fn from_raw(raw: RawConfig, base: PathBuf) -> Result<Self, Error> {
        let section = |name: &'static str| Section {
            name,
            values: raw.get(name),
        };

        let ingest = section("ingest");
        ingest.check_keys(
            &[
                "interactions",
                "format",
                "max_missing_features",
                "train_ratio",
                "validation_ratio",
                "test_ratio",
                "cold_threshold",
                "seed",
            ],
            &["feature."],
        )?;
        let interactions: String = ingest
            .get("interactions")?
            .ok_or_else(|| config_err("[ingest] interactions is required"))?;
        let features: Vec<(String, PathBuf)> = ingest
            .values
            .into_iter()
            .flat_map(|v| v.iter())
            .filter_map(|(k, v)| k.strip_prefix("feature.").map(|m| (m.to_string(), resolve(&base, v))))
            .collect();
        let defaults = SplitRatios::default();
        let ratios = SplitRatios::new(
            ingest.get_or("train_ratio", defaults.train)?,
            ingest.get_or("validation_ratio", defaults.validation)?,
            ingest.get_or("test_ratio", defaults.test)?,
        );
        ratios.validate().map_err(|e| config_err(format!("[ingest] {e}")))?;
        let cold_threshold: Option<usize> = ingest.get("cold_threshold")?;
        if cold_threshold == Some(0) {
            return Err(config_err("[ingest] cold_threshold must be at least 1"));
        }

        let g = section("modality_graph");
        g.check_keys(
            &["k", "sigma", "learned_graph", "relearn_every", "transform_dim", "chunk_rows"],
            &[],
        )?;
        let gd = GraphConfig::default();
        let graph = GraphConfig {
            k: g.get_or("k", gd.k)?,
            sigma: g.get_or("sigma", gd.sigma)?,
            chunk_rows: g.get_or("chunk_rows", gd.chunk_rows)?,
            learned_graph: g.get_or("learned_graph", gd.learned_graph)?,
            relearn_every: g.get_or("relearn_every", gd.relearn_every)?,
            transform_dim: g.get_or("transform_dim", gd.transform_dim)?,
        };
        if !(graph.sigma > 0.0 && graph.sigma <= 1.0) {
            return Err(config_err(format!("[modality_graph] sigma must be in (0, 1], got {}", graph.sigma)));
        }
        if graph.k == 0 || graph.relearn_every == 0 || graph.chunk_rows == 0 || graph.transform_dim == 0 {
            return Err(config_err("[modality_graph] k, relearn_every, chunk_rows and transform_dim must be >= 1"));
        }

        let fc = section("fusion_conv");
        fc.check_keys(&["n_layers"], &[])?;
        let md = ModelConfig::default();
        let n_layers = fc.get_or("n_layers", md.n_layers)?;
        if n_layers > 4 {
            return Err(config_err(format!("[fusion_conv] n_layers must be in 0..=4, got {n_layers}")));
        }

        let t = section("model_train");
        t.check_keys(
            &[
                "mode",
                "embedding_dim",
                "init_scale",
                "learning_rate",
                "batch_size",
                "epochs",
                "l2_reg",
                "seed",
                "negatives_per_positive",
                "optimizer",
                "patience",
                "eval_k",
            ],
            &[],
        )?;
        let mode: Mode = t.get_or("mode", Mode::Mmrs)?;
        let model = ModelConfig {
            embedding_dim: t.get_or("embedding_dim", md.embedding_dim)?,
            n_layers,
            use_item_graph: mode == Mode::Mmrs,
            init_scale: t.get_or("init_scale", md.init_scale)?,
        };
        let td = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: t.get_or("learning_rate", td.learning_rate)?,
            batch_size: t.get_or("batch_size", td.batch_size)?,
            epochs: t.get_or("epochs", td.epochs)?,
            l2_reg: t.get_or("l2_reg", td.l2_reg)?,
            seed: t.get_or("seed", td.seed)?,
            negatives_per_positive: t.get_or("negatives_per_positive", td.negatives_per_positive)?,
            optimizer: t.get_or("optimizer", td.optimizer)?,
            patience: t.get_or("patience", td.patience)?,
            eval_k: t.get_or("eval_k", td.eval_k)?,
        };
        train.validate().map_err(|e| config_err(format!("[model_train] {e}")))?;
        if mode == Mode::Mmrs && features.is_empty() {
            return Err(config_err("mode = mmrs needs at least one [ingest] feature.<name> entry"));
        }

        let e = section("eval");
        e.check_keys(&["ks", "seed"], &[])?;
        let ed = EvalConfig::default();
        let eval = EvalConfig {
            ks: e.list("ks")?.unwrap_or(ed.ks),
            seed: e.get_or("seed", ed.seed)?,
        };
        if eval.ks.is_empty() || eval.ks.contains(&0) {
            return Err(config_err("[eval] ks must be a non-empty list of positive cutoffs"));
        }

        let c = section("cli");
        c.check_keys(&["out", "threads"], &[])?;
        let out = c.get::<String>("out")?.map(|p| resolve(&base, &p));
        let threads: Option<usize> = c.get("threads")?;

        Ok(Self {
            interactions: resolve(&base, &interactions),
            format: ingest.get_or("format", InteractionFormat::Csv)?,
            features,
            max_missing_features: ingest.get_or("max_missing_features", 0)?,
            ratios,
            cold_threshold,
            split_seed: ingest.get_or("seed", 0)?,
            graph,
            model,
            train,
            mode,
            eval,
            out,
            threads,
            raw,
            base,
        })
    }

    /// Sorted `[section]` / `key = value` rendering of the effective settings.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (section, values) in &self.raw {
            writeln!(out, "[{section}]").expect("write to string");
            for (k, v) in values {
                writeln!(out, "{k} = {v}").expect("write to string");
            }
        }
        out
    }

    /// Hex SHA-256 of [`Self::canonical_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").expect("write to string");
            s
        })
    }
}
