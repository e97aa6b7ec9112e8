use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::IngestError;

use super::events::{events_to_interactions, read_event_log, ObjectRegistry};

/// Bijection between raw identifiers and dense indices `[0, n)`.
///
/// Indices are assigned in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a map from identifiers already in index order.
    pub fn from_ids<I, S>(ids: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut map = IdMap::new();
        for id in ids {
            let id = id.into();
            if map.index.contains_key(&id) {
                return Err(IngestError::IndexOutOfRange(format!(
                    "duplicate identifier `{id}` in index map"
                )));
            }
            map.get_or_insert(&id);
        }
        Ok(map)
    }

    /// Synthetic identifiers `{prefix}0 .. {prefix}{n-1}`.
    pub fn sequential(prefix: &str, n: usize) -> Self {
        let mut map = IdMap::new();
        for i in 0..n {
            map.get_or_insert(&format!("{prefix}{i}"));
        }
        map
    }

    pub fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.index.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), idx);
        idx
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, idx: usize) -> Option<&str> {
        self.ids.get(idx).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Writes one identifier per line, in index order.
    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        let io = |source| IngestError::Io {
            path: path.to_owned(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        for id in &self.ids {
            writeln!(out, "{id}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let file = File::open(path).map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut ids = Vec::new();
        for (n, line) in BufReader::new(file).split(b'\n').enumerate() {
            let line = line.map_err(|source| IngestError::Io {
                path: path.to_owned(),
                source,
            })?;
            let line = String::from_utf8(line).map_err(|_| IngestError::NonUtf8 {
                path: path.to_owned(),
                line: n as u64 + 1,
            })?;
            let line = line.trim_end_matches('\r');
            if !line.is_empty() {
                ids.push(line.to_owned());
            }
        }
        IdMap::from_ids(ids)
    }
}

/// One aggregated implicit-feedback record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Occurrence count, always >= 1.
    pub weight: f64,
    pub timestamp: Option<i64>,
}

/// Sparse user x item implicit feedback.
///
/// Records are kept sorted by `(user, item)` with no duplicate pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    records: Vec<Interaction>,
    users: Arc<IdMap>,
    items: Arc<IdMap>,
}

impl InteractionSet {
    /// Builds a set from raw records, summing the weights of duplicate pairs and
    /// keeping the earliest timestamp.
    pub fn from_records(
        users: Arc<IdMap>,
        items: Arc<IdMap>,
        mut records: Vec<Interaction>,
    ) -> Result<Self, IngestError> {
        for r in &records {
            if r.user >= users.len() || r.item >= items.len() {
                return Err(IngestError::IndexOutOfRange(format!(
                    "record ({}, {}) outside {} users x {} items",
                    r.user,
                    r.item,
                    users.len(),
                    items.len()
                )));
            }
            if !(r.weight.is_finite() && r.weight >= 1.0) {
                return Err(IngestError::IndexOutOfRange(format!(
                    "record ({}, {}) has weight {} < 1",
                    r.user, r.item, r.weight
                )));
            }
        }
        records.sort_by_key(|r| (r.user, r.item));
        let mut merged: Vec<Interaction> = Vec::with_capacity(records.len());
        for r in records {
            match merged.last_mut() {
                Some(last) if last.user == r.user && last.item == r.item => {
                    last.weight += r.weight;
                    last.timestamp = match (last.timestamp, r.timestamp) {
                        (Some(a), Some(b)) => Some(a.min(b)),
                        (a, b) => a.or(b),
                    };
                }
                _ => merged.push(r),
            }
        }
        Ok(Self {
            records: merged,
            users,
            items,
        })
    }

    /// Unit-weight set over sequential identifiers, handy for tests and synthetic data.
    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, IngestError> {
        let records = pairs
            .into_iter()
            .map(|(user, item)| Interaction {
                user,
                item,
                weight: 1.0,
                timestamp: None,
            })
            .collect();
        Self::from_records(
            Arc::new(IdMap::sequential("u", n_users)),
            Arc::new(IdMap::sequential("i", n_items)),
            records,
        )
    }

    /// A set sharing this set's index maps.
    pub fn with_records(&self, records: Vec<Interaction>) -> Result<Self, IngestError> {
        Self::from_records(self.users.clone(), self.items.clone(), records)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn users(&self) -> &Arc<IdMap> {
        &self.users
    }

    pub fn items(&self) -> &Arc<IdMap> {
        &self.items
    }

    /// Sorted item indices per user (weights binarized).
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for r in &self.records {
            out[r.user].push(r.item);
        }
        out
    }

    /// Records grouped per user, each group sorted by item.
    pub fn records_by_user(&self) -> Vec<&[Interaction]> {
        let mut out: Vec<&[Interaction]> = vec![&[]; self.n_users()];
        let mut start = 0;
        while start < self.records.len() {
            let user = self.records[start].user;
            let end = start
                + self.records[start..]
                    .iter()
                    .take_while(|r| r.user == user)
                    .count();
            out[user] = &self.records[start..end];
            start = end;
        }
        out
    }

    /// Writes the canonical CSV (`user,item,timestamp`) plus index-map sidecars.
    ///
    /// A record of weight `w` is written as `w` identical rows so that reloading
    /// through the duplicate-aggregation rule restores it.
    pub fn write_csv(&self, path: &Path) -> Result<(), IngestError> {
        let io = |source| IngestError::Io {
            path: path.to_owned(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "user,item,timestamp").map_err(io)?;
        for r in &self.records {
            let user = self.users.id(r.user).unwrap_or_default();
            let item = self.items.id(r.item).unwrap_or_default();
            let ts = r.timestamp.map(|t| t.to_string()).unwrap_or_default();
            let copies = r.weight.round().max(1.0) as u64;
            for _ in 0..copies {
                writeln!(out, "{user},{item},{ts}").map_err(io)?;
            }
        }
        out.flush().map_err(io)?;
        let (users_path, items_path) = index_map_paths(path);
        self.users.write(&users_path)?;
        self.items.write(&items_path)
    }
}

/// Sidecar index-map locations for an interaction file.
pub fn index_map_paths(path: &Path) -> (PathBuf, PathBuf) {
    let mut users = path.as_os_str().to_owned();
    users.push(".users.idx");
    let mut items = path.as_os_str().to_owned();
    items.push(".items.idx");
    (users.into(), items.into())
}

/// Input layout accepted by [`load_interactions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionFormat {
    /// `user,item[,timestamp]`
    Csv,
    /// `object,service,user,t_start,t_end,kind`
    EventLog,
}

impl std::str::FromStr for InteractionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "event_log" | "event-log" => Ok(Self::EventLog),
            other => Err(format!("unknown interaction format `{other}`")),
        }
    }
}

/// Loads interactions and builds dense index maps.
///
/// If `<path>.users.idx` / `<path>.items.idx` exist they seed the index maps,
/// so a file written by [`InteractionSet::write_csv`] reloads identically.
pub fn load_interactions(
    path: &Path,
    format: InteractionFormat,
) -> Result<InteractionSet, IngestError> {
    match format {
        InteractionFormat::Csv => load_interaction_csv(path),
        InteractionFormat::EventLog => {
            let events = read_event_log(path)?;
            if events.is_empty() {
                return Err(IngestError::EmptyDataset);
            }
            let registry = ObjectRegistry::from_events(&events);
            events_to_interactions(&events, &registry)
        }
    }
}

fn load_interaction_csv(path: &Path) -> Result<InteractionSet, IngestError> {
    let (users_path, items_path) = index_map_paths(path);
    let mut users = if users_path.exists() {
        IdMap::read(&users_path)?
    } else {
        IdMap::new()
    };
    let mut items = if items_path.exists() {
        IdMap::read(&items_path)?
    } else {
        IdMap::new()
    };

    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let malformed = |line: u64, reason: String| IngestError::Malformed {
        path: path.to_owned(),
        line,
        reason,
    };

    let mut records = Vec::new();
    let mut has_timestamp = false;
    let mut seen_header = false;
    let mut row = csv::ByteRecord::new();
    loop {
        let more = reader.read_byte_record(&mut row).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        if !more {
            break;
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        let fields = row
            .iter()
            .map(std::str::from_utf8)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| IngestError::NonUtf8 {
                path: path.to_owned(),
                line,
            })?;
        if !seen_header {
            seen_header = true;
            match fields.as_slice() {
                ["user", "item"] => {}
                ["user", "item", "timestamp"] => has_timestamp = true,
                _ => {
                    return Err(malformed(
                        line,
                        "expected header `user,item[,timestamp]`".into(),
                    ))
                }
            }
            continue;
        }
        let expected = if has_timestamp { 3 } else { 2 };
        if fields.len() != expected && !(has_timestamp && fields.len() == 2) {
            return Err(malformed(
                line,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(malformed(line, "empty identifier".into()));
        }
        let timestamp = match fields.get(2) {
            Some(s) if !s.is_empty() => Some(
                s.parse::<i64>()
                    .map_err(|_| malformed(line, format!("bad timestamp `{s}`")))?,
            ),
            _ => None,
        };
        records.push(Interaction {
            user: users.get_or_insert(fields[0]),
            item: items.get_or_insert(fields[1]),
            weight: 1.0,
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    InteractionSet::from_records(Arc::new(users), Arc::new(items), records)
}
