//! Object-service event logs.
//!
//! An event records that a user, through one of the objects they own, used or
//! generated a service during `[t_start, t_end]`. Both kinds count as implicit
//! positive feedback for the (user, service) pair.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use crate::error::IngestError;

use super::interactions::{IdMap, Interaction, InteractionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Usage,
    Generation,
}

impl std::str::FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "usage" => Ok(Self::Usage),
            "generation" => Ok(Self::Generation),
            other => Err(format!("unknown event kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectServiceEvent {
    pub object: String,
    pub service: String,
    pub user: String,
    pub t_start: i64,
    pub t_end: i64,
    pub kind: EventKind,
}

/// A smart object with the services it offers and the users who own it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SIoTObject {
    pub id: String,
    pub services: BTreeSet<String>,
    pub owners: BTreeSet<String>,
}

/// Object-to-object relationship (ownership, co-location, social...).
///
/// Stored for completeness; the learner does not consume it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relationship {
    pub source: String,
    pub target: String,
    pub kind: String,
}

/// The declared objects of a deployment.
#[derive(Debug, Clone, Default)]
pub struct ObjectRegistry {
    objects: Vec<SIoTObject>,
    by_id: HashMap<String, usize>,
    pub relationships: Vec<Relationship>,
}

impl ObjectRegistry {
    pub fn new(objects: Vec<SIoTObject>) -> Result<Self, IngestError> {
        let mut by_id = HashMap::with_capacity(objects.len());
        for (idx, obj) in objects.iter().enumerate() {
            if by_id.insert(obj.id.clone(), idx).is_some() {
                return Err(IngestError::IndexOutOfRange(format!(
                    "duplicate object `{}`",
                    obj.id
                )));
            }
        }
        Ok(Self {
            objects,
            by_id,
            relationships: Vec::new(),
        })
    }

    /// Open-world registry: every object, service and owner seen in the log is declared.
    pub fn from_events(events: &[ObjectServiceEvent]) -> Self {
        let mut objects: Vec<SIoTObject> = Vec::new();
        let mut by_id = HashMap::new();
        for e in events {
            let idx = *by_id.entry(e.object.clone()).or_insert_with(|| {
                objects.push(SIoTObject {
                    id: e.object.clone(),
                    services: BTreeSet::new(),
                    owners: BTreeSet::new(),
                });
                objects.len() - 1
            });
            objects[idx].services.insert(e.service.clone());
            objects[idx].owners.insert(e.user.clone());
        }
        Self {
            objects,
            by_id,
            relationships: Vec::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&SIoTObject> {
        self.by_id.get(id).map(|&i| &self.objects[i])
    }

    pub fn objects(&self) -> &[SIoTObject] {
        &self.objects
    }
}

/// Maps events onto (user, service) implicit feedback.
///
/// One record per distinct pair; weight is the number of events (usage and
/// generation alike) and the timestamp is the earliest `t_start`.
pub fn events_to_interactions(
    events: &[ObjectServiceEvent],
    registry: &ObjectRegistry,
) -> Result<InteractionSet, IngestError> {
    let mut users = IdMap::new();
    let mut services = IdMap::new();
    let mut records = Vec::with_capacity(events.len());
    for (index, e) in events.iter().enumerate() {
        if e.t_start > e.t_end {
            return Err(IngestError::InvalidInterval {
                index,
                t_start: e.t_start,
                t_end: e.t_end,
            });
        }
        let object = registry
            .get(&e.object)
            .ok_or_else(|| IngestError::UnknownIdentifier {
                kind: "object",
                id: e.object.clone(),
            })?;
        if !object.services.contains(&e.service) {
            return Err(IngestError::UnknownIdentifier {
                kind: "service",
                id: e.service.clone(),
            });
        }
        if !object.owners.contains(&e.user) {
            return Err(IngestError::UnknownIdentifier {
                kind: "user",
                id: e.user.clone(),
            });
        }
        records.push(Interaction {
            user: users.get_or_insert(&e.user),
            item: services.get_or_insert(&e.service),
            weight: 1.0,
            timestamp: Some(e.t_start),
        });
    }
    InteractionSet::from_records(Arc::new(users), Arc::new(services), records)
}

fn open(path: &Path) -> Result<csv::Reader<BufReader<File>>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file)))
}

fn check_header(
    reader: &mut csv::Reader<BufReader<File>>,
    path: &Path,
    expected: &[&str],
) -> Result<(), IngestError> {
    let header = reader.headers().map_err(|e| IngestError::Malformed {
        path: path.to_owned(),
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(IngestError::Malformed {
            path: path.to_owned(),
            line: 1,
            reason: format!("expected header `{}`", expected.join(",")),
        });
    }
    Ok(())
}

fn string_records<'r>(
    reader: &'r mut csv::Reader<BufReader<File>>,
    path: &Path,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord), IngestError>> + 'r {
    let path = path.to_owned();
    reader.records().map(move |r| match r {
        Ok(rec) => Ok((rec.position().map(|p| p.line()).unwrap_or(0), rec)),
        Err(e) => {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Err(if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) {
                IngestError::NonUtf8 { path: path.clone(), line }
            } else {
                IngestError::Malformed {
                    path: path.clone(),
                    line,
                    reason: e.to_string(),
                }
            })
        }
    })
}

/// Reads `object,service,user,t_start,t_end,kind`.
pub fn read_event_log(path: &Path) -> Result<Vec<ObjectServiceEvent>, IngestError> {
    let mut reader = open(path)?;
    check_header(
        &mut reader,
        path,
        &["object", "service", "user", "t_start", "t_end", "kind"],
    )?;
    let mut events = Vec::new();
    for rec in string_records(&mut reader, path) {
        let (line, rec) = rec?;
        let malformed = |reason: String| IngestError::Malformed {
            path: path.to_owned(),
            line,
            reason,
        };
        let time = |s: &str| {
            s.parse::<i64>()
                .map_err(|_| malformed(format!("bad timestamp `{s}`")))
        };
        if rec.iter().take(3).any(str::is_empty) {
            return Err(malformed("empty identifier".into()));
        }
        events.push(ObjectServiceEvent {
            object: rec[0].to_owned(),
            service: rec[1].to_owned(),
            user: rec[2].to_owned(),
            t_start: time(&rec[3])?,
            t_end: time(&rec[4])?,
            kind: rec[5].parse().map_err(malformed)?,
        });
    }
    Ok(events)
}

/// Reads `object,services,owners` where the list columns are `;`-separated.
pub fn read_objects(path: &Path) -> Result<ObjectRegistry, IngestError> {
    let mut reader = open(path)?;
    check_header(&mut reader, path, &["object", "services", "owners"])?;
    let mut objects = Vec::new();
    for rec in string_records(&mut reader, path) {
        let (line, rec) = rec?;
        let split = |s: &str| -> BTreeSet<String> {
            s.split(';')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(str::to_owned)
                .collect()
        };
        let obj = SIoTObject {
            id: rec[0].to_owned(),
            services: split(&rec[1]),
            owners: split(&rec[2]),
        };
        if obj.id.is_empty() || obj.services.is_empty() || obj.owners.is_empty() {
            return Err(IngestError::Malformed {
                path: path.to_owned(),
                line,
                reason: "object needs an id, services and owners".into(),
            });
        }
        objects.push(obj);
    }
    ObjectRegistry::new(objects)
}

/// Reads `source,target,kind` relationship rows into the registry.
pub fn read_relationships(
    path: &Path,
    registry: &mut ObjectRegistry,
) -> Result<(), IngestError> {
    let mut reader = open(path)?;
    check_header(&mut reader, path, &["source", "target", "kind"])?;
    for rec in string_records(&mut reader, path) {
        let (_, rec) = rec?;
        for id in [&rec[0], &rec[1]] {
            if registry.get(id).is_none() {
                return Err(IngestError::UnknownIdentifier {
                    kind: "object",
                    id: id.to_owned(),
                });
            }
        }
        registry.relationships.push(Relationship {
            source: rec[0].to_owned(),
            target: rec[1].to_owned(),
            kind: rec[2].to_owned(),
        });
    }
    Ok(())
}
