//! Per-modality item feature matrices.
//!
//! Binary layout: magic `MMFV1`, little-endian `u64` n_items and dim, then
//! `n_items * dim` little-endian `f32` values, row-major. Rows are positional
//! (row r is item index r) unless a `<path>.ids` sidecar lists one item
//! identifier per row.
//!
//! CSV layout: first line `n_items,dim`, then one `item_id,v1,...,vdim` row per item.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::IngestError;

use super::interactions::IdMap;

pub const FEATURE_MAGIC: &[u8; 5] = b"MMFV1";

/// Dense item x dim feature matrix for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFeatures {
    pub modality: String,
    pub values: Array2<f64>,
}

impl ModalityFeatures {
    pub fn new(modality: impl Into<String>, values: Array2<f64>) -> Result<Self, IngestError> {
        if values.ncols() == 0 {
            return Err(IngestError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(IngestError::NonFinite { row, col });
        }
        Ok(Self {
            modality: modality.into(),
            values,
        })
    }

    pub fn n_items(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Writes the binary format (values narrowed to `f32`).
    pub fn write_binary(&self, path: &Path) -> Result<(), IngestError> {
        let io = |source| IngestError::Io {
            path: path.to_owned(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        out.write_all(FEATURE_MAGIC).map_err(io)?;
        out.write_all(&(self.n_items() as u64).to_le_bytes()).map_err(io)?;
        out.write_all(&(self.dim() as u64).to_le_bytes()).map_err(io)?;
        for v in self.values.iter() {
            out.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
        }
        out.flush().map_err(io)
    }

    /// Writes the CSV format using the given item identifiers.
    pub fn write_csv(&self, path: &Path, items: &IdMap) -> Result<(), IngestError> {
        let io = |source| IngestError::Io {
            path: path.to_owned(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(out, "{},{}", self.n_items(), self.dim()).map_err(io)?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            write!(out, "{}", items.id(i).unwrap_or_default()).map_err(io)?;
            for v in row {
                write!(out, ",{v}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// What [`load_modality_features`] had to patch up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureLoadReport {
    /// Indexed items with no row in the file (filled with zeros).
    pub missing: Vec<usize>,
    /// Rows whose identifier is not in the item index (ignored).
    pub unknown: usize,
}

/// Loads one modality and aligns its rows to `items`.
///
/// Items without a row become zero vectors; more than `max_missing` of them is an error.
pub fn load_modality_features(
    path: &Path,
    modality: &str,
    items: &IdMap,
    max_missing: usize,
) -> Result<(ModalityFeatures, FeatureLoadReport), IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_owned(),
        source,
    };
    let mut file = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 5];
    let is_binary = match file.read_exact(&mut magic) {
        Ok(()) => &magic == FEATURE_MAGIC,
        Err(_) => false,
    };
    drop(file);

    let rows = if is_binary {
        read_binary(path)?
    } else {
        read_csv(path)?
    };
    let (dim, rows) = rows;

    let mut values = Array2::<f64>::zeros((items.len(), dim));
    let mut present = vec![false; items.len()];
    let mut report = FeatureLoadReport::default();
    for (key, row) in rows.into_iter().enumerate() {
        let (id, data) = row;
        let idx = match id {
            Some(id) => items.get(&id),
            None if key < items.len() => Some(key),
            None => {
                return Err(IngestError::ItemCountMismatch {
                    expected: items.len(),
                    found: key + 1,
                })
            }
        };
        let Some(idx) = idx else {
            report.unknown += 1;
            continue;
        };
        if let Some(col) = data.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFinite { row: key, col });
        }
        values.row_mut(idx).assign(&ndarray::ArrayView1::from(&data));
        present[idx] = true;
    }
    report.missing = present
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(i, _)| i)
        .collect();
    if report.missing.len() > max_missing {
        return Err(IngestError::TooManyMissing {
            missing: report.missing.len(),
            allowed: max_missing,
        });
    }
    if !report.missing.is_empty() {
        log::warn!(
            "{}: {} items have no `{modality}` features, filled with zeros",
            path.display(),
            report.missing.len()
        );
    }
    Ok((ModalityFeatures::new(modality, values)?, report))
}

type Rows = (usize, Vec<(Option<String>, Vec<f64>)>);

fn ids_sidecar(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".ids");
    p.into()
}

fn read_binary(path: &Path) -> Result<Rows, IngestError> {
    let io = |source| IngestError::Io {
        path: path.to_owned(),
        source,
    };
    let bytes = std::fs::read(path).map_err(io)?;
    let corrupt = |reason: &str| IngestError::Malformed {
        path: path.to_owned(),
        line: 0,
        reason: reason.to_owned(),
    };
    if bytes.len() < 21 {
        return Err(corrupt("truncated header"));
    }
    let n_items = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(IngestError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let body = &bytes[21..];
    let expected = n_items
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt("header overflow"))?;
    if body.len() != expected {
        return Err(IngestError::DimensionMismatch {
            expected,
            found: body.len(),
        });
    }
    let sidecar = ids_sidecar(path);
    let ids: Option<Vec<String>> = if sidecar.exists() {
        let map = IdMap::read(&sidecar)?;
        if map.len() != n_items {
            return Err(IngestError::ItemCountMismatch {
                expected: n_items,
                found: map.len(),
            });
        }
        Some(map.ids().to_vec())
    } else {
        None
    };
    let rows = body
        .chunks_exact(4 * dim)
        .enumerate()
        .map(|(r, chunk)| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            (ids.as_ref().map(|ids| ids[r].clone()), data)
        })
        .collect();
    Ok((dim, rows))
}

fn read_csv(path: &Path) -> Result<Rows, IngestError> {
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
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| malformed(1, "missing `n_items,dim` header".into()))?
        .map_err(|e| malformed(1, e.to_string()))?;
    if header.len() != 2 {
        return Err(malformed(1, "expected `n_items,dim` header".into()));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| malformed(1, format!("bad count `{s}`")))
    };
    let n_items = parse_count(&header[0])?;
    let dim = parse_count(&header[1])?;
    if dim == 0 {
        return Err(IngestError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut rows = Vec::with_capacity(n_items);
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) {
                IngestError::NonUtf8 {
                    path: path.to_owned(),
                    line,
                }
            } else {
                malformed(line, e.to_string())
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != dim + 1 {
            return Err(IngestError::DimensionMismatch {
                expected: dim,
                found: rec.len().saturating_sub(1),
            });
        }
        let data = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| malformed(line, format!("bad value `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((Some(rec[0].to_owned()), data));
    }
    if rows.len() != n_items {
        return Err(IngestError::ItemCountMismatch {
            expected: n_items,
            found: rows.len(),
        });
    }
    Ok((dim, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn items(n: usize) -> IdMap {
        IdMap::sequential("i", n)
    }

    #[test]
    fn csv_shape_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "3,2\ni0,1,2\ni1,3,4\ni2,5,6\n").unwrap();
        let (f, report) = load_modality_features(&path, "visual", &items(3), 0).unwrap();
        assert_eq!(f.values.dim(), (3, 2));
        assert_eq!(f.values, array![[1., 2.], [3., 4.], [5., 6.]]);
        assert_eq!(report, FeatureLoadReport::default());
    }

    #[test]
    fn nan_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "3,2\ni0,1,2\ni1,NaN,4\ni2,5,6\n").unwrap();
        match load_modality_features(&path, "visual", &items(3), 0) {
            Err(IngestError::NonFinite { row, col }) => assert_eq!((row, col), (1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_item_becomes_zero_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "2,2\ni2,5,6\ni0,1,2\n").unwrap();
        let (f, report) = load_modality_features(&path, "textual", &items(3), 1).unwrap();
        assert_eq!(report.missing, vec![1]);
        assert_eq!(f.values, array![[1., 2.], [0., 0.], [5., 6.]]);
        assert!(matches!(
            load_modality_features(&path, "textual", &items(3), 0),
            Err(IngestError::TooManyMissing { missing: 1, allowed: 0 })
        ));
    }

    #[test]
    fn dimension_mismatch_in_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "2,2\ni0,1,2\ni1,3\n").unwrap();
        assert!(matches!(
            load_modality_features(&path, "v", &items(2), 0),
            Err(IngestError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn binary_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.mmfv");
        let f = ModalityFeatures::new("visual", array![[0.5, -1.0, 2.0], [4.0, 0.25, 8.0]]).unwrap();
        f.write_binary(&path).unwrap();
        let (g, _) = load_modality_features(&path, "visual", &items(2), 0).unwrap();
        assert_eq!(f, g);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_modality_features(&path, "visual", &items(2), 0).is_err());
    }

    #[test]
    fn binary_with_id_sidecar_aligns_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.mmfv");
        ModalityFeatures::new("v", array![[1.0], [2.0]]).unwrap().write_binary(&path).unwrap();
        IdMap::from_ids(["i1", "i0"]).unwrap().write(&ids_sidecar(&path)).unwrap();
        let (g, _) = load_modality_features(&path, "v", &items(2), 0).unwrap();
        assert_eq!(g.values, array![[2.0], [1.0]]);
    }

    #[test]
    fn csv_writer_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let f = ModalityFeatures::new("v", array![[0.1, 0.2], [0.3, 1e-7]]).unwrap();
        f.write_csv(&path, &items(2)).unwrap();
        let (g, _) = load_modality_features(&path, "v", &items(2), 0).unwrap();
        assert_eq!(f, g);
    }
}
