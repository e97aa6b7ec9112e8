//! Per-modality item graphs: clamped-cosine kNN construction, degree
//! normalization, learned graphs over transformed features and the skip blend.

mod knn;
mod sparse;
mod transform;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, GraphError};

pub use knn::{build_knn_graph, build_knn_graph_chunked, DEFAULT_CHUNK_ROWS};
pub use sparse::{blend_graphs, normalize_adjacency, weighted_sum, SparseItemGraph};
pub use transform::{build_learned_graph, transform_features, ModalityTransform};

/// Item-graph hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Neighbors kept per row.
    pub k: usize,
    /// Weight of the raw-feature graph in the skip blend, in (0, 1].
    pub sigma: f64,
    /// Rows per similarity block.
    pub chunk_rows: usize,
    /// Learn a second graph from transformed features.
    pub learned_graph: bool,
    /// Epochs between rebuilds of the learned graph's neighbor sets.
    pub relearn_every: usize,
    /// Output dimension of each modality transform.
    pub transform_dim: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 10,
            sigma: 0.7,
            chunk_rows: DEFAULT_CHUNK_ROWS,
            learned_graph: true,
            relearn_every: 1,
            transform_dim: 32,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self, n_items: usize) -> Result<(), GraphError> {
        if self.k == 0 || self.k >= n_items {
            return Err(GraphError::KOutOfRange { k: self.k, n_items });
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(GraphError::InvalidSigma(self.sigma));
        }
        if self.transform_dim == 0 {
            return Err(GraphError::DimensionMismatch { expected: 1, found: 0 });
        }
        Ok(())
    }

    /// Whether the learned graph contributes at all.
    pub fn uses_learned_graph(&self) -> bool {
        self.learned_graph && self.sigma < 1.0
    }
}

/// Inspection metadata written next to an exported graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub n_items: usize,
    pub k: usize,
    pub sigma: f64,
    pub modality_id: String,
}

/// Writes `src,dst,weight` rows to `path` and the metadata to `path` + `.json`.
pub fn export_graph(graph: &SparseItemGraph, meta: &GraphMeta, path: &Path) -> Result<(), Error> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let write = |out: &mut BufWriter<File>, line: String| {
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
    };
    write(&mut out, "src,dst,weight\n".into())?;
    for (i, j, w) in graph.edges() {
        write(&mut out, format!("{i},{j},{w}\n"))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".json");
    let json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))
}

/// Reads a graph written by [`export_graph`].
pub fn import_graph(path: &Path) -> Result<(SparseItemGraph, GraphMeta), Error> {
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".json");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: GraphMeta =
        serde_json::from_str(&meta_text).map_err(|e| Error::Config(format!("{}: {e}", Path::new(&meta_path).display())))?;
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut rows = vec![Vec::new(); meta.n_items];
    for rec in reader.deserialize::<(usize, usize, f64)>() {
        let (i, j, w) = rec.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if i >= meta.n_items {
            return Err(GraphError::InvalidEdge { row: i, col: j, reason: "source out of range" }.into());
        }
        rows[i].push((j, w));
    }
    Ok((SparseItemGraph::from_rows(rows)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let g = SparseItemGraph::from_rows(vec![vec![(1, 0.25), (2, 1.0 / 3.0)], vec![], vec![(0, 0.5)]]).unwrap();
        let meta = GraphMeta { n_items: 3, k: 2, sigma: 0.7, modality_id: "visual".into() };
        export_graph(&g, &meta, &path).unwrap();
        let (back, back_meta) = import_graph(&path).unwrap();
        assert_eq!(back, g);
        assert_eq!(back_meta, meta);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("src,dst,weight\n0,1,0.25\n"));
    }

    #[test]
    fn config_validation() {
        let cfg = GraphConfig::default();
        assert!(cfg.validate(11).is_ok());
        assert!(cfg.validate(10).is_err());
        assert!(GraphConfig { sigma: 1.5, ..cfg.clone() }.validate(100).is_err());
        assert!(!GraphConfig { sigma: 1.0, ..cfg }.uses_learned_graph());
    }
}
