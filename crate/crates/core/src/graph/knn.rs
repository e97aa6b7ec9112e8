use std::cmp::Ordering;

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::GraphError;
use crate::ingest::ModalityFeatures;

use super::sparse::SparseItemGraph;

pub const DEFAULT_CHUNK_ROWS: usize = 1024;

/// Directed kNN graph over clamped cosine similarity.
///
/// Row `i` keeps its `k` most similar items (self excluded, ties to the smaller
/// index); negative similarities are clamped to zero and zero-weight edges are
/// dropped, so rows built from a zero vector are empty.
pub fn build_knn_graph(features: &ModalityFeatures, k: usize) -> Result<SparseItemGraph, GraphError> {
    build_knn_graph_chunked(features.values.view(), k, DEFAULT_CHUNK_ROWS)
}

/// [`build_knn_graph`] over a raw matrix, computing similarities `chunk_rows` rows at a time.
pub fn build_knn_graph_chunked(
    values: ArrayView2<'_, f64>,
    k: usize,
    chunk_rows: usize,
) -> Result<SparseItemGraph, GraphError> {
    let n = values.nrows();
    if n == 0 || values.ncols() == 0 {
        return Err(GraphError::EmptyFeatures);
    }
    if k == 0 || k >= n {
        return Err(GraphError::KOutOfRange { k, n_items: n });
    }
    let unit = unit_rows(values);
    let chunk_rows = chunk_rows.max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk_rows).collect();
    let blocks: Vec<Vec<Vec<(usize, f64)>>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk_rows).min(n);
            let sims = unit.slice(s![start..end, ..]).dot(&unit.t());
            sims.axis_iter(Axis(0))
                .enumerate()
                .map(|(offset, row)| {
                    let i = start + offset;
                    let candidates = row
                        .iter()
                        .enumerate()
                        .filter(|&(j, &s)| j != i && s > 0.0)
                        .map(|(j, &s)| (j, s))
                        .collect();
                    top_k(candidates, k)
                })
                .collect()
        })
        .collect();
    SparseItemGraph::from_rows(blocks.into_iter().flatten().collect())
}

/// Rows scaled to unit L2 norm; zero rows stay zero.
pub(crate) fn unit_rows(values: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut unit = values.to_owned();
    for mut row in unit.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    unit
}

fn by_similarity(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Keeps the `k` best `(index, similarity)` pairs, returned sorted by index.
pub(crate) fn top_k(mut candidates: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, by_similarity);
        candidates.truncate(k);
    }
    candidates.sort_by_key(|&(j, _)| j);
    candidates
}
