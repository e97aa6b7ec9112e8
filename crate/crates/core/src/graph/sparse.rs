use ndarray::Array2;

use crate::error::GraphError;

/// Row-compressed item x item adjacency with non-negative weights.
///
/// Rows are sorted by neighbor index, hold no self-loops and no duplicate
/// neighbors. The graph is directed: `(i, j)` present does not imply `(j, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseItemGraph {
    n_items: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseItemGraph {
    pub fn empty(n_items: usize) -> Self {
        Self {
            n_items,
            indptr: vec![0; n_items + 1],
            indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds a graph from per-row `(neighbor, weight)` lists in any order.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self, GraphError> {
        let n_items = rows.len();
        let mut indptr = Vec::with_capacity(n_items + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            for (pos, &(j, w)) in row.iter().enumerate() {
                if j >= n_items {
                    return Err(GraphError::InvalidEdge { row: i, col: j, reason: "neighbor out of range" });
                }
                if j == i {
                    return Err(GraphError::InvalidEdge { row: i, col: j, reason: "self-loop" });
                }
                if pos > 0 && row[pos - 1].0 == j {
                    return Err(GraphError::InvalidEdge { row: i, col: j, reason: "duplicate edge" });
                }
                if !w.is_finite() {
                    return Err(GraphError::InvalidEdge { row: i, col: j, reason: "non-finite weight" });
                }
                if w < 0.0 {
                    return Err(GraphError::NegativeWeight { row: i, col: j, weight: w });
                }
                indices.push(j);
                weights.push(w);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            n_items,
            indptr,
            indices,
            weights,
        })
    }

    /// Same sparsity pattern as `self`, new weights (one per stored edge).
    pub fn with_weights(&self, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), self.weights.len(), "weight count must match edge count");
        Self {
            n_items: self.n_items,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            weights,
        }
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    /// Edge-index range of row `i` into [`Self::indices`] / [`Self::weights`].
    pub fn row_span(&self, i: usize) -> std::ops::Range<usize> {
        self.indptr[i]..self.indptr[i + 1]
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Iterates `(row, col, weight)` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_items).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    /// Position of edge `(i, j)` in the edge arrays.
    pub fn edge_position(&self, i: usize, j: usize) -> Option<usize> {
        let span = self.row_span(i);
        self.indices[span.clone()]
            .binary_search(&j)
            .ok()
            .map(|p| span.start + p)
    }

    /// For every edge of `self`, the entry of `values` at the same edge of
    /// `other` (zero where `other` lacks it). `values` is aligned with `other`'s edges.
    pub fn gather_from(&self, other: &SparseItemGraph, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), other.nnz());
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n_items {
            let theirs = other.row_span(i);
            let mut q = theirs.start;
            for &j in &self.indices[self.row_span(i)] {
                while q < theirs.end && other.indices[q] < j {
                    q += 1;
                }
                out.push(if q < theirs.end && other.indices[q] == j { values[q] } else { 0.0 });
            }
        }
        out
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.edge_position(i, j).map_or(0.0, |p| self.weights[p])
    }

    /// Row sums.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n_items).map(|i| self.weights[self.row_span(i)].iter().sum()).collect()
    }

    pub fn max_out_degree(&self) -> usize {
        (0..self.n_items)
            .map(|i| self.indptr[i + 1] - self.indptr[i])
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_items, self.n_items));
        for (i, j, w) in self.edges() {
            out[[i, j]] = w;
        }
        out
    }

    /// Transposed graph (edge `(i, j)` becomes `(j, i)`).
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_items + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for i in 0..self.n_items {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut weights = vec![0.0; self.nnz()];
        for (i, j, w) in self.edges() {
            let p = next[j];
            indices[p] = i;
            weights[p] = w;
            next[j] += 1;
        }
        Self {
            n_items: self.n_items,
            indptr,
            indices,
            weights,
        }
    }
}

/// Entrywise `Σ coef[g] * graphs[g]` over the union of edge sets.
pub fn weighted_sum(graphs: &[&SparseItemGraph], coefs: &[f64]) -> Result<SparseItemGraph, GraphError> {
    assert_eq!(graphs.len(), coefs.len());
    let Some(first) = graphs.first() else {
        return Err(GraphError::ModalityCountMismatch { graphs: 0, weights: coefs.len() });
    };
    let n = first.n_items();
    for g in graphs {
        if g.n_items() != n {
            return Err(GraphError::SizeMismatch { left: n, right: g.n_items() });
        }
    }
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    let mut acc: Vec<(usize, f64)> = Vec::new();
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        acc.clear();
        for (g, &c) in graphs.iter().zip(coefs) {
            // Rows are sorted, so a two-way merge keeps `acc` sorted.
            merged.clear();
            let mut a = acc.iter().peekable();
            let mut b = g.row(i).peekable();
            loop {
                match (a.peek(), b.peek()) {
                    (Some(&&(ja, wa)), Some(&(jb, wb))) => {
                        if ja < jb {
                            merged.push((ja, wa));
                            a.next();
                        } else if jb < ja {
                            merged.push((jb, c * wb));
                            b.next();
                        } else {
                            merged.push((ja, wa + c * wb));
                            a.next();
                            b.next();
                        }
                    }
                    (Some(&&e), None) => {
                        merged.push(e);
                        a.next();
                    }
                    (None, Some(&(jb, wb))) => {
                        merged.push((jb, c * wb));
                        b.next();
                    }
                    (None, None) => break,
                }
            }
            std::mem::swap(&mut acc, &mut merged);
        }
        for &(j, w) in &acc {
            indices.push(j);
            weights.push(w);
        }
        indptr.push(indices.len());
    }
    Ok(SparseItemGraph {
        n_items: n,
        indptr,
        indices,
        weights,
    })
}

/// Symmetric degree normalization `D^{-1/2} M D^{-1/2}` with `deg(i)` the row sum.
///
/// Edges touching a zero-degree node get weight zero; the pattern is kept.
pub fn normalize_adjacency(graph: &SparseItemGraph) -> Result<SparseItemGraph, GraphError> {
    if let Some((row, col, weight)) = graph.edges().find(|&(_, _, w)| w < 0.0) {
        return Err(GraphError::NegativeWeight { row, col, weight });
    }
    let deg = graph.degrees();
    let mut weights = Vec::with_capacity(graph.nnz());
    for i in 0..graph.n_items {
        for p in graph.row_span(i) {
            let d = deg[i] * deg[graph.indices[p]];
            weights.push(if d > 0.0 { graph.weights[p] / d.sqrt() } else { 0.0 });
        }
    }
    Ok(graph.with_weights(weights))
}

/// Skip-connection blend `sigma * initial + (1 - sigma) * learned`.
pub fn blend_graphs(
    initial: &SparseItemGraph,
    learned: &SparseItemGraph,
    sigma: f64,
) -> Result<SparseItemGraph, GraphError> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(GraphError::InvalidSigma(sigma));
    }
    if initial.n_items() != learned.n_items() {
        return Err(GraphError::SizeMismatch {
            left: initial.n_items(),
            right: learned.n_items(),
        });
    }
    if sigma == 1.0 {
        return Ok(initial.clone());
    }
    weighted_sum(&[initial, learned], &[sigma, 1.0 - sigma])
}
