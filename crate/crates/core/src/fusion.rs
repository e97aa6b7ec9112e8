//! Softmax-weighted fusion of modality graphs and parameter-free graph convolution.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::GraphError;
use crate::graph::{weighted_sum, SparseItemGraph};

/// Trainable per-modality logits; the mixing weights are their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityWeights {
    pub logits: Vec<f64>,
}

impl ModalityWeights {
    /// Zero logits, i.e. uniform weights.
    pub fn uniform(n_modalities: usize) -> Self {
        Self {
            logits: vec![0.0; n_modalities],
        }
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        Self { logits }
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `Σ_m softmax(logits)_m * graphs[m]` over the union of edge sets.
pub fn fuse_modalities(
    graphs: &[SparseItemGraph],
    weights: &ModalityWeights,
) -> Result<SparseItemGraph, GraphError> {
    if graphs.is_empty() || graphs.len() != weights.logits.len() {
        return Err(GraphError::ModalityCountMismatch {
            graphs: graphs.len(),
            weights: weights.logits.len(),
        });
    }
    let refs: Vec<&SparseItemGraph> = graphs.iter().collect();
    weighted_sum(&refs, &weights.weights())
}

/// Layer outputs `L^(0) .. L^(n_layers)`, retained for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub layers: Vec<Array2<f64>>,
}

impl ConvStack {
    pub fn n_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn last(&self) -> &Array2<f64> {
        self.layers.last().expect("stack holds at least L^(0)")
    }
}

/// `out = graph * x` (sparse times dense), parallel over output rows.
pub fn spmm(graph: &SparseItemGraph, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let dim = x.ncols();
    let mut out = Array2::<f64>::zeros((graph.n_items(), dim));
    if dim == 0 {
        return out;
    }
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let (indices, weights) = (graph.indices(), graph.weights());
    out.as_slice_mut()
        .expect("fresh array")
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(i, row)| {
            for p in graph.row_span(i) {
                let w = weights[p];
                let xj = &xs[indices[p] * dim..(indices[p] + 1) * dim];
                for (o, v) in row.iter_mut().zip(xj) {
                    *o += w * v;
                }
            }
        });
    out
}

/// Propagates `item_emb` through `n_layers` rounds of `L <- A L`.
pub fn graph_convolve(
    graph: &SparseItemGraph,
    item_emb: ArrayView2<'_, f64>,
    n_layers: usize,
) -> Result<ConvStack, GraphError> {
    if item_emb.nrows() != graph.n_items() {
        return Err(GraphError::SizeMismatch {
            left: graph.n_items(),
            right: item_emb.nrows(),
        });
    }
    let mut layers = Vec::with_capacity(n_layers + 1);
    layers.push(item_emb.to_owned());
    for layer in 1..=n_layers {
        let next = spmm(graph, layers[layer - 1].view());
        if let Some(row) = next
            .axis_iter(Axis(0))
            .position(|r| r.iter().any(|v| !v.is_finite()))
        {
            return Err(GraphError::NonFinite { layer, row });
        }
        layers.push(next);
    }
    Ok(ConvStack { layers })
}
