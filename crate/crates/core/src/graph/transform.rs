use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::GraphError;
use crate::ingest::ModalityFeatures;

use super::knn::build_knn_graph_chunked;
use super::sparse::{normalize_adjacency, SparseItemGraph};

/// Trainable affine map `h -> T h + b` applied to one modality's features.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityTransform {
    /// `out_dim x in_dim`
    pub weight: Array2<f64>,
    /// `out_dim`
    pub bias: Array1<f64>,
}

impl ModalityTransform {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self, GraphError> {
        if weight.nrows() == 0 {
            return Err(GraphError::DimensionMismatch { expected: 1, found: 0 });
        }
        if bias.len() != weight.nrows() {
            return Err(GraphError::DimensionMismatch {
                expected: weight.nrows(),
                found: bias.len(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    /// Uniform weights with variance `1 / in_dim`, zero bias.
    pub fn random<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let half_width = (3.0 / in_dim.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-half_width, half_width).expect("finite bounds");
        Self {
            weight: Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Applies the map to every row of `values`.
    pub fn apply(&self, values: ArrayView2<'_, f64>) -> Result<Array2<f64>, GraphError> {
        if values.ncols() != self.in_dim() {
            return Err(GraphError::DimensionMismatch {
                expected: self.in_dim(),
                found: values.ncols(),
            });
        }
        let mut out = values.dot(&self.weight.t());
        out += &self.bias;
        Ok(out)
    }
}

/// Row `i` of the output is `T h_i + b`.
pub fn transform_features(
    features: &ModalityFeatures,
    transform: &ModalityTransform,
) -> Result<ModalityFeatures, GraphError> {
    let values = transform.apply(features.values.view())?;
    Ok(ModalityFeatures {
        modality: features.modality.clone(),
        values,
    })
}

/// Transform, kNN, normalize: the learned graph of one modality.
pub fn build_learned_graph(
    features: &ModalityFeatures,
    transform: &ModalityTransform,
    k: usize,
) -> Result<SparseItemGraph, GraphError> {
    let transformed = transform_features(features, transform)?;
    let knn = build_knn_graph_chunked(transformed.values.view(), k, super::knn::DEFAULT_CHUNK_ROWS)?;
    normalize_adjacency(&knn)
}
