//! Trainable parameters, the graph-enhanced scoring function, BPR loss with
//! hand-derived gradients, and the training loop (including the MF baseline).

mod checkpoint;
mod forward;
mod loss;
mod optim;
mod sampler;
mod train;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::graph::ModalityTransform;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{backward, forward, ForwardPass, ItemGraphState};
pub use loss::{bpr_loss, bpr_objective, bpr_term, BprTriple, LossParts};
pub use optim::{Optimizer, OptimizerKind};
pub use sampler::{sample_negatives, PositiveIndex};
pub use train::{train, train_mf, EpochRecord, TrainConfig, TrainHistory, TrainedModel};

/// Architecture switches shared by the graph model and the MF baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    /// Convolution layers over the fused item graph (0..=4).
    pub n_layers: usize,
    /// Add the normalized convolution output to item embeddings. Off turns the
    /// model into plain matrix factorization.
    pub use_item_graph: bool,
    /// Half-width of the zero-mean uniform embedding initializer.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            n_layers: 2,
            use_item_graph: true,
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn mf(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            n_layers: 0,
            use_item_graph: false,
            ..Self::default()
        }
    }
}

// Separate RNG streams so that the embedding initialization does not depend on
// how many modality transforms exist.
const EMBEDDING_STREAM: u64 = 1;
const TRANSFORM_STREAM: u64 = 2;

/// All trainable state. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `n_users x d`
    pub user_emb: Array2<f64>,
    /// `n_items x d`, the collaborative item embeddings before graph enhancement.
    pub item_emb: Array2<f64>,
    pub transforms: Vec<ModalityTransform>,
    pub modality_logits: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization. `transform_shapes` holds `(out_dim, in_dim)` per modality.
    pub fn init(
        n_users: usize,
        n_items: usize,
        dim: usize,
        transform_shapes: &[(usize, usize)],
        init_scale: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EMBEDDING_STREAM);
        let dist = Uniform::new_inclusive(-init_scale, init_scale).expect("finite init scale");
        let user_emb = Array2::from_shape_simple_fn((n_users, dim), || dist.sample(&mut rng));
        let item_emb = Array2::from_shape_simple_fn((n_items, dim), || dist.sample(&mut rng));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TRANSFORM_STREAM);
        let transforms = transform_shapes
            .iter()
            .map(|&(out_dim, in_dim)| ModalityTransform::random(out_dim, in_dim, &mut rng))
            .collect();
        Self {
            user_emb,
            item_emb,
            transforms,
            modality_logits: vec![0.0; transform_shapes.len()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            user_emb: Array2::zeros(self.user_emb.raw_dim()),
            item_emb: Array2::zeros(self.item_emb.raw_dim()),
            transforms: self
                .transforms
                .iter()
                .map(|t| ModalityTransform {
                    weight: Array2::zeros(t.weight.raw_dim()),
                    bias: ndarray::Array1::zeros(t.bias.len()),
                })
                .collect(),
            modality_logits: vec![0.0; self.modality_logits.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.user_emb.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.user_emb.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.item_emb.nrows()
    }

    /// Flat views of every parameter group, in a fixed order.
    pub fn groups(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("user_emb", self.user_emb.as_slice().expect("standard layout")),
            ("item_emb", self.item_emb.as_slice().expect("standard layout")),
        ];
        for t in &self.transforms {
            out.push(("transform_weight", t.weight.as_slice().expect("standard layout")));
            out.push(("transform_bias", t.bias.as_slice().expect("standard layout")));
        }
        out.push(("modality_logits", &self.modality_logits));
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("user_emb", self.user_emb.as_slice_mut().expect("standard layout")),
            ("item_emb", self.item_emb.as_slice_mut().expect("standard layout")),
        ];
        for t in &mut self.transforms {
            out.push(("transform_weight", t.weight.as_slice_mut().expect("standard layout")));
            out.push(("transform_bias", t.bias.as_slice_mut().expect("standard layout")));
        }
        out.push(("modality_logits", &mut self.modality_logits));
        out
    }

    /// Name of the first group holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.groups()
            .into_iter()
            .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| name)
    }
}

/// `Ô_i = Õ_i + L_i / ||L_i||`; rows with a zero convolution output pass through.
pub fn enhance_item_embeddings(
    item_emb: ArrayView2<'_, f64>,
    conv_final: ArrayView2<'_, f64>,
) -> Result<Array2<f64>, TrainError> {
    if item_emb.dim() != conv_final.dim() {
        return Err(TrainError::ShapeMismatch(format!(
            "item embeddings {:?} vs convolution output {:?}",
            item_emb.dim(),
            conv_final.dim()
        )));
    }
    let mut out = item_emb.to_owned();
    for (mut row, conv) in out.rows_mut().into_iter().zip(conv_final.rows()) {
        let norm = conv.dot(&conv).sqrt();
        if norm > 0.0 {
            row.scaled_add(1.0 / norm, &conv);
        }
    }
    Ok(out)
}

/// Inner-product preference score.
pub fn score(user: ArrayView1<'_, f64>, item: ArrayView1<'_, f64>) -> Result<f64, TrainError> {
    if user.len() != item.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "user dim {} vs item dim {}",
            user.len(),
            item.len()
        )));
    }
    Ok(user.dot(&item))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn enhancement_adds_unit_direction() {
        let out = enhance_item_embeddings(array![[1., 1.]].view(), array![[3., 4.]].view()).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 1.6, epsilon = 1e-15);
        assert_abs_diff_eq!(out[[0, 1]], 1.8, epsilon = 1e-15);
    }

    #[test]
    fn enhancement_zero_row_passes_through() {
        let out = enhance_item_embeddings(array![[0.3, -2.]].view(), array![[0., 0.]].view()).unwrap();
        assert_eq!(out, array![[0.3, -2.]]);
    }

    #[test]
    fn enhancement_with_unit_row_adds_it() {
        let v = array![[0.6, 0.8]];
        let out = enhance_item_embeddings(array![[1., 2.]].view(), v.view()).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 1.6, epsilon = 1e-15);
        assert_abs_diff_eq!(out[[0, 1]], 2.8, epsilon = 1e-15);
        assert!(enhance_item_embeddings(array![[1., 2.]].view(), array![[1.]].view()).is_err());
    }

    #[test]
    fn score_cases() {
        assert_eq!(score(array![1., 0.].view(), array![0., 5.].view()).unwrap(), 0.0);
        let v = array![2., -3.];
        assert_eq!(score(v.view(), v.view()).unwrap(), 13.0);
        assert_eq!(score(array![1., 2.].view(), array![3., 4.].view()).unwrap(), 11.0);
        assert!(score(array![1.].view(), array![1., 2.].view()).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ModelParams::init(4, 5, 3, &[(2, 6)], 0.1, 7);
        let b = ModelParams::init(4, 5, 3, &[(2, 6)], 0.1, 7);
        assert_eq!(a, b);
        assert!(a.user_emb.iter().chain(a.item_emb.iter()).all(|v| v.abs() <= 0.1));
        let no_modalities = ModelParams::init(4, 5, 3, &[], 0.1, 7);
        assert_eq!(no_modalities.user_emb, a.user_emb);
        assert_eq!(no_modalities.item_emb, a.item_emb);
        assert_eq!(a.modality_logits, vec![0.0]);
    }
}
