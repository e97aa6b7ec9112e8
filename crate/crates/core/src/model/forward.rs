//! Forward pass from parameters to enhanced item representations, and the
//! matching reverse-mode gradients.
//!
//! Forward, per modality `f`:
//!
//! ```text
//! X_f  = H_f T_fᵀ + b_f                       transformed features
//! S_f  = relu(cos(X_f[i], X_f[j]))             on the fixed learned neighbor sets
//! Ã_f  = D^{-1/2} S_f D^{-1/2}                 D = diag(row sums of S_f)
//! A_f  = σ M̃_f + (1 - σ) Ã_f                   M̃_f: normalized raw-feature kNN graph
//! A    = Σ_f softmax(α)_f A_f
//! L    = A^l E,  Ô = E + L / ||L||             row-wise, zero rows pass through
//! ```
//!
//! Neighbor selection (top-k) is treated as constant within a step: gradients
//! flow only through the weights of retained edges.

use ndarray::{Array2, Axis};

use crate::error::{GraphError, TrainError};
use crate::fusion::{fuse_modalities, graph_convolve, softmax, spmm, ConvStack, ModalityWeights};
use crate::graph::{
    blend_graphs, build_knn_graph_chunked, normalize_adjacency, GraphConfig, ModalityTransform,
    SparseItemGraph,
};
use crate::ingest::ModalityFeatures;

use super::loss::BprTriple;
use super::{enhance_item_embeddings, ModelConfig, ModelParams};

/// Fixed graph inputs for a training run: raw-feature graphs and the current
/// neighbor sets of each learned graph.
#[derive(Debug, Clone)]
pub struct ItemGraphState<'a> {
    pub features: &'a [ModalityFeatures],
    /// Normalized raw-feature kNN graphs, one per modality.
    pub initial: Vec<SparseItemGraph>,
    /// Neighbor sets of the learned graphs (weights unused), once built.
    pub learned_topology: Vec<Option<SparseItemGraph>>,
    pub config: GraphConfig,
    pub n_layers: usize,
    pub enabled: bool,
}

impl<'a> ItemGraphState<'a> {
    /// Builds the raw-feature graphs. With `model.use_item_graph` off nothing is built.
    pub fn new(
        features: &'a [ModalityFeatures],
        config: &GraphConfig,
        model: &ModelConfig,
    ) -> Result<Self, GraphError> {
        let enabled = model.use_item_graph;
        let initial = if enabled {
            features
                .iter()
                .map(|f| {
                    let knn = build_knn_graph_chunked(f.values.view(), config.k, config.chunk_rows)?;
                    normalize_adjacency(&knn)
                })
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            features,
            initial,
            learned_topology: vec![None; features.len()],
            config: config.clone(),
            n_layers: model.n_layers,
            enabled,
        })
    }

    pub fn uses_learned_graph(&self) -> bool {
        self.enabled && self.config.uses_learned_graph()
    }

    /// Recomputes the learned graphs' neighbor sets from the current transforms.
    pub fn rebuild_learned(&mut self, transforms: &[ModalityTransform]) -> Result<(), GraphError> {
        if !self.uses_learned_graph() {
            return Ok(());
        }
        for (f, (features, transform)) in self.features.iter().zip(transforms).enumerate() {
            let transformed = transform.apply(features.values.view())?;
            let knn = build_knn_graph_chunked(transformed.view(), self.config.k, self.config.chunk_rows)?;
            self.learned_topology[f] = Some(knn);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LearnedForward {
    transformed: Array2<f64>,
    norms: Vec<f64>,
    /// Raw cosine per topology edge (before clamping).
    cosines: Vec<f64>,
    clamped: SparseItemGraph,
    inv_sqrt_deg: Vec<f64>,
    normalized: SparseItemGraph,
}

#[derive(Debug, Clone)]
struct GraphForward {
    modality_weights: Vec<f64>,
    learned: Vec<Option<LearnedForward>>,
    fused: SparseItemGraph,
    conv: ConvStack,
    final_norms: Vec<f64>,
}

/// Everything the backward pass needs, plus the item representations.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `Ô`, the item vectors used for scoring.
    pub item_repr: Array2<f64>,
    graph: Option<GraphForward>,
}

impl ForwardPass {
    /// A pass with no graph path, `Ô = item_repr`.
    pub fn plain(item_repr: Array2<f64>) -> Self {
        Self { item_repr, graph: None }
    }

    /// The fused item graph `A`, when the graph path is active.
    pub fn fused_graph(&self) -> Option<&SparseItemGraph> {
        self.graph.as_ref().map(|g| &g.fused)
    }

    pub fn modality_weights(&self) -> Option<&[f64]> {
        self.graph.as_ref().map(|g| g.modality_weights.as_slice())
    }
}

fn learned_forward(
    features: &ModalityFeatures,
    transform: &ModalityTransform,
    topology: &SparseItemGraph,
) -> Result<LearnedForward, GraphError> {
    let transformed = transform.apply(features.values.view())?;
    let norms: Vec<f64> = transformed
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt())
        .collect();
    let dim = transformed.ncols();
    let x = transformed.as_slice().expect("standard layout");
    let row = |i: usize| &x[i * dim..(i + 1) * dim];
    let mut cosines = Vec::with_capacity(topology.nnz());
    for i in 0..topology.n_items() {
        for &j in &topology.indices()[topology.row_span(i)] {
            let denom = norms[i] * norms[j];
            cosines.push(if denom > 0.0 {
                row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum::<f64>() / denom
            } else {
                0.0
            });
        }
    }
    let clamped = topology.with_weights(cosines.iter().map(|c| c.max(0.0)).collect());
    let inv_sqrt_deg = clamped
        .degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let normalized = normalize_adjacency(&clamped)?;
    Ok(LearnedForward {
        transformed,
        norms,
        cosines,
        clamped,
        inv_sqrt_deg,
        normalized,
    })
}

/// Computes `Ô` (and retains intermediates) for the current parameters.
pub fn forward(params: &ModelParams, state: &ItemGraphState<'_>) -> Result<ForwardPass, TrainError> {
    if !state.enabled {
        return Ok(ForwardPass {
            item_repr: params.item_emb.clone(),
            graph: None,
        });
    }
    let n_modalities = state.features.len();
    if n_modalities == 0 {
        return Err(TrainError::InvalidConfig(
            "the item graph needs at least one modality".into(),
        ));
    }
    if params.transforms.len() != n_modalities || params.modality_logits.len() != n_modalities {
        return Err(TrainError::ShapeMismatch(format!(
            "{n_modalities} modalities but {} transforms and {} logits",
            params.transforms.len(),
            params.modality_logits.len()
        )));
    }

    let mut learned = Vec::with_capacity(n_modalities);
    let mut blended = Vec::with_capacity(n_modalities);
    for f in 0..n_modalities {
        let topology = if state.uses_learned_graph() {
            state.learned_topology[f].as_ref()
        } else {
            None
        };
        match topology {
            Some(topology) => {
                let lf = learned_forward(&state.features[f], &params.transforms[f], topology)?;
                blended.push(blend_graphs(&state.initial[f], &lf.normalized, state.config.sigma)?);
                learned.push(Some(lf));
            }
            None => {
                blended.push(state.initial[f].clone());
                learned.push(None);
            }
        }
    }
    let weights = ModalityWeights::from_logits(params.modality_logits.clone());
    let fused = fuse_modalities(&blended, &weights)?;
    let conv = graph_convolve(&fused, params.item_emb.view(), state.n_layers)?;
    let final_norms = conv
        .last()
        .axis_iter(Axis(0))
        .map(|r| r.dot(&r).sqrt())
        .collect();
    let item_repr = enhance_item_embeddings(params.item_emb.view(), conv.last().view())?;
    Ok(ForwardPass {
        item_repr,
        graph: Some(GraphForward {
            modality_weights: weights.weights(),
            learned,
            fused,
            conv,
            final_norms,
        }),
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact gradients of [`super::bpr_objective`] with respect to every parameter group.
pub fn backward(
    params: &ModelParams,
    state: &ItemGraphState<'_>,
    fwd: &ForwardPass,
    triples: &[BprTriple],
    l2_reg: f64,
) -> Result<ModelParams, TrainError> {
    if triples.is_empty() {
        return Err(TrainError::EmptyTriples);
    }
    let batch = triples.len() as f64;
    let reg_scale = 2.0 * l2_reg / batch;
    let mut grads = params.zeros_like();
    let mut d_repr = Array2::<f64>::zeros(fwd.item_repr.raw_dim());

    for t in triples {
        let user = params.user_emb.row(t.user);
        let pos = fwd.item_repr.row(t.pos);
        let neg = fwd.item_repr.row(t.neg);
        let margin = user.dot(&pos) - user.dot(&neg);
        // d/dm of -ln sigmoid(m)
        let g = -sigmoid(-margin) / batch;
        {
            let mut du = grads.user_emb.row_mut(t.user);
            du.scaled_add(g, &pos);
            du.scaled_add(-g, &neg);
            du.scaled_add(reg_scale, &user);
        }
        d_repr.row_mut(t.pos).scaled_add(g, &user);
        d_repr.row_mut(t.neg).scaled_add(-g, &user);
        grads
            .item_emb
            .row_mut(t.pos)
            .scaled_add(reg_scale, &params.item_emb.row(t.pos));
        grads
            .item_emb
            .row_mut(t.neg)
            .scaled_add(reg_scale, &params.item_emb.row(t.neg));
    }
    grads.item_emb += &d_repr;

    if let Some(graph) = &fwd.graph {
        graph_backward(params, state, graph, &d_repr, &mut grads)?;
    }

    if let Some(group) = grads.first_non_finite() {
        return Err(TrainError::NonFiniteGradient { group });
    }
    Ok(grads)
}

fn graph_backward(
    params: &ModelParams,
    state: &ItemGraphState<'_>,
    graph: &GraphForward,
    d_repr: &Array2<f64>,
    grads: &mut ModelParams,
) -> Result<(), TrainError> {
    // Through the row normalization of L^(l).
    let final_layer = graph.conv.last();
    let mut d_layer = Array2::<f64>::zeros(final_layer.raw_dim());
    for (r, &norm) in graph.final_norms.iter().enumerate() {
        if norm > 0.0 {
            let g = d_repr.row(r);
            let l = final_layer.row(r);
            let proj = g.dot(&l) / (norm * norm);
            let mut out = d_layer.row_mut(r);
            out.scaled_add(1.0 / norm, &g);
            out.scaled_add(-proj / norm, &l);
        }
    }

    // Through L^(l) = A L^(l-1), collecting dA on the fused edge set.
    let fused = &graph.fused;
    let fused_t = fused.transpose();
    let mut d_fused = vec![0.0; fused.nnz()];
    for layer in (1..=graph.conv.n_layers()).rev() {
        let prev = graph.conv.layers[layer - 1].as_slice().expect("standard layout");
        let dl = d_layer.as_standard_layout();
        let dl = dl.as_slice().expect("standard layout");
        let dim = d_layer.ncols();
        for i in 0..fused.n_items() {
            let dli = &dl[i * dim..(i + 1) * dim];
            for p in fused.row_span(i) {
                let j = fused.indices()[p];
                d_fused[p] += dli.iter().zip(&prev[j * dim..(j + 1) * dim]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        d_layer = spmm(&fused_t, d_layer.view());
    }
    grads.item_emb += &d_layer;

    // dA restricted to each modality's edge sets.
    let d_initial: Vec<Vec<f64>> = state.initial.iter().map(|g| g.gather_from(fused, &d_fused)).collect();
    let d_learned: Vec<Option<Vec<f64>>> = graph
        .learned
        .iter()
        .map(|lf| lf.as_ref().map(|lf| lf.normalized.gather_from(fused, &d_fused)))
        .collect();

    // Through the softmax mixture and the skip blend.
    let sigma = state.config.sigma;
    let n_modalities = graph.modality_weights.len();
    let mut d_weight = vec![0.0; n_modalities];
    for f in 0..n_modalities {
        let initial_coef = if graph.learned[f].is_some() { sigma } else { 1.0 };
        let dot = |w: &[f64], d: &[f64]| -> f64 { w.iter().zip(d).map(|(w, d)| w * d).sum() };
        let mut acc = initial_coef * dot(state.initial[f].weights(), &d_initial[f]);
        if let (Some(lf), Some(d)) = (&graph.learned[f], &d_learned[f]) {
            acc += (1.0 - sigma) * dot(lf.normalized.weights(), d);
        }
        d_weight[f] = acc;
    }
    let weights = softmax(&params.modality_logits);
    let mean: f64 = weights.iter().zip(&d_weight).map(|(w, d)| w * d).sum();
    for f in 0..n_modalities {
        grads.modality_logits[f] = weights[f] * (d_weight[f] - mean);
    }

    // Through the learned graphs down to T_f, b_f.
    for (f, lf) in graph.learned.iter().enumerate() {
        let Some(lf) = lf else { continue };
        let coef = graph.modality_weights[f] * (1.0 - sigma);
        let d_norm: Vec<f64> = d_learned[f]
            .as_ref()
            .expect("learned graph present")
            .iter()
            .map(|d| coef * d)
            .collect();
        let d_clamped = normalization_backward(&lf.clamped, &lf.inv_sqrt_deg, &d_norm);
        let dim = lf.transformed.ncols();
        let x = lf.transformed.as_standard_layout();
        let x = x.as_slice().expect("standard layout");
        let mut d_x = vec![0.0; x.len()];
        for (e, (i, j, _)) in lf.clamped.edges().enumerate() {
            let cos = lf.cosines[e];
            if cos <= 0.0 || d_clamped[e] == 0.0 {
                continue;
            }
            let (ni, nj) = (lf.norms[i], lf.norms[j]);
            let g = d_clamped[e];
            let cross = g / (ni * nj);
            let (self_i, self_j) = (-g * cos / (ni * ni), -g * cos / (nj * nj));
            let xi = &x[i * dim..(i + 1) * dim];
            let xj = &x[j * dim..(j + 1) * dim];
            for c in 0..dim {
                d_x[i * dim + c] += cross * xj[c] + self_i * xi[c];
            }
            for c in 0..dim {
                d_x[j * dim + c] += cross * xi[c] + self_j * xj[c];
            }
        }
        let d_x = Array2::from_shape_vec((x.len() / dim.max(1), dim), d_x).expect("shape matches");
        let grad = &mut grads.transforms[f];
        grad.weight += &d_x.t().dot(&state.features[f].values);
        grad.bias += &d_x.sum_axis(Axis(0));
    }
    Ok(())
}

/// Given `dN` for `N = D^{-1/2} S D^{-1/2}` (edge-aligned), returns `dS`.
fn normalization_backward(clamped: &SparseItemGraph, inv_sqrt_deg: &[f64], d_norm: &[f64]) -> Vec<f64> {
    let n = clamped.n_items();
    let mut d_inv = vec![0.0; n];
    let mut d_s = vec![0.0; clamped.nnz()];
    for (e, (i, j, s)) in clamped.edges().enumerate() {
        let (ri, rj) = (inv_sqrt_deg[i], inv_sqrt_deg[j]);
        d_s[e] = d_norm[e] * ri * rj;
        d_inv[i] += d_norm[e] * s * rj;
        d_inv[j] += d_norm[e] * s * ri;
    }
    // r = deg^{-1/2}  =>  dr/ddeg = -r^3 / 2
    let d_deg: Vec<f64> = d_inv
        .iter()
        .zip(inv_sqrt_deg)
        .map(|(d, r)| -0.5 * d * r * r * r)
        .collect();
    for (e, (i, _, _)) in clamped.edges().enumerate() {
        d_s[e] += d_deg[i];
    }
    d_s
}
