use serde::{Deserialize, Serialize};

use crate::error::TrainError;

use super::forward::{forward, ForwardPass, ItemGraphState};
use super::ModelParams;

/// `(u, i, j)`: user `u` prefers observed item `i` over unobserved item `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// BPR term and L2 penalty, kept apart so the ranking loss stays auditable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub bpr: f64,
    pub reg: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.bpr + self.reg
    }
}

/// `-ln sigmoid(m)`, stable for large `|m|`.
pub fn bpr_term(margin: f64) -> f64 {
    // softplus(-m) = max(-m, 0) + ln(1 + e^{-|m|})
    (-margin).max(0.0) + (-margin.abs()).exp().ln_1p()
}

/// Loss on already-computed item representations.
///
/// `reg = l2 / B * Σ (||U_u||² + ||E_i||² + ||E_j||²)` over the batch rows.
pub fn bpr_objective(
    params: &ModelParams,
    fwd: &ForwardPass,
    triples: &[BprTriple],
    l2_reg: f64,
) -> Result<LossParts, TrainError> {
    if triples.is_empty() {
        return Err(TrainError::EmptyTriples);
    }
    let mut bpr = 0.0;
    let mut reg = 0.0;
    for t in triples {
        let user = params.user_emb.row(t.user);
        let margin = user.dot(&fwd.item_repr.row(t.pos)) - user.dot(&fwd.item_repr.row(t.neg));
        bpr += bpr_term(margin);
        if l2_reg != 0.0 {
            let pos = params.item_emb.row(t.pos);
            let neg = params.item_emb.row(t.neg);
            reg += user.dot(&user) + pos.dot(&pos) + neg.dot(&neg);
        }
    }
    let batch = triples.len() as f64;
    Ok(LossParts {
        bpr: bpr / batch,
        reg: l2_reg * reg / batch,
    })
}

/// Runs the forward pass and evaluates the loss.
pub fn bpr_loss(
    triples: &[BprTriple],
    params: &ModelParams,
    state: &ItemGraphState<'_>,
    l2_reg: f64,
) -> Result<LossParts, TrainError> {
    if triples.is_empty() {
        return Err(TrainError::EmptyTriples);
    }
    let fwd = forward(params, state)?;
    bpr_objective(params, &fwd, triples, l2_reg)
}
