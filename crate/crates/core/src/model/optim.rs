use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" | "adaptive-moment" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Applies gradient updates group by group in a fixed order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ModelParams) -> Self {
        let (first, second) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => {
                let zeros: Vec<Vec<f64>> = params.groups().iter().map(|(_, g)| vec![0.0; g.len()]).collect();
                (zeros.clone(), zeros)
            }
        };
        Self {
            kind,
            lr,
            step: 0,
            first,
            second,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let grad_groups = grads.groups();
        match self.kind {
            OptimizerKind::Sgd => {
                for ((_, p), (_, g)) in params.groups_mut().into_iter().zip(&grad_groups) {
                    for (p, g) in p.iter_mut().zip(g.iter()) {
                        *p -= self.lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.step);
                let c2 = 1.0 - BETA2.powi(self.step);
                for (k, ((_, p), (_, g))) in params.groups_mut().into_iter().zip(&grad_groups).enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for idx in 0..p.len() {
                        let g = g[idx];
                        m[idx] = BETA1 * m[idx] + (1.0 - BETA1) * g;
                        v[idx] = BETA2 * v[idx] + (1.0 - BETA2) * g * g;
                        p[idx] -= self.lr * (m[idx] / c1) / ((v[idx] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}
