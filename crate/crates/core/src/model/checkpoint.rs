//! Binary checkpoint: magic `MMCK1`, `u32` version, `u64` header length, a
//! JSON header (configs and shapes), then little-endian `f64` payloads in
//! [`ModelParams::groups`] order followed by the item representations.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::CheckpointError;
use crate::eval::ScoreModel;
use crate::graph::{GraphConfig, ModalityTransform};

use super::train::{TrainConfig, TrainedModel};
use super::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MMCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    /// `(out_dim, in_dim)` per modality transform.
    pub transform_shapes: Vec<(usize, usize)>,
    pub n_modalities: usize,
    pub model_config: ModelConfig,
    pub graph_config: GraphConfig,
    pub train_config: TrainConfig,
    pub best_epoch: usize,
}

impl CheckpointHeader {
    fn payload_len(&self) -> usize {
        let transforms: usize = self.transform_shapes.iter().map(|(o, i)| o * i + o).sum();
        self.n_users * self.dim + 2 * self.n_items * self.dim + transforms + self.n_modalities
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
    pub item_repr: Array2<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel) -> Self {
        let p = &model.params;
        Self {
            header: CheckpointHeader {
                n_users: p.n_users(),
                n_items: p.n_items(),
                dim: p.dim(),
                transform_shapes: p.transforms.iter().map(|t| (t.out_dim(), t.in_dim())).collect(),
                n_modalities: p.modality_logits.len(),
                model_config: model.model_config.clone(),
                graph_config: model.graph_config.clone(),
                train_config: model.train_config.clone(),
                best_epoch: model.best_epoch,
            },
            params: p.clone(),
            item_repr: model.item_repr.clone(),
        }
    }

    /// Fails unless the stored embeddings have the given shape.
    pub fn expect_shape(&self, n_users: usize, n_items: usize, dim: usize) -> Result<(), CheckpointError> {
        let h = &self.header;
        if (h.n_users, h.n_items, h.dim) != (n_users, n_items, dim) {
            return Err(CheckpointError::ShapeMismatch(format!(
                "checkpoint holds {}x{} users/items at d={}, expected {n_users}x{n_items} at d={dim}",
                h.n_users, h.n_items, h.dim
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(17 + header.len() + 8 * self.header.payload_len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, group) in self.params.groups() {
            for v in group {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in &self.item_repr {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(cursor.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(cursor.take(8)?.try_into().expect("8 bytes"));
        let header_len = usize::try_from(header_len)
            .map_err(|_| CheckpointError::Corrupt("header length overflows".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(cursor.take(header_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("bad header: {e}")))?;
        if header.n_modalities != header.transform_shapes.len() && !header.transform_shapes.is_empty() {
            return Err(CheckpointError::Corrupt("transform count does not match modality count".into()));
        }
        let expected = header
            .payload_len()
            .checked_mul(8)
            .ok_or_else(|| CheckpointError::Corrupt("payload size overflows".into()))?;
        if cursor.remaining() != expected {
            return Err(CheckpointError::Corrupt(format!(
                "expected {expected} payload bytes, found {}",
                cursor.remaining()
            )));
        }
        let mut matrix = |rows: usize, cols: usize| -> Result<Array2<f64>, CheckpointError> {
            let values = cursor.f64s(rows * cols)?;
            Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
        };
        let user_emb = matrix(header.n_users, header.dim)?;
        let item_emb = matrix(header.n_items, header.dim)?;
        let mut transforms = Vec::with_capacity(header.transform_shapes.len());
        for &(out_dim, in_dim) in &header.transform_shapes {
            let weight = matrix(out_dim, in_dim)?;
            let bias = matrix(1, out_dim)?.into_shape_with_order(out_dim).expect("one row");
            transforms.push(
                ModalityTransform::new(weight, bias)
                    .map_err(|e| CheckpointError::Corrupt(format!("transform: {e}")))?,
            );
        }
        let modality_logits = matrix(1, header.n_modalities)?.into_raw_vec_and_offset().0;
        let item_repr = matrix(header.n_items, header.dim)?;
        Ok(Self {
            header,
            params: ModelParams {
                user_emb,
                item_emb,
                transforms,
                modality_logits,
            },
            item_repr,
        })
    }
}

impl ScoreModel for Checkpoint {
    fn n_users(&self) -> usize {
        self.params.n_users()
    }

    fn n_items(&self) -> usize {
        self.item_repr.nrows()
    }

    fn score_user(&self, user: usize) -> Vec<f64> {
        self.item_repr.dot(&self.params.user_emb.row(user)).to_vec()
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.remaining() < n {
            return Err(CheckpointError::Corrupt(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, Checkpoint::from_model(model).to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainHistory;

    fn model() -> TrainedModel {
        let params = ModelParams::init(3, 5, 4, &[(2, 6), (2, 3)], 0.1, 9);
        TrainedModel {
            item_repr: params.item_emb.mapv(|v| v * 3.0 + 1e-17),
            params,
            model_config: ModelConfig { embedding_dim: 4, ..Default::default() },
            graph_config: GraphConfig::default(),
            train_config: TrainConfig::default(),
            history: TrainHistory::default(),
            best_epoch: 7,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mmck");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.item_repr, m.item_repr);
        assert_eq!(back.header.best_epoch, 7);
        assert_eq!(back.header.train_config, m.train_config);
    }

    #[test]
    fn every_truncation_is_corrupt() {
        let bytes = Checkpoint::from_model(&model()).to_bytes();
        for cut in [0, 3, 7, 12, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, CheckpointError::Corrupt(_) | CheckpointError::BadMagic),
                "cut {cut}: {err}"
            );
        }
        let mut extended = bytes.clone();
        extended.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extended), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn magic_version_and_shape_checks() {
        let mut bytes = Checkpoint::from_model(&model()).to_bytes();
        bytes[5] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::VersionMismatch { found: 9, expected: 1 })
        ));
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::BadMagic)));
        let ck = Checkpoint::from_model(&model());
        assert!(ck.expect_shape(3, 5, 4).is_ok());
        assert!(matches!(ck.expect_shape(3, 5, 8), Err(CheckpointError::ShapeMismatch(_))));
    }
}
