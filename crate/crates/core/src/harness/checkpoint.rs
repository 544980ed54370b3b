//! Model checkpoints: `FFCK` magic, a u32 version, a u64 metadata length,
//! JSON metadata, then every parameter as little-endian fp32 in `params`
//! order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::ExperimentConfig;
use super::results::CellKey;
use crate::encoders::{Parameterized, Vocabulary};
use crate::strategies::{Architecture, History, Model, Strategy, TrainedModel};

pub const MAGIC: &[u8; 4] = b"FFCK";
pub const VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingData(usize),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("parameter {index} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint holds {found} parameter tensors, model has {expected}")]
    ParamCount { expected: usize, found: usize },
    #[error("checkpoint architecture cannot be built: {0}")]
    Architecture(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    pub shapes: Vec<Vec<usize>>,
    pub names: Vec<String>,
    /// Hash of the experiment config that produced the model.
    pub config_hash: u64,
    pub seed: u64,
    pub strategy: Option<Strategy>,
    pub cell: Option<CellKey>,
    pub history: Option<History>,
}

impl CheckpointMeta {
    /// Metadata describing `model`'s layout.
    pub fn new(model: &Model, config_hash: u64, seed: u64) -> Self {
        Self {
            architecture: model.architecture(),
            shapes: model.params().iter().map(|t| t.shape().to_vec()).collect(),
            names: model.param_names(),
            config_hash,
            seed,
            strategy: None,
            cell: None,
            history: None,
        }
    }

    pub fn with_vocabulary(mut self, vocabulary: Option<Vocabulary>) -> Self {
        self.architecture.vocabulary = vocabulary;
        self
    }

    /// Metadata for a trained grid cell, including its training history.
    pub fn for_cell(
        cfg: &ExperimentConfig,
        key: &CellKey,
        vocabulary: Option<Vocabulary>,
        trained: &TrainedModel,
    ) -> Self {
        let mut history = trained.history.clone();
        history.best_scores.clear();
        history.final_scores.clear();
        let mut meta =
            Self::new(&trained.model, cfg.hash(), cfg.train.seed).with_vocabulary(vocabulary);
        meta.seed = key.seed;
        meta.strategy = Some(trained.strategy);
        meta.cell = Some(*key);
        meta.history = Some(history);
        meta
    }
}

/// Serialize `model` with `meta`. The metadata's shapes must describe the model.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let params = model.params();
    check_shapes(
        &meta.shapes,
        &params
            .iter()
            .map(|t| t.shape().to_vec())
            .collect::<Vec<_>>(),
    )?;
    let json = serde_json::to_vec(meta)?;
    let numel: usize = params.iter().map(|t| t.numel()).sum();
    let mut buf = Vec::with_capacity(PREAMBLE + json.len() + 4 * numel);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in &params {
        for &x in t.data() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let tmp = path.with_extension("ffck.tmp");
    fs::write(&tmp, &buf).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn check_shapes(expected: &[Vec<usize>], found: &[Vec<usize>]) -> Result<(), CheckpointError> {
    if expected.len() != found.len() {
        return Err(CheckpointError::ParamCount {
            expected: expected.len(),
            found: found.len(),
        });
    }
    for (index, (e, f)) in expected.iter().zip(found).enumerate() {
        if e != f {
            return Err(CheckpointError::ShapeMismatch {
                index,
                expected: e.clone(),
                found: f.clone(),
            });
        }
    }
    Ok(())
}

/// Parse a checkpoint image into metadata and widened parameter values.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointMeta, Vec<f64>), CheckpointError> {
    let need = |needed: usize| {
        if bytes.len() < needed {
            Err(CheckpointError::Truncated {
                needed,
                found: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    need(PREAMBLE)?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let meta_end = PREAMBLE
        .checked_add(meta_len)
        .ok_or(CheckpointError::Truncated {
            needed: usize::MAX,
            found: bytes.len(),
        })?;
    need(meta_end)?;
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[PREAMBLE..meta_end])?;
    let numel: usize = meta
        .shapes
        .iter()
        .map(|s| s.iter().product::<usize>())
        .sum();
    let end = meta_end + 4 * numel;
    need(end)?;
    if bytes.len() > end {
        return Err(CheckpointError::TrailingData(bytes.len() - end));
    }
    let values = bytes[meta_end..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((meta, values))
}

fn read(path: &Path) -> Result<(CheckpointMeta, Vec<f64>), CheckpointError> {
    decode_checkpoint(&fs::read(path).map_err(io_err(path))?)
}

fn fill(model: &mut Model, values: &[f64]) {
    let mut offset = 0;
    for t in model.params_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
}

/// Overwrite the parameters of an existing model, which must have the
/// checkpoint's shapes.
pub fn load_checkpoint_into(
    path: &Path,
    model: &mut Model,
) -> Result<CheckpointMeta, CheckpointError> {
    let (meta, values) = read(path)?;
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|t| t.shape().to_vec()).collect();
    check_shapes(&shapes, &meta.shapes)?;
    fill(model, &values);
    Ok(meta)
}

/// Rebuild the model described by a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta), CheckpointError> {
    let (meta, values) = read(path)?;
    let mut model = Model::from_architecture(&meta.architecture)
        .map_err(|e| CheckpointError::Architecture(e.to_string()))?;
    let shapes: Vec<Vec<usize>> = model.params().iter().map(|t| t.shape().to_vec()).collect();
    check_shapes(&shapes, &meta.shapes)?;
    fill(&mut model, &values);
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Modality;
    use crate::encoders::{EncoderConfig, EncoderKind, ModalityEncoder};
    use crate::fusion::{FusionHead, FusionKind};
    use crate::strategies::{FusedModel, SingleModel};

    fn small() -> EncoderConfig {
        EncoderConfig {
            embed_dim: 4,
            hidden: 8,
            frame_features: 4,
        }
    }

    fn fused(seed: u64) -> Model {
        let kinds = [
            EncoderKind::Sequence {
                vocab: 10,
                seq_len: 5,
            },
            EncoderKind::Vector { input_dim: 6 },
            EncoderKind::FrameStack {
                frames: 2,
                frame_dim: 3,
            },
        ];
        Model::Fused(FusedModel {
            encoders: kinds.map(|k| ModalityEncoder::new(k, small(), seed)),
            head: FusionHead::new(FusionKind::Feature, seed, 0.5).unwrap(),
        })
    }

    fn as_f32(m: &Model) -> Vec<u32> {
        m.params()
            .iter()
            .flat_map(|t| t.data().iter().map(|&x| (x as f32).to_bits()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_exact_at_fp32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ffck");
        let model = fused(3);
        let meta = CheckpointMeta::new(&model, 42, 3);
        save_checkpoint(&path, &model, &meta).unwrap();
        let (loaded, got) = load_checkpoint(&path).unwrap();
        assert_eq!(got, meta);
        assert_eq!(as_f32(&loaded), as_f32(&model));
        let again = dir.path().join("n.ffck");
        save_checkpoint(&again, &loaded, &got).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());

        let mut target = fused(9);
        load_checkpoint_into(&path, &mut target).unwrap();
        assert_eq!(as_f32(&target), as_f32(&model));
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ffck");
        let model = fused(1);
        save_checkpoint(&path, &model, &CheckpointMeta::new(&model, 0, 1)).unwrap();
        let good = fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(CheckpointError::BadMagic)
        ));

        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(CheckpointError::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));

        for cut in [2, 10, 40, good.len() - 1] {
            assert!(
                matches!(
                    decode_checkpoint(&good[..cut]),
                    Err(CheckpointError::Truncated { .. })
                ),
                "cut {cut}"
            );
        }
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(
            decode_checkpoint(&long),
            Err(CheckpointError::TrailingData(1))
        ));
    }

    #[test]
    fn other_architecture_is_a_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ffck");
        let model = fused(1);
        save_checkpoint(&path, &model, &CheckpointMeta::new(&model, 0, 1)).unwrap();
        let mut other = Model::Fused(match fused(1) {
            Model::Fused(mut f) => {
                f.encoders[1] =
                    ModalityEncoder::new(EncoderKind::Vector { input_dim: 7 }, small(), 0);
                f
            }
            Model::Single(_) => unreachable!(),
        });
        assert!(matches!(
            load_checkpoint_into(&path, &mut other),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
        let mut single = Model::Single(SingleModel {
            modality: Modality::Audio,
            encoder: ModalityEncoder::new(EncoderKind::Vector { input_dim: 6 }, small(), 0),
        });
        assert!(matches!(
            load_checkpoint_into(&path, &mut single),
            Err(CheckpointError::ParamCount { .. })
        ));
    }
}
