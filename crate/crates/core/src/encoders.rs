//! Per-modality toy encoders.
//!
//! Each encoder exposes two taps: `rep256`, the penultimate feature vector,
//! and `rep2`, the logits of its own two-class head applied to `rep256`.
//! The precomputed kind skips the trunk entirely and treats an external
//! 256-wide feature vector as `rep256`, so only its head trains.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::binio::{read_f32_file, write_f32_file};
use crate::domain::Modality;
use crate::record::{InstanceRecord, Payload};
use crate::tensor::{positive_probability, Tape, Tensor, TensorError, Var};

pub const REP_DIM: usize = 256;
pub const VOTE_DIM: usize = 2;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("{kind} encoder expects {expected}, got {got}")]
    Shape {
        kind: &'static str,
        expected: String,
        got: String,
    },
    #[error(
        "instance `{id}`: precomputed {modality} embedding has length {len}, expected {REP_DIM}"
    )]
    EmbeddingLength {
        id: String,
        modality: Modality,
        len: usize,
    },
    #[error("instance `{id}` has no {modality} input")]
    MissingInput { id: String, modality: Modality },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum EncoderKind {
    Sequence { vocab: usize, seq_len: usize },
    Vector { input_dim: usize },
    FrameStack { frames: usize, frame_dim: usize },
    Precomputed,
}

impl EncoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Sequence { .. } => "sequence",
            EncoderKind::Vector { .. } => "vector",
            EncoderKind::FrameStack { .. } => "frame_stack",
            EncoderKind::Precomputed => "precomputed",
        }
    }

    fn expected(&self) -> String {
        match self {
            EncoderKind::Sequence { vocab, seq_len } => {
                format!("tokens[{seq_len}] with ids < {vocab}")
            }
            EncoderKind::Vector { input_dim } => format!("vector[{input_dim}]"),
            EncoderKind::FrameStack { frames, frame_dim } => {
                format!("frames[{frames}] of {frame_dim} pixels")
            }
            EncoderKind::Precomputed => format!("vector[{REP_DIM}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub frame_features: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden: 128,
            frame_features: 64,
        }
    }
}

/// Fully connected layer, `weight: [in x out]`, `bias: [1 x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) for both weights and bias.
    pub fn new(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = draw(input * output);
        let b = draw(output);
        Self {
            weight: Tensor::param(vec![input, output], w).expect("linear weight"),
            bias: Tensor::param(vec![1, output], b).expect("linear bias"),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::param(vec![input, output], vec![0.0; input * output]).unwrap(),
            bias: Tensor::param(vec![1, output], vec![0.0; output]).unwrap(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `x * W + b` given the vars the two tensors were bound to.
    pub fn apply(tape: &mut Tape<'_>, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Tensors a module trains, in a fixed order shared by `params`,
/// `params_mut` and the order in which its forward pass binds them.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|t| t.zero_grad());
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEncoder {
    kind: EncoderKind,
    config: EncoderConfig,
    embedding: Option<Tensor>,
    frame_map: Option<Linear>,
    trunk: Vec<Linear>,
    head: Linear,
}

/// Output taps of one forward pass, both `[batch x width]`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub rep256: Var,
    pub rep2: Var,
}

/// Concrete values of both taps for a single payload.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub rep2: [f64; VOTE_DIM],
    pub rep256: Vec<f64>,
}

impl ModalityEncoder {
    pub fn new(kind: EncoderKind, config: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (embedding, frame_map, trunk_in) = match &kind {
            EncoderKind::Sequence { vocab, .. } => {
                let data: Vec<f64> = (0..vocab * config.embed_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let t = Tensor::param(vec![*vocab, config.embed_dim], data).expect("embedding");
                (Some(t), None, Some(config.embed_dim))
            }
            EncoderKind::Vector { input_dim } => (None, None, Some(*input_dim)),
            EncoderKind::FrameStack { frame_dim, .. } => (
                None,
                Some(Linear::new(*frame_dim, config.frame_features, &mut rng)),
                Some(config.frame_features),
            ),
            EncoderKind::Precomputed => (None, None, None),
        };
        let trunk = match trunk_in {
            Some(d) => vec![
                Linear::new(d, config.hidden, &mut rng),
                Linear::new(config.hidden, REP_DIM, &mut rng),
            ],
            None => Vec::new(),
        };
        let head = Linear::new(REP_DIM, VOTE_DIM, &mut rng);
        Self {
            kind,
            config,
            embedding,
            frame_map,
            trunk,
            head,
        }
    }

    pub fn kind(&self) -> &EncoderKind {
        &self.kind
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Linear {
        &mut self.head
    }

    /// Everything except the two-class head.
    pub fn trunk_params(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        v.extend(self.embedding.iter());
        if let Some(f) = &self.frame_map {
            v.extend(f.params());
        }
        for l in &self.trunk {
            v.extend(l.params());
        }
        v
    }

    pub fn trunk_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        v.extend(self.embedding.iter_mut());
        if let Some(f) = &mut self.frame_map {
            v.extend(f.params_mut());
        }
        for l in &mut self.trunk {
            v.extend(l.params_mut());
        }
        v
    }

    fn shape_error(&self, got: &Payload) -> EncoderError {
        EncoderError::Shape {
            kind: self.kind.name(),
            expected: self.kind.expected(),
            got: got.describe(),
        }
    }

    fn check(&self, p: &Payload) -> Result<(), EncoderError> {
        let ok = match (&self.kind, p) {
            (EncoderKind::Sequence { vocab, seq_len }, Payload::Tokens(t)) => {
                t.len() == *seq_len && t.iter().all(|&i| i < *vocab)
            }
            (EncoderKind::Vector { input_dim }, Payload::Vector(v)) => v.len() == *input_dim,
            (
                EncoderKind::FrameStack { frames, frame_dim },
                Payload::Frames {
                    frames: f,
                    height,
                    width,
                    data,
                },
            ) => f == frames && height * width == *frame_dim && data.len() == f * frame_dim,
            (EncoderKind::Precomputed, Payload::Vector(v)) => v.len() == REP_DIM,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(self.shape_error(p))
        }
    }

    /// Record a forward pass for a batch. Trunk tensors are bound first, then
    /// the head, matching `trunk_params` followed by the head's params.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        batch: &[&Payload],
    ) -> Result<(EncoderVars, Vec<Var>), EncoderError> {
        for p in batch {
            self.check(p)?;
        }
        let b = batch.len();
        let trunk_vars: Vec<Var> = self
            .trunk_params()
            .into_iter()
            .map(|t| tape.leaf(t))
            .collect();
        let head_vars = [tape.leaf(&self.head.weight), tape.leaf(&self.head.bias)];
        let mut cursor = 0;
        let mut next = || {
            let v = trunk_vars[cursor];
            cursor += 1;
            v
        };

        let rep256 = match &self.kind {
            EncoderKind::Precomputed => {
                let data: Vec<f64> = batch
                    .iter()
                    .flat_map(|p| vector_of(p).iter().cloned())
                    .collect();
                tape.constant(b, REP_DIM, data)?
            }
            kind => {
                let pooled = match kind {
                    EncoderKind::Sequence { seq_len, .. } => {
                        let table = next();
                        let ids: Vec<usize> = batch
                            .iter()
                            .flat_map(|p| match p {
                                Payload::Tokens(t) => t.iter().cloned(),
                                _ => unreachable!(),
                            })
                            .collect();
                        let rows = tape.gather_rows(table, &ids)?;
                        tape.mean_groups(rows, *seq_len)?
                    }
                    EncoderKind::Vector { input_dim } => {
                        let data: Vec<f64> = batch
                            .iter()
                            .flat_map(|p| vector_of(p).iter().cloned())
                            .collect();
                        tape.constant(b, *input_dim, data)?
                    }
                    EncoderKind::FrameStack { frames, frame_dim } => {
                        let data: Vec<f64> = batch
                            .iter()
                            .flat_map(|p| match p {
                                Payload::Frames { data, .. } => data.iter().cloned(),
                                _ => unreachable!(),
                            })
                            .collect();
                        let x = tape.constant(b * frames, *frame_dim, data)?;
                        let (w, bias) = (next(), next());
                        let per_frame = Linear::apply(tape, x, w, bias)?;
                        let per_frame = tape.relu(per_frame);
                        tape.mean_groups(per_frame, *frames)?
                    }
                    EncoderKind::Precomputed => unreachable!(),
                };
                let mut h = pooled;
                for _ in 0..self.trunk.len() {
                    let (w, bias) = (next(), next());
                    h = Linear::apply(tape, h, w, bias)?;
                    h = tape.relu(h);
                }
                h
            }
        };
        let rep2 = Linear::apply(tape, rep256, head_vars[0], head_vars[1])?;
        let mut all = trunk_vars;
        all.extend(head_vars);
        Ok((EncoderVars { rep256, rep2 }, all))
    }

    /// Inference on a single payload.
    pub fn encode(&self, payload: &Payload) -> Result<EncoderOutput, EncoderError> {
        let mut tape = Tape::new();
        let (vars, _) = self.forward(&mut tape, &[payload])?;
        let r2 = tape.value(vars.rep2);
        Ok(EncoderOutput {
            rep2: [r2[0], r2[1]],
            rep256: tape.value(vars.rep256).to_vec(),
        })
    }
}

fn vector_of(p: &Payload) -> &[f64] {
    match p {
        Payload::Vector(v) => v,
        _ => unreachable!("checked by ModalityEncoder::check"),
    }
}

impl Parameterized for ModalityEncoder {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.trunk_params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        v.extend(self.embedding.iter_mut());
        if let Some(f) = &mut self.frame_map {
            v.extend(f.params_mut());
        }
        for l in &mut self.trunk {
            v.extend(l.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

/// Probability of the positive class from the encoder's own head.
pub fn predict_single(encoder: &ModalityEncoder, payload: &Payload) -> Result<f64, EncoderError> {
    Ok(positive_probability(&encoder.encode(payload)?.rep2))
}

/// Whitespace word vocabulary. Id 0 pads, id 1 is unknown, the rest are the
/// sorted distinct words seen at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: BTreeMap<String, usize>,
    pub seq_len: usize,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNKNOWN: usize = 1;

    pub fn build<'s>(texts: impl IntoIterator<Item = &'s str>, seq_len: Option<usize>) -> Self {
        let mut distinct = std::collections::BTreeSet::new();
        let mut longest = 1;
        for t in texts {
            let mut n = 0;
            for w in t.split_whitespace() {
                distinct.insert(w.to_string());
                n += 1;
            }
            longest = longest.max(n);
        }
        let words = distinct
            .into_iter()
            .enumerate()
            .map(|(i, w)| (w, i + 2))
            .collect();
        Self {
            words,
            seq_len: seq_len.unwrap_or(longest),
        }
    }

    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    /// Map to exactly `seq_len` ids, truncating or padding.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = text
            .split_whitespace()
            .take(self.seq_len)
            .map(|w| *self.words.get(w).unwrap_or(&Self::UNKNOWN))
            .collect();
        ids.resize(self.seq_len, Self::PAD);
        ids
    }
}

pub fn write_embedding_file(path: &Path, count: usize, dim: usize, data: &[f64]) -> io::Result<()> {
    if count * dim != data.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "count x dim != data length",
        ));
    }
    write_f32_file(path, &json!({ "count": count, "dim": dim }), data)
}

/// Returns `(count, dim, flat data)`.
pub fn read_embedding_file(path: &Path) -> io::Result<(usize, usize, Vec<f64>)> {
    let (header, data) = read_f32_file(path)?;
    let field = |k: &str| {
        header[k].as_u64().map(|v| v as usize).ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidData, format!("header lacks `{k}`"))
        })
    };
    let (count, dim) = (field("count")?, field("dim")?);
    if count * dim != data.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "header declares {count}x{dim} but file holds {} values",
                data.len()
            ),
        ));
    }
    Ok((count, dim, data))
}

/// Read an embedding file into per-instance rows, rejecting widths other
/// than 256. `ids` names the rows for error messages.
pub fn load_precomputed_embeddings(
    path: &Path,
    modality: Modality,
    ids: &[String],
) -> Result<Vec<Vec<f64>>, EncoderError> {
    let (count, dim, data) = read_embedding_file(path).map_err(|source| EncoderError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if dim != REP_DIM {
        return Err(EncoderError::EmbeddingLength {
            id: ids.first().cloned().unwrap_or_else(|| "<none>".into()),
            modality,
            len: dim,
        });
    }
    if count != ids.len() {
        return Err(EncoderError::Io {
            path: path.display().to_string(),
            source: io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{count} rows for {} instances", ids.len()),
            ),
        });
    }
    Ok(data.chunks(dim).map(|c| c.to_vec()).collect())
}

/// Precomputed features carried on records, validated to width 256.
pub fn precomputed_payloads(
    records: &[InstanceRecord],
    modality: Modality,
) -> Result<Vec<Payload>, EncoderError> {
    records
        .iter()
        .map(|r| {
            let v = r
                .embeddings
                .get(modality)
                .ok_or_else(|| EncoderError::MissingInput {
                    id: r.id.clone(),
                    modality,
                })?;
            if v.len() != REP_DIM {
                return Err(EncoderError::EmbeddingLength {
                    id: r.id.clone(),
                    modality,
                    len: v.len(),
                });
            }
            Ok(Payload::Vector(v.clone()))
        })
        .collect()
}

/// Write a precomputed embedding file, checking every row is 256 wide.
pub fn store_precomputed_embeddings(path: &Path, rows: &[Vec<f64>]) -> Result<(), EncoderError> {
    if let Some(bad) = rows.iter().position(|r| r.len() != REP_DIM) {
        return Err(EncoderError::EmbeddingLength {
            id: format!("row {bad}"),
            modality: Modality::Text,
            len: rows[bad].len(),
        });
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).ok();
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    write_embedding_file(path, rows.len(), REP_DIM, &flat).map_err(|source| EncoderError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> ModalityEncoder {
        ModalityEncoder::new(
            EncoderKind::Sequence {
                vocab: 64,
                seq_len: 12,
            },
            EncoderConfig::default(),
            1,
        )
    }

    fn frames_payload(seed: u64) -> Payload {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Payload::Frames {
            frames: 16,
            height: 8,
            width: 8,
            data: (0..1024).map(|_| rng.random::<f64>()).collect(),
        }
    }

    #[test]
    fn sequence_shape_contract() {
        let out = seq().encode(&Payload::Tokens((0..12).collect())).unwrap();
        assert_eq!(out.rep256.len(), REP_DIM);
        assert_eq!(out.rep2.len(), VOTE_DIM);
        assert!(out.rep256.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn shape_errors_name_kind() {
        let err = seq().encode(&Payload::Tokens(vec![1; 11])).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("sequence") && msg.contains("tokens[12]"),
            "{msg}"
        );
        let err = seq().encode(&Payload::Vector(vec![0.0; 12])).unwrap_err();
        assert!(matches!(err, EncoderError::Shape { .. }));
        assert!(seq().encode(&Payload::Tokens(vec![64; 12])).is_err());
    }

    #[test]
    fn zero_payload_twice_is_identical() {
        let enc = ModalityEncoder::new(
            EncoderKind::Vector { input_dim: 32 },
            EncoderConfig::default(),
            5,
        );
        let p = Payload::Vector(vec![0.0; 32]);
        assert_eq!(enc.encode(&p).unwrap(), enc.encode(&p).unwrap());
        let enc2 = ModalityEncoder::new(
            EncoderKind::Vector { input_dim: 32 },
            EncoderConfig::default(),
            5,
        );
        assert_eq!(enc.encode(&p).unwrap(), enc2.encode(&p).unwrap());
    }

    #[test]
    fn frame_order_does_not_matter() {
        let enc = ModalityEncoder::new(
            EncoderKind::FrameStack {
                frames: 16,
                frame_dim: 64,
            },
            EncoderConfig::default(),
            2,
        );
        let p = frames_payload(3);
        let Payload::Frames { data, .. } = &p else {
            unreachable!()
        };
        let mut reversed = Vec::new();
        for f in (0..16).rev() {
            reversed.extend_from_slice(&data[f * 64..(f + 1) * 64]);
        }
        let q = Payload::Frames {
            frames: 16,
            height: 8,
            width: 8,
            data: reversed,
        };
        let (a, b) = (enc.encode(&p).unwrap(), enc.encode(&q).unwrap());
        for (x, y) in a.rep256.iter().zip(&b.rep256) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rep2_is_head_of_rep256() {
        let encs = [
            (seq(), Payload::Tokens((0..12).collect())),
            (
                ModalityEncoder::new(
                    EncoderKind::Vector { input_dim: 7 },
                    EncoderConfig::default(),
                    3,
                ),
                Payload::Vector((0..7).map(|i| i as f64 * 0.1).collect()),
            ),
            (
                ModalityEncoder::new(
                    EncoderKind::FrameStack {
                        frames: 16,
                        frame_dim: 64,
                    },
                    EncoderConfig::default(),
                    3,
                ),
                frames_payload(1),
            ),
            (
                ModalityEncoder::new(EncoderKind::Precomputed, EncoderConfig::default(), 3),
                Payload::Vector(vec![0.25; REP_DIM]),
            ),
        ];
        for (enc, p) in encs {
            let out = enc.encode(&p).unwrap();
            let w = enc.head().weight.data();
            let b = enc.head().bias.data();
            for c in 0..2 {
                let v: f64 = (0..REP_DIM)
                    .map(|i| out.rep256[i] * w[i * 2 + c])
                    .sum::<f64>()
                    + b[c];
                assert!((v - out.rep2[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn precomputed_has_only_head_params() {
        let enc = ModalityEncoder::new(EncoderKind::Precomputed, EncoderConfig::default(), 0);
        assert_eq!(enc.param_count(), REP_DIM * 2 + 2);
        assert!(enc.trunk_params().is_empty());
    }

    #[test]
    fn predict_single_range_and_extremes() {
        let mut enc = ModalityEncoder::new(EncoderKind::Precomputed, EncoderConfig::default(), 0);
        enc.head_mut()
            .weight
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
        enc.head_mut().bias.data_mut().copy_from_slice(&[0.0, 0.0]);
        let p = Payload::Vector(vec![1.0; REP_DIM]);
        assert_eq!(predict_single(&enc, &p).unwrap(), 0.5);
        enc.head_mut()
            .bias
            .data_mut()
            .copy_from_slice(&[-10.0, 10.0]);
        assert!(predict_single(&enc, &p).unwrap() >= 1.0 - 1e-8);
        let enc = seq();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let t: Vec<usize> = (0..12).map(|_| rng.random_range(0..64)).collect();
            let p = predict_single(&enc, &Payload::Tokens(t)).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn vocabulary_pads_and_truncates() {
        let v = Vocabulary::build(["b a", "c a d"], None);
        assert_eq!(v.seq_len, 3);
        assert_eq!(v.size(), 6);
        assert_eq!(
            v.encode("a zzz"),
            vec![2, Vocabulary::UNKNOWN, Vocabulary::PAD]
        );
        assert_eq!(v.encode("a b c d").len(), 3);
    }

    #[test]
    fn embedding_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.f32");
        let rows: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64 + 0.5; REP_DIM]).collect();
        store_precomputed_embeddings(&p, &rows).unwrap();
        let ids: Vec<String> = (0..3).map(|i| format!("i{i}")).collect();
        assert_eq!(
            load_precomputed_embeddings(&p, Modality::Video, &ids).unwrap(),
            rows
        );

        let short = vec![vec![0.0; 255]];
        assert!(store_precomputed_embeddings(&p, &short).is_err());
        write_embedding_file(&p, 1, 255, &short[0]).unwrap();
        let err = load_precomputed_embeddings(&p, Modality::Video, &ids[..1]).unwrap_err();
        assert!(err.to_string().contains("i0") && err.to_string().contains("255"));
    }
}
