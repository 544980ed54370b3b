//! Individual, joint and staged training with Adam, gradient accumulation
//! and a plateau scheduler driven by held-out AUC.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{derive_seed, Dimension, Modality, TranscriptSource};
use crate::encoders::{
    EncoderConfig, EncoderError, EncoderKind, ModalityEncoder, Parameterized, Vocabulary,
};
use crate::eval::{roc_auc, EvalError};
use crate::fusion::{FusionError, FusionHead, FusionKind};
use crate::ingest::{select_text, IngestError};
use crate::record::{text_to_vector, InstanceRecord, Payload};
use crate::tensor::{
    positive_probability, AdamState, PlateauScheduler, Tape, Tensor, TensorError, Var,
};

/// Upper bound on the token sequence length inferred from transcripts.
pub const MAX_SEQ_LEN: usize = 64;
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("no {0} instances to train on")]
    EmptyData(&'static str),
    #[error("no {0} input available for this task")]
    MissingModality(Modality),
    #[error("staged training needs at least 2 epochs, got {0}")]
    TooFewEpochs(usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} fusion cannot be trained")]
    Unsupported(FusionKind),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T> = std::result::Result<T, StrategyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Individual,
    Joint,
    Staged,
}

impl Strategy {
    pub fn key(self) -> &'static str {
        match self {
            Strategy::Individual => "individual",
            Strategy::Joint => "joint",
            Strategy::Staged => "staged",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "individual" => Ok(Strategy::Individual),
            "joint" => Ok(Strategy::Joint),
            "staged" => Ok(Strategy::Staged),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub patience: usize,
    pub factor: f64,
    pub dropout: f64,
    pub seed: u64,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 2e-4,
            batch_size: 2,
            grad_accum: 10,
            patience: 2,
            factor: 0.5,
            dropout: 0.5,
            seed: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum
    }

    /// `(stage 1, stage 2)` epochs of staged training.
    pub fn stage_epochs(&self) -> (usize, usize) {
        let first = self.epochs / 2;
        (first, self.epochs - first)
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size).div_ceil(self.grad_accum)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_epochs(&self, epochs: usize) -> Self {
        Self {
            epochs,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StrategyError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return bad("batch_size and grad_accum must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        PlateauScheduler::new(self.patience, self.factor)?;
        Ok(())
    }
}

/// Payloads of one side of a split, indexed by modality.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
    pub payloads: [Vec<Payload>; 3],
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Train and test inputs for one dimension, ready for the encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Split,
    pub test: Split,
    /// Encoder kind per modality; `None` when that modality is absent.
    pub kinds: [Option<EncoderKind>; 3],
    pub vocabulary: Option<Vocabulary>,
}

impl TaskData {
    /// Build payloads for `dimension`. The text modality uses `source`, and
    /// is left out when `source` is `None`. Precomputed embeddings take
    /// precedence whenever every record carries one for a modality.
    pub fn build(
        train: &[InstanceRecord],
        test: &[InstanceRecord],
        dimension: Dimension,
        source: Option<TranscriptSource>,
    ) -> Result<Self> {
        Self::build_with(train, test, dimension, source, None)
    }

    /// Like `build`, but tokenizes transcripts with an existing vocabulary,
    /// e.g. the one stored with a checkpoint.
    pub fn build_with(
        train: &[InstanceRecord],
        test: &[InstanceRecord],
        dimension: Dimension,
        source: Option<TranscriptSource>,
        vocabulary: Option<&Vocabulary>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(StrategyError::EmptyData("training"));
        }
        if test.is_empty() {
            return Err(StrategyError::EmptyData("test"));
        }
        let side = |recs: &[InstanceRecord]| Split {
            ids: recs.iter().map(|r| r.id.clone()).collect(),
            labels: recs.iter().map(|r| r.labels.get(dimension)).collect(),
            payloads: Default::default(),
        };
        let mut data = TaskData {
            train: side(train),
            test: side(test),
            kinds: [None, None, None],
            vocabulary: None,
        };
        let all = || train.iter().chain(test);
        for m in Modality::ALL {
            let i = m.index();
            if all().all(|r| r.embeddings.get(m).is_some()) {
                data.train.payloads[i] = crate::encoders::precomputed_payloads(train, m)?;
                data.test.payloads[i] = crate::encoders::precomputed_payloads(test, m)?;
                data.kinds[i] = Some(EncoderKind::Precomputed);
                continue;
            }
            if m == Modality::Text {
                let Some(src) = source else { continue };
                let texts = |recs: &[InstanceRecord]| {
                    recs.iter()
                        .map(|r| select_text(r, src).map(str::to_owned))
                        .collect::<std::result::Result<Vec<_>, _>>()
                };
                let (tr, te) = (texts(train)?, texts(test)?);
                let (tr_p, te_p, kind, vocab) = text_payloads(&tr, &te, vocabulary);
                data.train.payloads[i] = tr_p;
                data.test.payloads[i] = te_p;
                data.kinds[i] = Some(kind);
                data.vocabulary = vocab;
                continue;
            }
            let collect = |recs: &[InstanceRecord]| {
                recs.iter()
                    .map(|r| r.payload(m).cloned())
                    .collect::<Option<Vec<_>>>()
            };
            let (Some(tr), Some(te)) = (collect(train), collect(test)) else {
                continue;
            };
            if let Some(kind) = infer_kind(tr.iter().chain(&te)) {
                data.train.payloads[i] = tr;
                data.test.payloads[i] = te;
                data.kinds[i] = Some(kind);
            }
        }
        Ok(data)
    }

    pub fn kind(&self, m: Modality) -> Result<&EncoderKind> {
        self.kinds[m.index()]
            .as_ref()
            .ok_or(StrategyError::MissingModality(m))
    }
}

fn text_payloads(
    train: &[String],
    test: &[String],
    fixed: Option<&Vocabulary>,
) -> (Vec<Payload>, Vec<Payload>, EncoderKind, Option<Vocabulary>) {
    let parse = |v: &[String]| {
        v.iter()
            .map(|t| text_to_vector(t))
            .collect::<Option<Vec<_>>>()
    };
    if let (Some(a), Some(b)) = (parse(train), parse(test)) {
        let d = a[0].len();
        if d > 0 && a.iter().chain(&b).all(|v| v.len() == d) {
            let wrap = |v: Vec<Vec<f64>>| v.into_iter().map(Payload::Vector).collect();
            return (wrap(a), wrap(b), EncoderKind::Vector { input_dim: d }, None);
        }
    }
    let vocab = match fixed {
        Some(v) => v.clone(),
        None => {
            let mut v = Vocabulary::build(train.iter().map(String::as_str), None);
            v.seq_len = v.seq_len.min(MAX_SEQ_LEN);
            v
        }
    };
    let enc = |v: &[String]| v.iter().map(|t| Payload::Tokens(vocab.encode(t))).collect();
    let kind = EncoderKind::Sequence {
        vocab: vocab.size(),
        seq_len: vocab.seq_len,
    };
    (enc(train), enc(test), kind, Some(vocab))
}

fn infer_kind<'p>(mut payloads: impl Iterator<Item = &'p Payload>) -> Option<EncoderKind> {
    let first = payloads.next()?;
    match first {
        Payload::Vector(v) => Some(EncoderKind::Vector { input_dim: v.len() }),
        Payload::Tokens(t) => {
            let max = payloads
                .filter_map(|p| match p {
                    Payload::Tokens(t) => t.iter().max().copied(),
                    _ => None,
                })
                .chain(t.iter().max().copied())
                .max()?;
            Some(EncoderKind::Sequence {
                vocab: max + 1,
                seq_len: t.len(),
            })
        }
        Payload::Frames {
            frames,
            height,
            width,
            ..
        } => Some(EncoderKind::FrameStack {
            frames: *frames,
            frame_dim: height * width,
        }),
    }
}

/// A single-modality model: the encoder and its own two-class head.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleModel {
    pub modality: Modality,
    pub encoder: ModalityEncoder,
}

/// Three encoders under a learned fusion head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedModel {
    pub encoders: [ModalityEncoder; 3],
    pub head: FusionHead,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single(SingleModel),
    Fused(FusedModel),
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder_config: EncoderConfig,
    /// Single models carry one entry; fused models carry three.
    pub encoders: Vec<(Modality, EncoderKind)>,
    pub fusion: Option<FusionKind>,
    pub dropout: f64,
    pub vocabulary: Option<Vocabulary>,
}

impl Model {
    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Single(s) => Architecture {
                encoder_config: s.encoder.config().clone(),
                encoders: vec![(s.modality, s.encoder.kind().clone())],
                fusion: None,
                dropout: 0.0,
                vocabulary: None,
            },
            Model::Fused(f) => Architecture {
                encoder_config: f.encoders[0].config().clone(),
                encoders: Modality::ALL
                    .iter()
                    .map(|&m| (m, f.encoders[m.index()].kind().clone()))
                    .collect(),
                fusion: Some(f.head.kind()),
                dropout: match &f.head {
                    FusionHead::Feature(h) => h.dropout,
                    FusionHead::Ensemble(_) => 0.0,
                },
                vocabulary: None,
            },
        }
    }

    /// Fresh model with the given layout; every parameter is then expected
    /// to be overwritten.
    pub fn from_architecture(arch: &Architecture) -> Result<Self> {
        let enc = |k: &EncoderKind| ModalityEncoder::new(k.clone(), arch.encoder_config.clone(), 0);
        match (arch.fusion, arch.encoders.as_slice()) {
            (None, [(m, k)]) => Ok(Model::Single(SingleModel {
                modality: *m,
                encoder: enc(k),
            })),
            (Some(kind), [(_, a), (_, b), (_, c)]) => Ok(Model::Fused(FusedModel {
                encoders: [enc(a), enc(b), enc(c)],
                head: FusionHead::new(kind, 0, arch.dropout)?,
            })),
            _ => Err(StrategyError::InvalidConfig(
                "architecture has a bad encoder count".into(),
            )),
        }
    }

    /// Positive-class probabilities on a split, in evaluation mode.
    pub fn predict(&self, split: &Split) -> Result<Vec<f64>> {
        match self {
            Model::Single(s) => s.scores(split),
            Model::Fused(f) => f.scores(split),
        }
    }

    /// Parameter names in `params` order, for checkpoint metadata.
    pub fn param_names(&self) -> Vec<String> {
        fn names(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
            (0..n).map(move |i| format!("{prefix}.{i}"))
        }
        match self {
            Model::Single(s) => names(s.modality.key(), s.encoder.params().len()).collect(),
            Model::Fused(f) => {
                let mut v: Vec<String> = Vec::new();
                for m in Modality::ALL {
                    v.extend(names(m.key(), f.encoders[m.index()].params().len()));
                }
                v.extend(names(f.head.kind().key(), f.head.params().len()));
                v
            }
        }
    }
}

impl Parameterized for Model {
    /// Every tensor, including encoder heads a feature fusion does not train.
    fn params(&self) -> Vec<&Tensor> {
        match self {
            Model::Single(s) => s.encoder.params(),
            Model::Fused(f) => {
                let mut v: Vec<&Tensor> = f.encoders.iter().flat_map(|e| e.params()).collect();
                v.extend(f.head.params());
                v
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Model::Single(s) => s.encoder.params_mut(),
            Model::Fused(f) => {
                let mut v: Vec<&mut Tensor> =
                    f.encoders.iter_mut().flat_map(|e| e.params_mut()).collect();
                v.extend(f.head.params_mut());
                v
            }
        }
    }
}

/// A network the generic training loop can drive. `forward` must return
/// the vars of exactly the tensors in `trainable`, in the same order.
trait Net {
    fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        split: &Split,
        idx: &[usize],
        train: bool,
        seed: u64,
    ) -> Result<(Var, Vec<Var>)>;

    fn trainable(&mut self) -> Vec<&mut Tensor>;
}

fn gather<'s>(split: &'s Split, m: Modality, idx: &[usize]) -> Result<Vec<&'s Payload>> {
    let col = &split.payloads[m.index()];
    if col.len() != split.len() {
        return Err(StrategyError::MissingModality(m));
    }
    Ok(idx.iter().map(|&i| &col[i]).collect())
}

impl Net for SingleModel {
    fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        split: &Split,
        idx: &[usize],
        _train: bool,
        _seed: u64,
    ) -> Result<(Var, Vec<Var>)> {
        let batch = gather(split, self.modality, idx)?;
        let (out, vars) = self.encoder.forward(tape, &batch)?;
        Ok((out.rep2, vars))
    }

    fn trainable(&mut self) -> Vec<&mut Tensor> {
        self.encoder.params_mut()
    }
}

impl Net for FusedModel {
    fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        split: &Split,
        idx: &[usize],
        train: bool,
        seed: u64,
    ) -> Result<(Var, Vec<Var>)> {
        let feature = self.head.kind() == FusionKind::Feature;
        let mut vars = Vec::new();
        let mut taps = Vec::with_capacity(3);
        for m in Modality::ALL {
            let batch = gather(split, m, idx)?;
            let (out, mut v) = self.encoders[m.index()].forward(tape, &batch)?;
            if feature {
                // the encoder's own head is bypassed
                v.truncate(v.len() - 2);
                taps.push(out.rep256);
            } else {
                taps.push(out.rep2);
            }
            vars.extend(v);
        }
        let bound = self.head.bind(tape);
        let logits = self.head.forward(tape, &bound, &taps, train, seed)?;
        vars.extend(bound);
        Ok((logits, vars))
    }

    fn trainable(&mut self) -> Vec<&mut Tensor> {
        let feature = self.head.kind() == FusionKind::Feature;
        let mut v: Vec<&mut Tensor> = Vec::new();
        for e in &mut self.encoders {
            if feature {
                v.extend(e.trunk_params_mut());
            } else {
                v.extend(e.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }
}

fn scores_of<N: Net>(net: &N, split: &Split) -> Result<Vec<f64>> {
    let all: Vec<usize> = (0..split.len()).collect();
    let mut out = Vec::with_capacity(split.len());
    for chunk in all.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let (logits, _) = net.forward(&mut tape, split, chunk, false, 0)?;
        out.extend(tape.value(logits).chunks(2).map(positive_probability));
    }
    Ok(out)
}

impl SingleModel {
    pub fn scores(&self, split: &Split) -> Result<Vec<f64>> {
        scores_of(self, split)
    }
}

impl FusedModel {
    pub fn scores(&self, split: &Split) -> Result<Vec<f64>> {
        scores_of(self, split)
    }
}

/// Per-epoch curves and the held-out scores of the best and last epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub loss: Vec<f64>,
    pub auc: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub lr: Vec<f64>,
    pub optimizer_steps: u64,
    /// Zero-based epoch with the highest held-out AUC (first on ties).
    pub best_epoch: usize,
    pub best_scores: Vec<f64>,
    pub final_scores: Vec<f64>,
}

impl History {
    pub fn best_auc(&self) -> f64 {
        self.auc[self.best_epoch]
    }

    pub fn final_auc(&self) -> f64 {
        *self.auc.last().expect("at least one epoch")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Model,
    pub strategy: Strategy,
    pub history: History,
    /// Stage-1 curves of staged training, per modality.
    pub stage1: Option<Vec<History>>,
}

impl TrainedModel {
    /// Held-out scores at the epoch with the top AUC.
    pub fn reported_scores(&self) -> &[f64] {
        &self.history.best_scores
    }
}

fn optimizer_step(params: &mut [&mut Tensor], adam: &mut AdamState, pending: usize) -> Result<()> {
    let scale = 1.0 / pending as f64;
    for p in params.iter_mut() {
        p.scale_grad(scale);
    }
    adam.step(params)?;
    for p in params.iter_mut() {
        p.zero_grad();
    }
    Ok(())
}

/// Called after every epoch with the zero-based epoch index.
type EpochHook<'h, N> = &'h mut dyn FnMut(usize, &N);

fn fit<N: Net>(
    net: &mut N,
    data: &TaskData,
    cfg: &TrainConfig,
    epochs: usize,
    mut hook: Option<EpochHook<'_, N>>,
) -> Result<History> {
    cfg.validate()?;
    let n = data.train.len();
    if n == 0 {
        return Err(StrategyError::EmptyData("training"));
    }
    let targets: Vec<usize> = data.train.labels.iter().map(|&l| l as usize).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut adam = AdamState::new(cfg.lr);
    let mut scheduler = PlateauScheduler::new(cfg.patience, cfg.factor)?;
    for p in net.trainable() {
        p.zero_grad();
    }
    let mut h = History {
        loss: Vec::with_capacity(epochs),
        auc: Vec::with_capacity(epochs),
        lr: Vec::with_capacity(epochs),
        optimizer_steps: 0,
        best_epoch: 0,
        best_scores: Vec::new(),
        final_scores: Vec::new(),
    };
    let dropout_base = derive_seed(cfg.seed, "dropout");
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches, mut pending) = (0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let seed = dropout_base ^ ((epoch as u64) << 40 | b as u64);
            let (grads, vars, loss) = {
                let mut tape = Tape::new();
                let (logits, vars) = net.forward(&mut tape, &data.train, idx, true, seed)?;
                let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
                let loss = tape.softmax_cross_entropy(logits, &t)?;
                (tape.backward(loss)?, vars, tape.value(loss)[0])
            };
            let mut params = net.trainable();
            debug_assert_eq!(params.len(), vars.len());
            grads.apply(params.iter_mut().map(|p| &mut **p).zip(vars))?;
            loss_sum += loss;
            batches += 1;
            pending += 1;
            if pending == cfg.grad_accum {
                optimizer_step(&mut params, &mut adam, pending)?;
                h.optimizer_steps += 1;
                pending = 0;
            }
        }
        if pending > 0 {
            optimizer_step(&mut net.trainable(), &mut adam, pending)?;
            h.optimizer_steps += 1;
        }
        let scores = scores_of(net, &data.test)?;
        let auc = roc_auc(&scores, &data.test.labels)?;
        h.loss.push(loss_sum / batches as f64);
        h.lr.push(adam.lr);
        h.auc.push(auc);
        if epoch == 0 || auc > h.auc[h.best_epoch] {
            h.best_epoch = epoch;
            h.best_scores = scores.clone();
        }
        h.final_scores = scores;
        adam.lr = scheduler.step(auc, adam.lr);
        if let Some(f) = hook.as_mut() {
            f(epoch, net);
        }
    }
    Ok(h)
}

fn init_seed(seed: u64, m: Modality) -> u64 {
    derive_seed(seed, &format!("init/{}", m.key()))
}

fn fresh_encoder(data: &TaskData, m: Modality, cfg: &TrainConfig) -> Result<ModalityEncoder> {
    Ok(ModalityEncoder::new(
        data.kind(m)?.clone(),
        cfg.encoder.clone(),
        init_seed(cfg.seed, m),
    ))
}

pub fn train_individual(
    modality: Modality,
    data: &TaskData,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    Ok(train_individual_with_snapshot(modality, data, cfg, None)?.0)
}

/// Individual training that also returns a copy of the encoder as it was
/// after `snapshot_after` epochs.
pub fn train_individual_with_snapshot(
    modality: Modality,
    data: &TaskData,
    cfg: &TrainConfig,
    snapshot_after: Option<usize>,
) -> Result<(TrainedModel, Option<(ModalityEncoder, History)>)> {
    let mut net = SingleModel {
        modality,
        encoder: fresh_encoder(data, modality, cfg)?,
    };
    let mut snap = None;
    let history = {
        let mut hook = |epoch: usize, n: &SingleModel| {
            if Some(epoch + 1) == snapshot_after {
                snap = Some(n.encoder.clone());
            }
        };
        fit(&mut net, data, cfg, cfg.epochs, Some(&mut hook))?
    };
    let snapshot = snap.map(|enc| {
        let k = snapshot_after.unwrap_or(0);
        (enc, truncate_history(&history, k))
    });
    Ok((
        TrainedModel {
            model: Model::Single(net),
            strategy: Strategy::Individual,
            history,
            stage1: None,
        },
        snapshot,
    ))
}

fn truncate_history(h: &History, epochs: usize) -> History {
    let best = (0..epochs).fold(0, |b, e| if h.auc[e] > h.auc[b] { e } else { b });
    History {
        loss: h.loss[..epochs].to_vec(),
        auc: h.auc[..epochs].to_vec(),
        lr: h.lr[..epochs].to_vec(),
        optimizer_steps: 0,
        best_epoch: best,
        best_scores: Vec::new(),
        final_scores: Vec::new(),
    }
}

fn require_learned(kind: FusionKind) -> Result<()> {
    if kind.is_learned() {
        Ok(())
    } else {
        Err(StrategyError::Unsupported(kind))
    }
}

fn head_seed(seed: u64) -> u64 {
    derive_seed(seed, "fusion_head")
}

pub fn train_joint(kind: FusionKind, data: &TaskData, cfg: &TrainConfig) -> Result<TrainedModel> {
    require_learned(kind)?;
    let mut net = FusedModel {
        encoders: [
            fresh_encoder(data, Modality::Text, cfg)?,
            fresh_encoder(data, Modality::Audio, cfg)?,
            fresh_encoder(data, Modality::Video, cfg)?,
        ],
        head: FusionHead::new(kind, head_seed(cfg.seed), cfg.dropout)?,
    };
    let history = fit(&mut net, data, cfg, cfg.epochs, None)?;
    Ok(TrainedModel {
        model: Model::Fused(net),
        strategy: Strategy::Joint,
        history,
        stage1: None,
    })
}

/// Seed of the stage-1 run for one modality of a staged model.
pub fn stage1_seed(seed: u64, m: Modality) -> u64 {
    derive_seed(seed, &format!("stage1/{}", m.key()))
}

pub fn train_staged(kind: FusionKind, data: &TaskData, cfg: &TrainConfig) -> Result<TrainedModel> {
    require_learned(kind)?;
    if cfg.epochs < 2 {
        return Err(StrategyError::TooFewEpochs(cfg.epochs));
    }
    let (first, _) = cfg.stage_epochs();
    let mut pre = Vec::with_capacity(3);
    for m in Modality::ALL {
        let c = cfg.with_seed(stage1_seed(cfg.seed, m)).with_epochs(first);
        let t = train_individual(m, data, &c)?;
        let Model::Single(s) = t.model else {
            unreachable!()
        };
        pre.push((s.encoder, t.history));
    }
    let pre: [(ModalityEncoder, History); 3] = pre.try_into().expect("three modalities");
    train_staged_from(kind, data, cfg, pre)
}

/// Stage 2 of staged training, starting from already pre-trained encoders
/// in text, audio, video order.
pub fn train_staged_from(
    kind: FusionKind,
    data: &TaskData,
    cfg: &TrainConfig,
    pretrained: [(ModalityEncoder, History); 3],
) -> Result<TrainedModel> {
    require_learned(kind)?;
    if cfg.epochs < 2 {
        return Err(StrategyError::TooFewEpochs(cfg.epochs));
    }
    let (_, second) = cfg.stage_epochs();
    let [(t, ht), (a, ha), (v, hv)] = pretrained;
    let mut net = FusedModel {
        encoders: [t, a, v],
        head: FusionHead::new(kind, head_seed(cfg.seed), cfg.dropout)?,
    };
    let stage2 = cfg.with_seed(derive_seed(cfg.seed, "stage2"));
    let history = fit(&mut net, data, &stage2, second, None)?;
    Ok(TrainedModel {
        model: Model::Fused(net),
        strategy: Strategy::Staged,
        history,
        stage1: Some(vec![ht, ha, hv]),
    })
}

/// Train one model of any supported (fusion, strategy) pairing. Single
/// modalities use `Strategy::Individual` with `modality` set.
pub fn train(
    modality: Option<Modality>,
    kind: Option<FusionKind>,
    strategy: Strategy,
    data: &TaskData,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    match (strategy, modality, kind) {
        (Strategy::Individual, Some(m), None) => train_individual(m, data, cfg),
        (Strategy::Joint, None, Some(k)) => train_joint(k, data, cfg),
        (Strategy::Staged, None, Some(k)) => train_staged(k, data, cfg),
        _ => Err(StrategyError::InvalidConfig(format!(
            "unsupported combination: strategy {strategy}, modality {modality:?}, fusion {kind:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{default_spec, sample_dataset, DataMode, SyntheticSpec};
    use crate::ingest::{balance_dataset, split};

    fn tiny_spec(text: f64, audio: f64, video: f64) -> SyntheticSpec {
        let mut s = default_spec();
        s.informativeness = [[text, audio, video]; 5];
        s.n_instances = 400;
        s.modality_dims = [8, 8, 8];
        s.label_priors = [0.5; 5];
        s
    }

    fn task(spec: &SyntheticSpec, seed: u64) -> TaskData {
        let recs = sample_dataset(spec, seed).unwrap();
        let bal = balance_dataset(&recs, Dimension::Praise, 1).unwrap();
        let (tr, te) = split(&bal, 0.8, 2).unwrap();
        TaskData::build(&tr, &te, Dimension::Praise, Some(TranscriptSource::Manual)).unwrap()
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            grad_accum: 2,
            encoder: EncoderConfig {
                embed_dim: 8,
                hidden: 16,
                frame_features: 8,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn protocol_arithmetic() {
        let c = TrainConfig {
            epochs: 20,
            ..TrainConfig::default()
        };
        assert_eq!(c.stage_epochs(), (10, 10));
        assert_eq!(c.with_epochs(21).stage_epochs(), (10, 11));
        assert_eq!(c.effective_batch(), 20);
        // 105 micro-batches of 2 -> ceil(105 / 10)
        assert_eq!(c.steps_per_epoch(210), 11);
    }

    #[test]
    fn optimizer_steps_follow_accumulation() {
        let data = task(&tiny_spec(2.0, 0.0, 0.0), 3);
        let cfg = TrainConfig {
            batch_size: 7,
            grad_accum: 3,
            ..small_cfg(2)
        };
        let t = train_individual(Modality::Text, &data, &cfg).unwrap();
        let per_epoch = cfg.steps_per_epoch(data.train.len()) as u64;
        assert_eq!(t.history.optimizer_steps, 2 * per_epoch);
        assert_eq!(t.history.auc.len(), 2);
    }

    #[test]
    fn strong_signal_is_learned_and_zero_signal_is_not() {
        let mut spec = tiny_spec(3.0, 0.0, 0.0);
        spec.n_instances = 600;
        let data = task(&spec, 5);
        let t = train_individual(Modality::Text, &data, &small_cfg(10)).unwrap();
        assert!(t.history.best_auc() >= 0.95, "{:?}", t.history.auc);

        let data = task(&tiny_spec(0.0, 0.0, 0.0), 5);
        let t = train_individual(Modality::Text, &data, &small_cfg(3)).unwrap();
        let fin = t.history.final_auc();
        assert!((0.3..=0.7).contains(&fin), "{fin}");
    }

    #[test]
    fn joint_curves_and_determinism() {
        let data = task(&tiny_spec(1.0, 0.5, 0.5), 7);
        for kind in [FusionKind::Ensemble, FusionKind::Feature] {
            let a = train_joint(kind, &data, &small_cfg(3)).unwrap();
            let b = train_joint(kind, &data, &small_cfg(3)).unwrap();
            assert_eq!(a.history.auc.len(), 3);
            assert_eq!(a.model, b.model);
            assert_eq!(a.history, b.history);
        }
        assert!(matches!(
            train_joint(FusionKind::MaxVote, &data, &small_cfg(3)),
            Err(StrategyError::Unsupported(_))
        ));
    }

    #[test]
    fn staged_stage1_matches_individual() {
        let data = task(&tiny_spec(1.0, 0.5, 0.5), 9);
        let cfg = small_cfg(5);
        let staged = train_staged(FusionKind::Ensemble, &data, &cfg).unwrap();
        let stage1 = staged.stage1.as_ref().unwrap();
        assert_eq!(stage1.len(), 3);
        assert_eq!(staged.history.auc.len(), 3);
        for (i, m) in Modality::ALL.into_iter().enumerate() {
            let c = cfg.with_seed(stage1_seed(cfg.seed, m)).with_epochs(2);
            let ind = train_individual(m, &data, &c).unwrap();
            assert_eq!(ind.history.auc, stage1[i].auc);
            let (_, snap) =
                train_individual_with_snapshot(m, &data, &c.with_epochs(5), Some(2)).unwrap();
            let Model::Single(s) = &ind.model else {
                unreachable!()
            };
            assert_eq!(snap.unwrap().0, s.encoder);
        }
        assert!(matches!(
            train_staged(FusionKind::Feature, &data, &small_cfg(1)),
            Err(StrategyError::TooFewEpochs(1))
        ));
    }

    #[test]
    fn feature_fusion_leaves_encoder_heads_alone() {
        let data = task(&tiny_spec(1.0, 0.5, 0.5), 11);
        let cfg = small_cfg(2);
        let t = train_joint(FusionKind::Feature, &data, &cfg).unwrap();
        let Model::Fused(f) = &t.model else {
            unreachable!()
        };
        for m in Modality::ALL {
            let fresh = fresh_encoder(&data, m, &cfg).unwrap();
            assert_eq!(f.encoders[m.index()].head(), fresh.head());
            assert_ne!(f.encoders[m.index()].trunk_params(), fresh.trunk_params());
        }
    }

    #[test]
    fn joint_gradients_reach_every_encoder_tensor() {
        for mode in [DataMode::Analytic, DataMode::Structural] {
            let mut spec = tiny_spec(1.5, 1.0, 1.0);
            spec.mode = mode;
            spec.modality_dims = [16, 16, 16];
            let data = task(&spec, 13);
            for kind in [FusionKind::Ensemble, FusionKind::Feature] {
                let cfg = small_cfg(1);
                let mut net = FusedModel {
                    encoders: Modality::ALL.map(|m| fresh_encoder(&data, m, &cfg).unwrap()),
                    head: FusionHead::new(kind, 1, 0.0).unwrap(),
                };
                let idx: Vec<usize> = (0..32).collect();
                let grads_and_vars = {
                    let mut tape = Tape::new();
                    let (logits, vars) =
                        net.forward(&mut tape, &data.train, &idx, true, 0).unwrap();
                    let t: Vec<usize> =
                        idx.iter().map(|&i| data.train.labels[i] as usize).collect();
                    let loss = tape.softmax_cross_entropy(logits, &t).unwrap();
                    (tape.backward(loss).unwrap(), vars)
                };
                let (g, vars) = grads_and_vars;
                let params = net.trainable();
                assert_eq!(params.len(), vars.len());
                for (k, v) in vars.into_iter().enumerate() {
                    let grad = g
                        .get(v)
                        .unwrap_or_else(|| panic!("{mode:?} {kind}: tensor {k} has no gradient"));
                    assert!(
                        grad.iter().any(|x| *x != 0.0),
                        "{mode:?} {kind}: tensor {k} all-zero"
                    );
                }
            }
        }
    }

    #[test]
    fn loss_decreases_early_for_every_strategy() {
        let mut spec = tiny_spec(3.0, 2.0, 2.0);
        spec.n_instances = 600;
        let data = task(&spec, 15);
        let cfg = small_cfg(6);
        let runs = [
            train_individual(Modality::Text, &data, &cfg)
                .unwrap()
                .history
                .loss,
            train_joint(FusionKind::Ensemble, &data, &cfg)
                .unwrap()
                .history
                .loss,
            train_joint(FusionKind::Feature, &data, &cfg)
                .unwrap()
                .history
                .loss,
            train_staged(FusionKind::Feature, &data, &cfg)
                .unwrap()
                .history
                .loss,
        ];
        for loss in runs {
            assert!(loss.iter().all(|l| l.is_finite()));
            assert!(loss[2] < loss[0], "{loss:?}");
        }
    }

    #[test]
    fn training_moves_trunk_except_precomputed() {
        let data = task(&tiny_spec(2.0, 0.5, 0.5), 17);
        let cfg = small_cfg(1);
        let t = train_individual(Modality::Text, &data, &cfg).unwrap();
        let Model::Single(s) = &t.model else {
            unreachable!()
        };
        let fresh = fresh_encoder(&data, Modality::Text, &cfg).unwrap();
        let p = &data.test.payloads[0][0];
        assert_ne!(
            s.encoder.encode(p).unwrap().rep256,
            fresh.encode(p).unwrap().rep256
        );

        let mut pre = data.clone();
        for split in [&mut pre.train, &mut pre.test] {
            split.payloads[0] = split.payloads[0]
                .iter()
                .map(|_| Payload::Vector(vec![0.1; 256]))
                .collect();
        }
        pre.kinds[0] = Some(EncoderKind::Precomputed);
        let t = train_individual(Modality::Text, &pre, &cfg).unwrap();
        let Model::Single(s) = &t.model else {
            unreachable!()
        };
        let q = &pre.test.payloads[0][0];
        let fresh = fresh_encoder(&pre, Modality::Text, &cfg).unwrap();
        assert_eq!(
            s.encoder.encode(q).unwrap().rep256,
            fresh.encode(q).unwrap().rep256
        );
        assert_ne!(s.encoder.head(), fresh.head());
    }

    #[test]
    fn task_build_handles_missing_text() {
        let spec = tiny_spec(1.0, 1.0, 1.0);
        let recs = sample_dataset(&spec, 1).unwrap();
        let (tr, te) = split(&recs, 0.8, 0).unwrap();
        let d = TaskData::build(&tr, &te, Dimension::Anatomic, None).unwrap();
        assert!(d.kinds[0].is_none());
        assert!(matches!(
            train_individual(Modality::Text, &d, &small_cfg(1)),
            Err(StrategyError::MissingModality(Modality::Text))
        ));
        assert!(TaskData::build(&[], &te, Dimension::Anatomic, None).is_err());
    }
}
