//! Late-fusion heads over the three per-modality encoders.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{Linear, Parameterized, REP_DIM, VOTE_DIM};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const ENSEMBLE_WIDTH: usize = 3 * VOTE_DIM;
pub const FEATURE_WIDTH: usize = 3 * REP_DIM;
pub const FEATURE_HIDDEN: usize = 96;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("{head} head expects {expected} inputs, got {got}")]
    Arity {
        head: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{head} head input {slot} has width {got}, expected {expected}")]
    Width {
        head: &'static str,
        slot: usize,
        expected: usize,
        got: usize,
    },
    #[error("{0} fusion has no trainable parameters")]
    Unsupported(FusionKind),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    MajorityVote,
    MaxVote,
    Ensemble,
    Feature,
}

impl FusionKind {
    pub fn key(self) -> &'static str {
        match self {
            FusionKind::MajorityVote => "majority_vote",
            FusionKind::MaxVote => "max_vote",
            FusionKind::Ensemble => "ensemble",
            FusionKind::Feature => "feature",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(self, FusionKind::Ensemble | FusionKind::Feature)
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "majority_vote" => Ok(FusionKind::MajorityVote),
            "max_vote" => Ok(FusionKind::MaxVote),
            "ensemble" => Ok(FusionKind::Ensemble),
            "feature" => Ok(FusionKind::Feature),
            other => Err(format!("unknown fusion kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    Majority,
    Max,
}

pub fn majority_vote(preds: [bool; 3]) -> bool {
    preds.iter().filter(|&&p| p).count() >= 2
}

pub fn max_vote(preds: [bool; 3]) -> bool {
    preds.iter().any(|&p| p)
}

/// Soft score for ROC analysis of a vote: the fraction of models above 0.5
/// for the majority rule, the largest probability for the max rule.
pub fn vote_score(probs: [f64; 3], rule: VoteRule) -> f64 {
    match rule {
        VoteRule::Majority => probs.iter().filter(|&&p| p > 0.5).count() as f64 / 3.0,
        VoteRule::Max => probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// The rule with the higher AUC; ties go to majority.
pub fn best_voting(majority_auc: f64, max_auc: f64) -> VoteRule {
    if max_auc > majority_auc {
        VoteRule::Max
    } else {
        VoteRule::Majority
    }
}

/// Linear 6 -> 2 over the concatenated per-modality logits.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleHead {
    pub layer: Linear,
}

impl EnsembleHead {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layer: Linear::new(ENSEMBLE_WIDTH, VOTE_DIM, &mut rng),
        }
    }

    pub fn zeros() -> Self {
        Self {
            layer: Linear::zeros(ENSEMBLE_WIDTH, VOTE_DIM),
        }
    }
}

/// Linear 768 -> 96, relu, dropout, linear 96 -> 2.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHead {
    pub hidden: Linear,
    pub output: Linear,
    pub dropout: f64,
}

impl FeatureHead {
    pub fn new(seed: u64, dropout: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = Linear::new(FEATURE_WIDTH, FEATURE_HIDDEN, &mut rng);
        let output = Linear::new(FEATURE_HIDDEN, VOTE_DIM, &mut rng);
        Self {
            hidden,
            output,
            dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionHead {
    Ensemble(EnsembleHead),
    Feature(FeatureHead),
}

impl FusionHead {
    pub fn new(kind: FusionKind, seed: u64, dropout: f64) -> Result<Self, FusionError> {
        match kind {
            FusionKind::Ensemble => Ok(FusionHead::Ensemble(EnsembleHead::new(seed))),
            FusionKind::Feature => Ok(FusionHead::Feature(FeatureHead::new(seed, dropout))),
            other => Err(FusionError::Unsupported(other)),
        }
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            FusionHead::Ensemble(_) => FusionKind::Ensemble,
            FusionHead::Feature(_) => FusionKind::Feature,
        }
    }

    /// Per-modality width the head consumes.
    pub fn input_width(&self) -> usize {
        match self {
            FusionHead::Ensemble(_) => VOTE_DIM,
            FusionHead::Feature(_) => REP_DIM,
        }
    }

    /// Bind the head's parameters, in `params` order.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<Var> {
        self.params().into_iter().map(|t| tape.leaf(t)).collect()
    }

    /// Fused logits `[batch x 2]` from three per-modality inputs. `bound`
    /// holds the vars returned by `bind`.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        bound: &[Var],
        inputs: &[Var],
        train: bool,
        dropout_seed: u64,
    ) -> Result<Var, FusionError> {
        let name = self.kind().key();
        if inputs.len() != 3 {
            return Err(FusionError::Arity {
                head: name,
                expected: 3,
                got: inputs.len(),
            });
        }
        for (slot, &v) in inputs.iter().enumerate() {
            let got = tape.dims(v).1;
            if got != self.input_width() {
                return Err(FusionError::Width {
                    head: name,
                    slot,
                    expected: self.input_width(),
                    got,
                });
            }
        }
        let x = tape.concat_cols(inputs)?;
        match self {
            FusionHead::Ensemble(_) => Ok(Linear::apply(tape, x, bound[0], bound[1])?),
            FusionHead::Feature(h) => {
                let z = Linear::apply(tape, x, bound[0], bound[1])?;
                let z = tape.relu(z);
                let z = tape.dropout(z, h.dropout, dropout_seed, train)?;
                Ok(Linear::apply(tape, z, bound[2], bound[3])?)
            }
        }
    }

    /// Single-instance evaluation on plain vectors.
    pub fn apply(
        &self,
        inputs: &[&[f64]],
        train: bool,
        dropout_seed: u64,
    ) -> Result<[f64; 2], FusionError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let vars = inputs
            .iter()
            .map(|v| tape.constant(1, v.len(), v.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = self.forward(&mut tape, &bound, &vars, train, dropout_seed)?;
        let o = tape.value(out);
        Ok([o[0], o[1]])
    }
}

impl Parameterized for FusionHead {
    fn params(&self) -> Vec<&Tensor> {
        match self {
            FusionHead::Ensemble(h) => h.layer.params(),
            FusionHead::Feature(h) => {
                let mut v = h.hidden.params();
                v.extend(h.output.params());
                v
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            FusionHead::Ensemble(h) => h.layer.params_mut(),
            FusionHead::Feature(h) => {
                let mut v = h.hidden.params_mut();
                v.extend(h.output.params_mut());
                v
            }
        }
    }
}

/// Convenience wrapper for the ensemble head on three rep2 vectors.
pub fn ensemble_forward(head: &FusionHead, rep2: [&[f64]; 3]) -> Result<[f64; 2], FusionError> {
    head.apply(&rep2, false, 0)
}

/// Convenience wrapper for the feature head on three rep256 vectors.
pub fn feature_forward(
    head: &FusionHead,
    rep256: [&[f64]; 3],
    train: bool,
    dropout_seed: u64,
) -> Result<[f64; 2], FusionError> {
    head.apply(&rep256, train, dropout_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn combos() -> impl Iterator<Item = [bool; 3]> {
        (0..8u8).map(|m| [m & 1 != 0, m & 2 != 0, m & 4 != 0])
    }

    #[test]
    fn vote_truth_tables() {
        assert!(majority_vote([true, true, false]));
        assert!(!majority_vote([false, false, true]));
        assert!(max_vote([false, false, true]));
        assert!(!max_vote([false, false, false]));
        for c in combos() {
            let pop = c.iter().filter(|&&b| b).count();
            assert_eq!(majority_vote(c), pop >= 2);
            assert_eq!(max_vote(c), c[0] || c[1] || c[2]);
        }
    }

    #[test]
    fn vote_scores() {
        assert!((vote_score([0.9, 0.9, 0.1], VoteRule::Majority) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(vote_score([0.1, 0.2, 0.3], VoteRule::Max), 0.3);
        for c in combos() {
            let probs = c.map(|b| if b { 0.9 } else { 0.1 });
            assert_eq!(
                vote_score(probs, VoteRule::Majority) > 0.5,
                majority_vote(c)
            );
            assert_eq!(vote_score(probs, VoteRule::Max) > 0.5, max_vote(c));
        }
    }

    #[test]
    fn best_voting_rule() {
        assert_eq!(best_voting(0.70, 0.65), VoteRule::Majority);
        assert_eq!(best_voting(0.60, 0.65), VoteRule::Max);
        assert_eq!(best_voting(0.65, 0.65), VoteRule::Majority);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(
            FusionHead::new(FusionKind::Ensemble, 0, 0.5)
                .unwrap()
                .param_count(),
            14
        );
        assert_eq!(
            FusionHead::new(FusionKind::Feature, 0, 0.5)
                .unwrap()
                .param_count(),
            768 * 96 + 96 + 96 * 2 + 2
        );
        assert!(matches!(
            FusionHead::new(FusionKind::MaxVote, 0, 0.5),
            Err(FusionError::Unsupported(FusionKind::MaxVote))
        ));
    }

    #[test]
    fn ensemble_zero_and_passthrough() {
        let head = FusionHead::Ensemble(EnsembleHead::zeros());
        let out = ensemble_forward(&head, [&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap();
        assert_eq!(out, [0.0, 0.0]);

        let mut e = EnsembleHead::zeros();
        let w = e.layer.weight.data_mut();
        w[0] = 1.0; // text logit 0 -> out 0
        w[3] = 1.0; // text logit 1 -> out 1
        let head = FusionHead::Ensemble(e);
        let out = ensemble_forward(&head, [&[0.3, -1.7], &[9.0, 9.0], &[-4.0, 2.0]]).unwrap();
        assert_eq!(out, [0.3, -1.7]);
    }

    #[test]
    fn ensemble_rejects_bad_inputs() {
        let head = FusionHead::new(FusionKind::Ensemble, 1, 0.5).unwrap();
        assert!(matches!(
            head.apply(&[&[1.0, 2.0], &[3.0, 4.0]], false, 0),
            Err(FusionError::Arity { .. })
        ));
        assert!(matches!(
            ensemble_forward(&head, [&[1.0, 2.0], &[3.0], &[5.0, 6.0]]),
            Err(FusionError::Width { slot: 1, .. })
        ));
    }

    #[test]
    fn feature_eval_is_deterministic_and_zero_maps_to_zero() {
        let head = FusionHead::new(FusionKind::Feature, 3, 0.5).unwrap();
        let x: Vec<f64> = (0..REP_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = feature_forward(&head, [&x, &x, &x], false, 1).unwrap();
        let b = feature_forward(&head, [&x, &x, &x], false, 2).unwrap();
        assert_eq!(a, b);

        let mut zeroed = head.clone();
        if let FusionHead::Feature(h) = &mut zeroed {
            h.hidden.bias.data_mut().fill(0.0);
            h.output.bias.data_mut().fill(0.0);
        }
        let z = vec![0.0; REP_DIM];
        assert_eq!(
            feature_forward(&zeroed, [&z, &z, &z], false, 0).unwrap(),
            [0.0, 0.0]
        );

        let mut no_drop = head.clone();
        if let FusionHead::Feature(h) = &mut no_drop {
            h.dropout = 0.0;
        }
        assert_eq!(feature_forward(&no_drop, [&x, &x, &x], true, 9).unwrap(), a);
        assert!(matches!(
            feature_forward(&head, [&x, &x, &x[..255]], false, 0),
            Err(FusionError::Width { slot: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn majority_idempotent_and_max_monotone(c in any::<[bool; 3]>(), i in 0usize..3) {
            prop_assert_eq!(majority_vote([c[0]; 3]), c[0]);
            let mut up = c;
            up[i] = true;
            prop_assert!(max_vote(up) >= max_vote(c));
        }

        #[test]
        fn ensemble_is_affine_per_slot(
            a in proptest::array::uniform2(-3.0f64..3.0),
            b in proptest::array::uniform2(-3.0f64..3.0),
            slot in 0usize..3,
            seed in any::<u64>(),
        ) {
            let head = FusionHead::new(FusionKind::Ensemble, seed, 0.5).unwrap();
            let base = [[0.5, -0.2], [1.0, 0.1], [-0.3, 0.7]];
            let eval = |v: [f64; 2]| {
                let mut x = base;
                x[slot] = v;
                ensemble_forward(&head, [&x[0], &x[1], &x[2]]).unwrap()
            };
            let sum = eval([a[0] + b[0], a[1] + b[1]]);
            let (fa, fb, f0) = (eval(a), eval(b), eval([0.0, 0.0]));
            for k in 0..2 {
                prop_assert!((sum[k] - (fa[k] + fb[k] - f0[k])).abs() < 1e-12);
            }
        }
    }
}
