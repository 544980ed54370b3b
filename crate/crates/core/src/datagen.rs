//! Synthetic multimodal feedback data with a closed-form Bayes oracle.
//!
//! In analytic mode every modality `m` of an instance is a vector
//!
//! ```text
//! x_m = sum_l y_l * s[l][m] * u[l][m] + noise_sd * e,   e ~ N(0, I)
//! ```
//!
//! where `u[.][m]` are five orthonormal directions. Because the directions
//! are orthonormal and the labels independent, the posterior of each label
//! factorises over modalities and can be computed exactly from the five
//! projections. Structural mode re-encodes the same latent vectors as token
//! sequences, a 64-wide audio vector and a 16x8x8 frame stack.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{derive_seed, Dimension, FeedbackLabelSet, Modality, TranscriptSource};
use crate::ingest::{sample_frame_indices, window_clip, PreprocessSpec};
use crate::record::{text_to_vector, vector_to_text, InstanceRecord, Payload};

/// Per-category counts out of 3912 annotated instances.
pub const REFERENCE_COUNTS: [usize; 5] = [1104, 817, 3223, 262, 303];
pub const REFERENCE_TOTAL: usize = 3912;

pub const STRUCT_SEQ_LEN: usize = 12;
pub const STRUCT_VOCAB: usize = 64;
pub const STRUCT_AUDIO_DIM: usize = 64;
pub const STRUCT_FRAMES: usize = 16;
pub const STRUCT_FRAME_SIDE: usize = 8;
const STRUCT_FPS: f64 = 4.0;
const KEYWORDS_PER_LABEL: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataGenError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("the Bayes oracle needs analytic data with independent labels")]
    UnsupportedMode,
    #[error("instance `{0}` lacks the analytic payload the oracle reads")]
    MissingPayload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    Analytic,
    Structural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub label_priors: [f64; 5],
    /// `informativeness[label][modality]`, modality order text, audio, video.
    pub informativeness: [[f64; 3]; 5],
    pub modality_dims: [usize; 3],
    pub noise_sd: f64,
    pub n_instances: usize,
    pub mode: DataMode,
    /// Seeds the signal directions, so the oracle depends only on the spec.
    #[serde(default)]
    pub direction_seed: u64,
    /// Correlation between the manual and ASR text vectors.
    pub asr_fidelity: f64,
    /// Optional Gaussian-copula correlation between labels. `None` samples
    /// labels independently.
    #[serde(default)]
    pub label_correlation: Option<[[f64; 5]; 5]>,
    pub n_cases: usize,
    pub recording_len_s: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        default_spec()
    }
}

/// Default informativeness. Text carries most signal everywhere; audio is
/// strongest on praise; video is strongest on visual aid and weakest on praise.
pub const DEFAULT_INFORMATIVENESS: [[f64; 3]; 5] = [
    // text, audio, video
    [1.30, 0.55, 0.60], // anatomic
    [0.85, 0.50, 0.65], // procedural
    [1.00, 0.60, 0.60], // technical
    [1.50, 0.95, 0.20], // praise
    [1.00, 0.35, 1.05], // visual aid
];

pub fn default_spec() -> SyntheticSpec {
    let mut priors = [0.0; 5];
    for (p, c) in priors.iter_mut().zip(REFERENCE_COUNTS) {
        *p = c as f64 / REFERENCE_TOTAL as f64;
    }
    SyntheticSpec {
        label_priors: priors,
        informativeness: DEFAULT_INFORMATIVENESS,
        modality_dims: [32, 32, 32],
        noise_sd: 1.0,
        n_instances: REFERENCE_TOTAL,
        mode: DataMode::Analytic,
        direction_seed: 0,
        asr_fidelity: 0.75,
        label_correlation: None,
        n_cases: 31,
        recording_len_s: 3600.0,
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataGenError> {
        let bad = |m: String| Err(DataGenError::InvalidSpec(m));
        if self.n_instances == 0 {
            return bad("n_instances must be positive".into());
        }
        if self.label_priors.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return bad(format!(
                "priors must lie in (0, 1): {:?}",
                self.label_priors
            ));
        }
        if self
            .informativeness
            .iter()
            .flatten()
            .any(|&s| !(s >= 0.0 && s.is_finite()))
        {
            return bad("informativeness must be finite and non-negative".into());
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be > 0".into());
        }
        if self.modality_dims.iter().any(|&d| d < 5) {
            return bad(format!(
                "each modality needs at least 5 dims for orthonormal directions, got {:?}",
                self.modality_dims
            ));
        }
        if !(0.0..=1.0).contains(&self.asr_fidelity) {
            return bad("asr_fidelity must lie in [0, 1]".into());
        }
        if self.n_cases == 0 || !(self.recording_len_s > 0.0) {
            return bad("n_cases and recording_len_s must be positive".into());
        }
        if let Some(c) = &self.label_correlation {
            cholesky5(c).ok_or_else(|| {
                DataGenError::InvalidSpec("label_correlation is not positive definite".into())
            })?;
        }
        Ok(())
    }

    pub fn prior(&self, d: Dimension) -> f64 {
        self.label_priors[d.index()]
    }
}

/// Five orthonormal directions per modality: `dirs[m][l]` has length
/// `modality_dims[m]`.
pub fn signal_directions(spec: &SyntheticSpec) -> [Vec<Vec<f64>>; 3] {
    Modality::ALL.map(|m| {
        let dim = spec.modality_dims[m.index()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.direction_seed, m.key()));
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(5);
        while basis.len() < 5 {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            // two Gram-Schmidt passes for numerical orthogonality
            for _ in 0..2 {
                for b in &basis {
                    let d = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        basis
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cholesky5(c: &[[f64; 5]; 5]) -> Option<[[f64; 5]; 5]> {
    let mut l = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = c[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (c[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn sample_labels(
    spec: &SyntheticSpec,
    chol: Option<&[[f64; 5]; 5]>,
    rng: &mut ChaCha8Rng,
) -> [bool; 5] {
    match chol {
        None => {
            let mut y = [false; 5];
            for (l, out) in y.iter_mut().enumerate() {
                *out = rng.random::<f64>() < spec.label_priors[l];
            }
            y
        }
        Some(l) => {
            let g: Vec<f64> = normal_vec(rng, 5);
            let mut y = [false; 5];
            for i in 0..5 {
                let z: f64 = (0..=i).map(|k| l[i][k] * g[k]).sum();
                y[i] = std_normal_cdf(z) < spec.label_priors[i];
            }
            y
        }
    }
}

/// Fixed random linear maps used to re-encode latent vectors in structural mode.
fn structural_maps(spec: &SyntheticSpec) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.direction_seed, "structural-maps"));
    let da = spec.modality_dims[Modality::Audio.index()];
    let dv = spec.modality_dims[Modality::Video.index()];
    let fa = 1.0 / (da as f64).sqrt();
    let fv = 1.0 / (dv as f64).sqrt();
    let audio: Vec<f64> = (0..STRUCT_AUDIO_DIM * da)
        .map(|_| fa * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let video: Vec<f64> = (0..STRUCT_FRAME_SIDE * STRUCT_FRAME_SIDE * dv)
        .map(|_| fv * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (audio, video)
}

fn project(map: &[f64], x: &[f64]) -> Vec<f64> {
    map.chunks(x.len()).map(|row| dot(row, x)).collect()
}

fn token_word(id: usize) -> String {
    format!("w{id}")
}

/// Token transcript: each position picks a label's keyword block with
/// probability increasing in that label's projection, or a filler word.
fn tokens_from_latent(x: &[f64], dirs: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut logits: Vec<f64> = dirs.iter().map(|u| dot(x, u)).collect();
    logits.push(1.0);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let filler_start = 5 * KEYWORDS_PER_LABEL;
    (0..STRUCT_SEQ_LEN)
        .map(|_| {
            let mut r = rng.random::<f64>() * total;
            let mut pick = w.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                if r < *wi {
                    pick = i;
                    break;
                }
                r -= wi;
            }
            if pick < 5 {
                pick * KEYWORDS_PER_LABEL + rng.random_range(0..KEYWORDS_PER_LABEL)
            } else {
                rng.random_range(filler_start..STRUCT_VOCAB)
            }
        })
        .collect()
}

fn tokens_to_text(t: &[usize]) -> String {
    t.iter()
        .map(|&i| token_word(i))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Draw a dataset. Deterministic in `(spec, seed)`.
pub fn sample_dataset(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<Vec<InstanceRecord>, DataGenError> {
    spec.validate()?;
    let dirs = signal_directions(spec);
    let chol = spec.label_correlation.as_ref().and_then(cholesky5);
    let maps = (spec.mode == DataMode::Structural).then(|| structural_maps(spec));
    let oracle = (spec.mode == DataMode::Analytic && spec.label_correlation.is_none())
        .then(|| BayesOracle::with_directions(spec.clone(), dirs.clone()));
    let pre = PreprocessSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.n_instances.to_string().len();
    let fid = spec.asr_fidelity;
    let mut out = Vec::with_capacity(spec.n_instances);

    for i in 0..spec.n_instances {
        let y = sample_labels(spec, chol.as_ref(), &mut rng);
        let case = rng.random_range(0..spec.n_cases);
        let onset_s = (rng.random::<f64>() * spec.recording_len_s * 1000.0).round() / 1000.0;
        let latent: Vec<Vec<f64>> = Modality::ALL
            .iter()
            .map(|m| {
                let mi = m.index();
                let mut x: Vec<f64> = normal_vec(&mut rng, spec.modality_dims[mi])
                    .into_iter()
                    .map(|e| spec.noise_sd * e)
                    .collect();
                for (l, &yl) in y.iter().enumerate() {
                    if yl {
                        let s = spec.informativeness[l][mi];
                        x.iter_mut()
                            .zip(&dirs[mi][l])
                            .for_each(|(v, u)| *v += s * u);
                    }
                }
                x
            })
            .collect();
        let asr_noise = normal_vec(&mut rng, latent[0].len());
        let text_asr_vec: Vec<f64> = latent[0]
            .iter()
            .zip(&asr_noise)
            .map(|(x, e)| fid * x + (1.0 - fid * fid).sqrt() * spec.noise_sd * e)
            .collect();

        let id = format!("s{seed}-{i:0width$}");
        let mut rec = InstanceRecord {
            id,
            case_id: format!("case{case:02}"),
            onset_s,
            labels: FeedbackLabelSet::from_array(y),
            text_manual: None,
            text_asr: None,
            audio: None,
            video: None,
            embeddings: Default::default(),
            oracle_scores: None,
        };
        match &maps {
            None => {
                rec.text_manual = Some(vector_to_text(&latent[0]));
                rec.text_asr = Some(vector_to_text(&text_asr_vec));
                rec.audio = Some(Payload::Vector(latent[1].clone()));
                rec.video = Some(Payload::Vector(latent[2].clone()));
            }
            Some((amap, vmap)) => {
                let manual = tokens_from_latent(&latent[0], &dirs[0], &mut rng);
                let asr = tokens_from_latent(&text_asr_vec, &dirs[0], &mut rng);
                rec.text_manual = Some(tokens_to_text(&manual));
                rec.text_asr = Some(tokens_to_text(&asr));
                rec.audio = Some(Payload::Vector(project(amap, &latent[1])));
                let (t0, t1) = window_clip(onset_s, spec.recording_len_s, &pre)
                    .expect("onset sampled inside the recording");
                let total = (((t1 - t0) * STRUCT_FPS).round() as usize).max(1);
                let base = project(vmap, &latent[2]);
                let raw: Vec<Vec<f64>> = (0..total)
                    .map(|_| {
                        base.iter()
                            .map(|b| b + 0.3 * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect();
                let picks = sample_frame_indices(total, STRUCT_FRAMES, rng.random());
                let data: Vec<f64> = picks.iter().flat_map(|&p| raw[p].iter().cloned()).collect();
                rec.video = Some(Payload::Frames {
                    frames: STRUCT_FRAMES,
                    height: STRUCT_FRAME_SIDE,
                    width: STRUCT_FRAME_SIDE,
                    data,
                });
            }
        }
        if let Some(o) = &oracle {
            rec.oracle_scores = Some(o.scores(&rec).expect("analytic record"));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Exact posterior scorer for analytic data.
#[derive(Debug, Clone)]
pub struct BayesOracle {
    spec: SyntheticSpec,
    dirs: [Vec<Vec<f64>>; 3],
}

impl BayesOracle {
    pub fn new(spec: &SyntheticSpec) -> Result<Self, DataGenError> {
        spec.validate()?;
        if spec.mode != DataMode::Analytic || spec.label_correlation.is_some() {
            return Err(DataGenError::UnsupportedMode);
        }
        Ok(Self::with_directions(spec.clone(), signal_directions(spec)))
    }

    fn with_directions(spec: SyntheticSpec, dirs: [Vec<Vec<f64>>; 3]) -> Self {
        Self { spec, dirs }
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    fn vectors(
        &self,
        r: &InstanceRecord,
        source: TranscriptSource,
    ) -> Result<[Vec<f64>; 3], DataGenError> {
        let miss = || DataGenError::MissingPayload(r.id.clone());
        let text = match source {
            TranscriptSource::Manual => r.text_manual.as_deref(),
            TranscriptSource::Asr => r.text_asr.as_deref(),
        }
        .and_then(text_to_vector)
        .ok_or_else(miss)?;
        let vec_of = |p: &Option<Payload>| match p {
            Some(Payload::Vector(v)) => Ok(v.clone()),
            _ => Err(miss()),
        };
        Ok([text, vec_of(&r.audio)?, vec_of(&r.video)?])
    }

    /// Posterior log-odds per label using only `modalities`. For the ASR
    /// transcript the text signal strength is scaled by the ASR fidelity.
    pub fn log_odds_with(
        &self,
        r: &InstanceRecord,
        modalities: &[Modality],
        source: TranscriptSource,
    ) -> Result<[f64; 5], DataGenError> {
        let x = self.vectors(r, source)?;
        let var = self.spec.noise_sd * self.spec.noise_sd;
        let mut out = [0.0; 5];
        for (l, o) in out.iter_mut().enumerate() {
            let p = self.spec.label_priors[l];
            let mut lo = (p / (1.0 - p)).ln();
            for &m in modalities {
                let mi = m.index();
                let mut s = self.spec.informativeness[l][mi];
                if m == Modality::Text && source == TranscriptSource::Asr {
                    s *= self.spec.asr_fidelity;
                }
                let z = dot(&x[mi], &self.dirs[mi][l]);
                lo += s * z / var - s * s / (2.0 * var);
            }
            *o = lo;
        }
        Ok(out)
    }

    pub fn log_odds(&self, r: &InstanceRecord) -> Result<[f64; 5], DataGenError> {
        self.log_odds_with(r, &Modality::ALL, TranscriptSource::Manual)
    }

    pub fn scores(&self, r: &InstanceRecord) -> Result<[f64; 5], DataGenError> {
        Ok(self.log_odds(r)?.map(sigmoid))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Posterior probabilities of the five labels for one analytic instance.
pub fn bayes_scores(spec: &SyntheticSpec, r: &InstanceRecord) -> Result<[f64; 5], DataGenError> {
    BayesOracle::new(spec)?.scores(r)
}
