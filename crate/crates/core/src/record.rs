//! In-memory form of one feedback instance.

use serde::{Deserialize, Serialize};

use crate::domain::{FeedbackLabelSet, Modality};

/// Numeric content of one modality for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Vector(Vec<f64>),
    Tokens(Vec<usize>),
    Frames {
        frames: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    },
}

impl Payload {
    pub fn describe(&self) -> String {
        match self {
            Payload::Vector(v) => format!("vector[{}]", v.len()),
            Payload::Tokens(t) => format!("tokens[{}]", t.len()),
            Payload::Frames {
                frames,
                height,
                width,
                ..
            } => format!("frames[{frames}x{height}x{width}]"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Payload::Vector(v) | Payload::Frames { data: v, .. } => v.iter().all(|x| x.is_finite()),
            Payload::Tokens(_) => true,
        }
    }
}

/// Precomputed 256-wide features per modality, when supplied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Embeddings {
    pub text: Option<Vec<f64>>,
    pub audio: Option<Vec<f64>>,
    pub video: Option<Vec<f64>>,
}

impl Embeddings {
    pub fn get(&self, m: Modality) -> Option<&Vec<f64>> {
        match m {
            Modality::Text => self.text.as_ref(),
            Modality::Audio => self.audio.as_ref(),
            Modality::Video => self.video.as_ref(),
        }
    }

    pub fn set(&mut self, m: Modality, v: Vec<f64>) {
        match m {
            Modality::Text => self.text = Some(v),
            Modality::Audio => self.audio = Some(v),
            Modality::Video => self.video = Some(v),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_none() && self.audio.is_none() && self.video.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: String,
    pub case_id: String,
    pub onset_s: f64,
    pub labels: FeedbackLabelSet,
    /// Transcript variants. Analytic data stores its text vector here as
    /// whitespace-separated decimals; structural data stores word tokens.
    pub text_manual: Option<String>,
    pub text_asr: Option<String>,
    pub audio: Option<Payload>,
    pub video: Option<Payload>,
    pub embeddings: Embeddings,
    pub oracle_scores: Option<[f64; 5]>,
}

impl InstanceRecord {
    pub fn payload(&self, m: Modality) -> Option<&Payload> {
        match m {
            Modality::Text => None,
            Modality::Audio => self.audio.as_ref(),
            Modality::Video => self.video.as_ref(),
        }
    }
}

/// Render a numeric vector as a transcript string that parses back exactly.
pub fn vector_to_text(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    parts.join(" ")
}

/// Parse a transcript as a numeric vector if every token is a number.
pub fn text_to_vector(s: &str) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for tok in s.split_whitespace() {
        out.push(tok.parse::<f64>().ok()?);
    }
    if out.is_empty() {
        None
    } else {
        Some(out)
    }
}
