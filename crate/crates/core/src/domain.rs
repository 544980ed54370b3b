//! Feedback dimensions, modalities and the label set shared by every module.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the five non-exclusive feedback categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Anatomic,
    Procedural,
    Technical,
    Praise,
    VisualAid,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Anatomic,
        Dimension::Procedural,
        Dimension::Technical,
        Dimension::Praise,
        Dimension::VisualAid,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Dimension::Anatomic => "anatomic",
            Dimension::Procedural => "procedural",
            Dimension::Technical => "technical",
            Dimension::Praise => "praise",
            Dimension::VisualAid => "visual_aid",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Dimension::Anatomic => "Anatomic",
            Dimension::Procedural => "Procedural",
            Dimension::Technical => "Technical",
            Dimension::Praise => "Praise",
            Dimension::VisualAid => "Vis. Aid",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.key() == s.trim())
            .ok_or_else(|| format!("unknown dimension `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Audio,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Video];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.key() == s.trim())
            .ok_or_else(|| format!("unknown modality `{s}`"))
    }
}

/// Which transcript variant feeds the text modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptSource {
    Manual,
    Asr,
}

impl TranscriptSource {
    pub fn key(self) -> &'static str {
        match self {
            TranscriptSource::Manual => "manual",
            TranscriptSource::Asr => "asr",
        }
    }
}

impl fmt::Display for TranscriptSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for TranscriptSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "manual" => Ok(TranscriptSource::Manual),
            "asr" => Ok(TranscriptSource::Asr),
            other => Err(format!("unknown transcript source `{other}`")),
        }
    }
}

/// The five binary labels of one feedback instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeedbackLabelSet {
    pub anatomic: bool,
    pub procedural: bool,
    pub technical: bool,
    pub praise: bool,
    pub visual_aid: bool,
}

impl FeedbackLabelSet {
    pub fn from_array(v: [bool; 5]) -> Self {
        Self {
            anatomic: v[0],
            procedural: v[1],
            technical: v[2],
            praise: v[3],
            visual_aid: v[4],
        }
    }

    pub fn to_array(self) -> [bool; 5] {
        [
            self.anatomic,
            self.procedural,
            self.technical,
            self.praise,
            self.visual_aid,
        ]
    }

    pub fn get(&self, d: Dimension) -> bool {
        self.to_array()[d.index()]
    }

    pub fn set(&mut self, d: Dimension, v: bool) {
        let mut a = self.to_array();
        a[d.index()] = v;
        *self = Self::from_array(a);
    }
}

/// 64-bit FNV-1a, used for stable seed derivation and config hashes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a parent seed and a textual tag.
pub fn derive_seed(parent: u64, tag: &str) -> u64 {
    let mut buf = parent.to_le_bytes().to_vec();
    buf.extend_from_slice(tag.as_bytes());
    // splitmix finalizer to spread nearby inputs
    let mut z = fnv1a(&buf).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for d in Dimension::ALL {
            assert_eq!(d.key().parse::<Dimension>().unwrap(), d);
        }
        for m in Modality::ALL {
            assert_eq!(m.key().parse::<Modality>().unwrap(), m);
        }
        assert!("visual aid".parse::<Dimension>().is_err());
    }

    #[test]
    fn derive_seed_is_stable_and_sensitive() {
        assert_eq!(derive_seed(7, "a"), derive_seed(7, "a"));
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
        assert_ne!(derive_seed(7, "a"), derive_seed(8, "a"));
    }
}
