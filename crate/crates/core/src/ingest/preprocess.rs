use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IngestError;

/// Clip and media preprocessing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub clip_pre_s: f64,
    pub clip_post_s: f64,
    pub frame_count: usize,
    pub video_width: u32,
    pub video_height: u32,
    pub audio_rate_hz: u32,
    pub audio_channels: u32,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            clip_pre_s: 5.0,
            clip_post_s: 5.0,
            frame_count: 16,
            video_width: 320,
            video_height: 250,
            audio_rate_hz: 16_000,
            audio_channels: 1,
        }
    }
}

impl PreprocessSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.clip_pre_s >= 0.0 && self.clip_post_s >= 0.0)
            || self.clip_pre_s + self.clip_post_s <= 0.0
        {
            return Err(IngestError::InvalidParameter(
                "clip_pre_s + clip_post_s must be > 0".into(),
            ));
        }
        if self.frame_count < 1 {
            return Err(IngestError::InvalidParameter(
                "frame_count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Onset-centred window, clamped (not shifted) at the recording edges.
pub fn window_clip(
    onset_s: f64,
    recording_len_s: f64,
    spec: &PreprocessSpec,
) -> Result<(f64, f64), IngestError> {
    spec.validate()?;
    if !(0.0..=recording_len_s).contains(&onset_s) {
        return Err(IngestError::OnsetOutOfRange {
            onset_s,
            recording_len_s,
        });
    }
    let t0 = (onset_s - spec.clip_pre_s).max(0.0);
    let t1 = (onset_s + spec.clip_post_s).min(recording_len_s);
    Ok((t0, t1))
}

/// Stratified frame sampling: `[0, total)` is cut into `count` equal
/// segments and one index is drawn uniformly from each. Segments narrower
/// than one frame collapse onto the frame they fall in, so short clips
/// repeat indices instead of failing.
pub fn sample_frame_indices(total_frames: usize, frame_count: usize, seed: u64) -> Vec<usize> {
    assert!(total_frames >= 1, "total_frames must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seg = total_frames as f64 / frame_count as f64;
    let mut out: Vec<usize> = (0..frame_count)
        .map(|i| {
            let lo = (i as f64 * seg).floor() as usize;
            let hi = (((i + 1) as f64 * seg).floor() as usize).max(lo + 1);
            let hi = hi.min(total_frames);
            let lo = lo.min(hi - 1);
            rng.random_range(lo..hi)
        })
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_fixtures() {
        let s = PreprocessSpec::default();
        assert_eq!(window_clip(100.0, 2000.0, &s).unwrap(), (95.0, 105.0));
        assert_eq!(window_clip(2.0, 2000.0, &s).unwrap(), (0.0, 7.0));
        assert_eq!(window_clip(2000.0, 2000.0, &s).unwrap(), (1995.0, 2000.0));
        assert!(matches!(
            window_clip(2001.0, 2000.0, &s),
            Err(IngestError::OnsetOutOfRange { .. })
        ));
        assert!(window_clip(-1.0, 2000.0, &s).is_err());
    }

    #[test]
    fn window_rejects_empty_span() {
        let s = PreprocessSpec {
            clip_pre_s: 0.0,
            clip_post_s: 0.0,
            ..Default::default()
        };
        assert!(window_clip(1.0, 10.0, &s).is_err());
    }

    #[test]
    fn frames_forced_when_equal() {
        assert_eq!(sample_frame_indices(16, 16, 3), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn frames_one_per_segment() {
        for seed in 0..20 {
            let idx = sample_frame_indices(160, 16, seed);
            assert_eq!(idx.len(), 16);
            for (i, &f) in idx.iter().enumerate() {
                assert!((10 * i..10 * i + 10).contains(&f), "seed {seed}: {idx:?}");
            }
        }
    }

    #[test]
    fn frames_short_clip_repeats() {
        let idx = sample_frame_indices(8, 16, 0);
        assert_eq!(idx.len(), 16);
        assert!(idx.iter().all(|&i| i < 8));
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        // each of the 8 frames is used exactly twice
        for f in 0..8 {
            assert_eq!(idx.iter().filter(|&&i| i == f).count(), 2);
        }
    }

    #[test]
    fn frames_deterministic() {
        assert_eq!(
            sample_frame_indices(100, 16, 5),
            sample_frame_indices(100, 16, 5)
        );
    }

    #[test]
    fn default_spec_values() {
        let s = PreprocessSpec::default();
        assert_eq!((s.video_width, s.video_height), (320, 250));
        assert_eq!((s.audio_rate_hz, s.audio_channels), (16_000, 1));
        assert_eq!(s.frame_count, 16);
    }
}
