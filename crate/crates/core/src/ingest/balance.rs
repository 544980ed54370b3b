use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::IngestError;
use crate::domain::{Dimension, TranscriptSource};
use crate::record::InstanceRecord;

/// Indices of a label-balanced subset: every minority instance plus an equal
/// number of randomly chosen majority instances, in original order.
pub fn balance_indices(
    labels: &[bool],
    dimension: Dimension,
    seed: u64,
) -> Result<Vec<usize>, IngestError> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() {
        return Err(IngestError::EmptyClass {
            dimension,
            class: "positive",
        });
    }
    if neg.is_empty() {
        return Err(IngestError::EmptyClass {
            dimension,
            class: "negative",
        });
    }
    let (minority, mut majority) = if pos.len() <= neg.len() {
        (pos, neg)
    } else {
        (neg, pos)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    majority.shuffle(&mut rng);
    majority.truncate(minority.len());
    let mut out = minority;
    out.extend(majority);
    out.sort_unstable();
    Ok(out)
}

pub fn balance_dataset(
    records: &[InstanceRecord],
    dimension: Dimension,
    seed: u64,
) -> Result<Vec<InstanceRecord>, IngestError> {
    let labels: Vec<bool> = records.iter().map(|r| r.labels.get(dimension)).collect();
    Ok(balance_indices(&labels, dimension, seed)?
        .into_iter()
        .map(|i| records[i].clone())
        .collect())
}

fn train_size(n: usize, train_fraction: f64) -> usize {
    let t = (train_fraction * n as f64).round() as usize;
    t.clamp(1, n.saturating_sub(1).max(1))
}

/// Random partition of `0..n` into `(train, test)`, train size `round(f*n)`.
pub fn split_indices(
    n: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), IngestError> {
    if n < 2 {
        return Err(IngestError::InvalidParameter(format!(
            "split needs at least 2 records, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(IngestError::InvalidParameter(format!(
            "train_fraction {train_fraction} outside [0, 1]"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = perm.split_off(train_size(n, train_fraction));
    Ok((perm, test))
}

pub fn split<T: Clone>(
    records: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), IngestError> {
    let (tr, te) = split_indices(records.len(), train_fraction, seed)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| records[i].clone()).collect();
    Ok((pick(tr), pick(te)))
}

/// Case-level split: whole cases go to one side. Cases are visited in random
/// order and assigned to train until the train side reaches `round(f*n)`.
pub fn split_by_case(
    case_ids: &[String],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), IngestError> {
    let n = case_ids.len();
    if n < 2 {
        return Err(IngestError::InvalidParameter(format!(
            "split needs at least 2 records, got {n}"
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in case_ids.iter().enumerate() {
        groups.entry(c.as_str()).or_default().push(i);
    }
    let mut cases: Vec<Vec<usize>> = groups.into_values().collect();
    cases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = train_size(n, train_fraction);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for members in cases {
        if train.len() < target {
            train.extend(members);
        } else {
            test.extend(members);
        }
    }
    Ok((train, test))
}

pub fn select_text(record: &InstanceRecord, source: TranscriptSource) -> Result<&str, IngestError> {
    let field = match source {
        TranscriptSource::Manual => record.text_manual.as_deref(),
        TranscriptSource::Asr => record.text_asr.as_deref(),
    };
    field.ok_or_else(|| IngestError::MissingTranscript {
        id: record.id.clone(),
        transcript: source,
    })
}
