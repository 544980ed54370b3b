//! Results rows, per-cell prediction files and the aggregate.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelSpec;
use super::HarnessError;
use crate::domain::{Dimension, Modality, TranscriptSource};
use crate::eval::{
    aggregate, mcnemar, predictions, relative_gain, AggregateMetrics, McNemarOutcome,
};
use crate::fusion::VoteRule;
use crate::strategies::Strategy;

pub const RESULTS_HEADER: &str =
    "dimension,model,strategy,transcript_source,seed,auc,precision,recall,f1,runtime_s";
pub const FAILURES_HEADER: &str = "dimension,model,strategy,transcript_source,seed,error";
pub const ORACLE_HEADER: &str = "dimension,seed,scope,auc";

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub dimension: Dimension,
    pub model: ModelSpec,
    pub strategy: Strategy,
    pub source: Option<TranscriptSource>,
    pub seed: u64,
}

pub fn source_key(s: Option<TranscriptSource>) -> &'static str {
    s.map_or("none", TranscriptSource::key)
}

fn parse_source(s: &str) -> Result<Option<TranscriptSource>, String> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

impl CellKey {
    /// `dimension|model|strategy|source`, the aggregate key.
    pub fn group(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.dimension,
            self.model,
            self.strategy,
            source_key(self.source)
        )
    }

    pub fn id(&self) -> String {
        format!("{}|{}", self.group(), self.seed)
    }

    pub fn file_stem(&self) -> String {
        self.id().replace('|', "__")
    }

    fn csv_prefix(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.dimension,
            self.model,
            self.strategy,
            source_key(self.source),
            self.seed
        )
    }

    fn parse_fields(f: &[&str]) -> Result<Self, String> {
        Ok(CellKey {
            dimension: f[0].parse()?,
            model: f[1].parse()?,
            strategy: f[2].parse()?,
            source: parse_source(f[3])?,
            seed: f[4].parse().map_err(|e| format!("seed: {e}"))?,
        })
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub key: CellKey,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub runtime_s: f64,
}

impl ResultRow {
    /// Metric values print in shortest round-trip form so rows re-read
    /// bit-exactly.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{:.3}",
            self.key.csv_prefix(),
            self.auc,
            self.precision,
            self.recall,
            self.f1,
            self.runtime_s
        )
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 10 {
            return Err(format!("expected 10 fields, got {}", f.len()));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|e| format!("field {}: {e}", i + 1))
        };
        Ok(ResultRow {
            key: CellKey::parse_fields(&f)?,
            auc: num(5)?,
            precision: num(6)?,
            recall: num(7)?,
            f1: num(8)?,
            runtime_s: num(9)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub key: CellKey,
    pub error: String,
}

impl FailureRow {
    pub fn to_csv(&self) -> String {
        let msg: String = self
            .error
            .chars()
            .map(|c| if c == ',' || c == '\n' { ';' } else { c })
            .collect();
        format!("{},{}", self.key.csv_prefix(), msg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub dimension: Dimension,
    pub seed: u64,
    /// `all|manual`, `all|asr`, `text|manual`, `text|asr`, `audio` or `video`.
    pub scope: String,
    pub auc: f64,
}

impl OracleRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:?}",
            self.dimension, self.seed, self.scope, self.auc
        )
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(format!("expected 4 fields, got {}", f.len()));
        }
        Ok(OracleRow {
            dimension: f[0].parse()?,
            seed: f[1].parse().map_err(|e| format!("seed: {e}"))?,
            scope: f[2].to_string(),
            auc: f[3].parse().map_err(|e| format!("auc: {e}"))?,
        })
    }
}

/// Oracle scope matching the inputs a cell's model sees.
pub fn oracle_scope(key: &CellKey) -> String {
    match key.model {
        ModelSpec::Single(Modality::Text) => format!("text|{}", source_key(key.source)),
        ModelSpec::Single(m) => m.key().to_string(),
        _ => format!("all|{}", source_key(key.source)),
    }
}

/// Held-out predictions of one cell, kept for paired tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPredictions {
    pub key: CellKey,
    pub ids: Vec<String>,
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub auc_curve: Vec<f64>,
    pub loss_curve: Vec<f64>,
    pub lr_curve: Vec<f64>,
    pub final_auc: Option<f64>,
    pub vote_rule: Option<VoteRule>,
}

impl CellPredictions {
    pub fn path(dir: &Path, key: &CellKey) -> PathBuf {
        dir.join(format!("{}.json", key.file_stem()))
    }

    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        let p = Self::path(dir, &self.key);
        let text = serde_json::to_string(self).map_err(|e| HarnessError::io(&p, e))?;
        fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))
    }

    pub fn load(dir: &Path, key: &CellKey) -> Result<Self, HarnessError> {
        let p = Self::path(dir, key);
        let text = fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::io(&p, e))
    }
}

fn read_lines(path: &Path, header: &str) -> Result<Vec<(usize, String)>, HarnessError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        None => return Ok(Vec::new()),
        Some(_) => {
            return Err(HarnessError::Results {
                path: path.display().to_string(),
                line: 1,
                message: format!("expected header `{header}`"),
            })
        }
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    read_lines(path, RESULTS_HEADER)?
        .into_iter()
        .map(|(line, l)| {
            ResultRow::parse(&l).map_err(|message| HarnessError::Results {
                path: path.display().to_string(),
                line,
                message,
            })
        })
        .collect()
}

pub fn read_oracle(path: &Path) -> Result<Vec<OracleRow>, HarnessError> {
    read_lines(path, ORACLE_HEADER)?
        .into_iter()
        .map(|(line, l)| {
            OracleRow::parse(&l).map_err(|message| HarnessError::Results {
                path: path.display().to_string(),
                line,
                message,
            })
        })
        .collect()
}

/// Replace `path` with `header` plus `lines`, via a temporary file.
pub fn write_table(
    path: &Path,
    header: &str,
    lines: impl IntoIterator<Item = String>,
) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    let mut text = String::from(header);
    text.push('\n');
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    fs::write(&tmp, text).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Line-at-a-time appender that creates the file with its header.
pub struct Appender {
    path: PathBuf,
    file: fs::File,
}

impl Appender {
    pub fn open(path: &Path, header: &str) -> Result<Self, HarnessError> {
        let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| HarnessError::io(path, e))?;
        if fresh {
            writeln!(file, "{header}").map_err(|e| HarnessError::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, line: &str) -> Result<(), HarnessError> {
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| HarnessError::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub dimension: Dimension,
    pub model: ModelSpec,
    pub strategy: Strategy,
    pub source: Option<TranscriptSource>,
    pub n: usize,
    pub auc: AggregateMetrics,
    pub precision: AggregateMetrics,
    pub recall: AggregateMetrics,
    pub f1: AggregateMetrics,
    /// Group key of the best single-modality model this entry is compared to.
    pub best_single: Option<String>,
    pub gain_pct: Option<f64>,
    /// Paired test against `best_single`, pooled over seeds.
    pub mcnemar: Option<McNemarOutcome>,
}

pub type Aggregate = BTreeMap<String, AggregateEntry>;

/// Single-modality group keys a multimodal entry competes with.
fn single_candidates(dimension: Dimension, source: Option<TranscriptSource>) -> Vec<String> {
    let mut v = Vec::new();
    if let Some(s) = source {
        v.push(format!("{dimension}|text|individual|{s}"));
    }
    v.push(format!("{dimension}|audio|individual|none"));
    v.push(format!("{dimension}|video|individual|none"));
    v
}

/// Group rows into per-(dimension, model, strategy, source) statistics.
/// With `preds_dir`, multimodal entries also get a McNemar test against
/// their best single modality, pooling the held-out predictions of every
/// seed both have.
pub fn compute_aggregate(
    rows: &[ResultRow],
    preds_dir: Option<&Path>,
) -> Result<Aggregate, HarnessError> {
    let mut groups: BTreeMap<String, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.key.group()).or_default().push(r);
    }
    let mut out = Aggregate::new();
    for (g, rs) in &groups {
        let col =
            |f: fn(&ResultRow) -> f64| aggregate(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
        let k = rs[0].key;
        out.insert(
            g.clone(),
            AggregateEntry {
                dimension: k.dimension,
                model: k.model,
                strategy: k.strategy,
                source: k.source,
                n: rs.len(),
                auc: col(|r| r.auc)?,
                precision: col(|r| r.precision)?,
                recall: col(|r| r.recall)?,
                f1: col(|r| r.f1)?,
                best_single: None,
                gain_pct: None,
                mcnemar: None,
            },
        );
    }
    let keys: Vec<String> = out.keys().cloned().collect();
    for g in keys {
        let e = &out[&g];
        if matches!(e.model, ModelSpec::Single(_)) {
            continue;
        }
        let best = single_candidates(e.dimension, e.source)
            .into_iter()
            .filter_map(|c| out.get(&c).map(|s| (c, s.auc.mean)))
            .fold(None::<(String, f64)>, |b, (c, m)| match b {
                Some((_, bm)) if bm >= m => b,
                _ => Some((c, m)),
            });
        let Some((best_key, best_mean)) = best else {
            continue;
        };
        let gain = relative_gain(e.auc.mean, best_mean);
        let test = match preds_dir {
            Some(dir) => pooled_mcnemar(dir, &groups[&g], dir, &groups[&best_key])?,
            None => None,
        };
        let e = out.get_mut(&g).unwrap();
        e.best_single = Some(best_key);
        e.gain_pct = Some(gain);
        e.mcnemar = test;
    }
    Ok(out)
}

/// McNemar test of rows `a` against rows `b`, pooling the held-out
/// predictions of every seed both have, matched by instance id. `None` when
/// no predictions overlap.
pub fn pooled_mcnemar(
    dir_a: &Path,
    a: &[&ResultRow],
    dir_b: &Path,
    b: &[&ResultRow],
) -> Result<Option<McNemarOutcome>, HarnessError> {
    let by_seed: HashMap<u64, &CellKey> = b.iter().map(|r| (r.key.seed, &r.key)).collect();
    let (mut pa, mut pb, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for ra in a {
        let Some(kb) = by_seed.get(&ra.key.seed) else {
            continue;
        };
        let (Ok(x), Ok(y)) = (
            CellPredictions::load(dir_a, &ra.key),
            CellPredictions::load(dir_b, kb),
        ) else {
            continue;
        };
        let pos: HashMap<&str, usize> = y
            .ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let (px, py) = (predictions(&x.scores, 0.5), predictions(&y.scores, 0.5));
        for (i, id) in x.ids.iter().enumerate() {
            if let Some(&j) = pos.get(id.as_str()) {
                pa.push(px[i]);
                pb.push(py[j]);
                labels.push(x.labels[i]);
            }
        }
    }
    if labels.is_empty() {
        return Ok(None);
    }
    Ok(Some(mcnemar(&pa, &pb, &labels)?))
}
