//! Flat `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::datagen::{default_spec, sample_dataset, DataMode, SyntheticSpec};
use crate::domain::{fnv1a, Dimension, Modality, TranscriptSource};
use crate::fusion::FusionKind;
use crate::ingest::load_manifest;
use crate::record::InstanceRecord;
use crate::strategies::{Strategy, TrainConfig};

/// A row label of the results grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelSpec {
    Single(Modality),
    BestVoting,
    Fusion(FusionKind),
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 6] = [
        ModelSpec::Single(Modality::Text),
        ModelSpec::Single(Modality::Audio),
        ModelSpec::Single(Modality::Video),
        ModelSpec::BestVoting,
        ModelSpec::Fusion(FusionKind::Ensemble),
        ModelSpec::Fusion(FusionKind::Feature),
    ];

    pub fn key(self) -> &'static str {
        match self {
            ModelSpec::Single(m) => m.key(),
            ModelSpec::BestVoting => "best_voting",
            ModelSpec::Fusion(k) => k.key(),
        }
    }

    /// Whether `strategy` applies to this model.
    pub fn supports(self, strategy: Strategy) -> bool {
        match self {
            ModelSpec::Single(_) | ModelSpec::BestVoting => strategy == Strategy::Individual,
            ModelSpec::Fusion(_) => strategy != Strategy::Individual,
        }
    }

    /// Whether the model reads the transcript.
    pub fn uses_text(self) -> bool {
        !matches!(self, ModelSpec::Single(Modality::Audio | Modality::Video))
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        ModelSpec::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic {
        mode: DataMode,
        spec: Option<PathBuf>,
        seed: u64,
        n_instances: Option<usize>,
    },
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    pub dimensions: Vec<Dimension>,
    pub models: Vec<ModelSpec>,
    pub strategies: Vec<Strategy>,
    pub sources: Vec<TranscriptSource>,
    pub seeds: Vec<u64>,
    pub global_seed: u64,
    pub train_fraction: f64,
    pub split_by_case: bool,
    pub save_checkpoints: bool,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic {
                mode: DataMode::Analytic,
                spec: None,
                seed: 0,
                n_instances: None,
            },
            train: TrainConfig::default(),
            dimensions: Dimension::ALL.to_vec(),
            models: ModelSpec::ALL.to_vec(),
            strategies: vec![Strategy::Individual, Strategy::Joint, Strategy::Staged],
            sources: vec![TranscriptSource::Manual],
            seeds: vec![0, 1, 2],
            global_seed: 0,
            train_fraction: 0.8,
            split_by_case: false,
            save_checkpoints: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "data.mode",
    "data.spec",
    "data.manifest",
    "data.seed",
    "data.n",
    "train.epochs",
    "train.lr",
    "train.batch",
    "train.grad_accum",
    "train.patience",
    "train.factor",
    "train.dropout",
    "train.hidden",
    "train.embed_dim",
    "grid.dimensions",
    "grid.models",
    "grid.strategies",
    "grid.sources",
    "grid.seeds",
    "grid.global_seed",
    "grid.checkpoints",
    "split.train_fraction",
    "split.by_case",
    "out.dir",
];

fn list<T: FromStr<Err = String>>(v: &str) -> Result<Vec<T>, String> {
    let items: Vec<T> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(T::from_str)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("list must not be empty".into());
    }
    Ok(items)
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true/false, got `{other}`")),
    }
}

fn seeds(v: &str) -> Result<Vec<u64>, String> {
    let out: Vec<u64> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|e| format!("seed `{s}`: {e}")))
        .collect::<Result<_, _>>()?;
    if out.is_empty() {
        return Err("seeds must not be empty".into());
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Parse config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        let mut mode: Option<String> = None;
        let mut spec_path = None;
        let mut manifest = None;
        let mut data_seed = 0u64;
        let mut data_n = None;
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| HarnessError::Config {
                line: line_no,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(err(format!("unknown key `{k}`")));
            }
            if !seen.insert(k.to_string()) {
                return Err(err(format!("key `{k}` given twice")));
            }
            let path = |v: &str| {
                let p = PathBuf::from(v);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            let t = &mut cfg.train;
            let r: Result<(), String> = (|| {
                match k {
                    "data.mode" => mode = Some(v.to_string()),
                    "data.spec" => spec_path = Some(path(v)),
                    "data.manifest" => manifest = Some(path(v)),
                    "data.seed" => data_seed = num(v)?,
                    "data.n" => data_n = Some(num(v)?),
                    "train.epochs" => t.epochs = num(v)?,
                    "train.lr" => t.lr = num(v)?,
                    "train.batch" => t.batch_size = num(v)?,
                    "train.grad_accum" => t.grad_accum = num(v)?,
                    "train.patience" => t.patience = num(v)?,
                    "train.factor" => t.factor = num(v)?,
                    "train.dropout" => t.dropout = num(v)?,
                    "train.hidden" => t.encoder.hidden = num(v)?,
                    "train.embed_dim" => t.encoder.embed_dim = num(v)?,
                    "grid.dimensions" => cfg.dimensions = list(v)?,
                    "grid.models" => cfg.models = list(v)?,
                    "grid.strategies" => cfg.strategies = list(v)?,
                    "grid.sources" => cfg.sources = list(v)?,
                    "grid.seeds" => cfg.seeds = seeds(v)?,
                    "grid.global_seed" => cfg.global_seed = num(v)?,
                    "grid.checkpoints" => cfg.save_checkpoints = flag(v)?,
                    "split.train_fraction" => cfg.train_fraction = num(v)?,
                    "split.by_case" => cfg.split_by_case = flag(v)?,
                    "out.dir" => cfg.out_dir = path(v),
                    _ => unreachable!("checked against CONFIG_KEYS"),
                }
                Ok(())
            })();
            r.map_err(|m| err(format!("`{k}`: {m}")))?;
        }
        let fail = |message: String| HarnessError::Config { line: 0, message };
        cfg.data = match (mode.as_deref(), manifest) {
            (Some("manifest"), Some(p)) | (None, Some(p)) => DataSource::Manifest(p),
            (Some("manifest"), None) => {
                return Err(fail("data.mode = manifest needs data.manifest".into()))
            }
            (Some(m), None) => DataSource::Synthetic {
                mode: match m {
                    "analytic" => DataMode::Analytic,
                    "structural" => DataMode::Structural,
                    other => return Err(fail(format!("unknown data.mode `{other}`"))),
                },
                spec: spec_path,
                seed: data_seed,
                n_instances: data_n,
            },
            (None, None) => DataSource::Synthetic {
                mode: DataMode::Analytic,
                spec: spec_path,
                seed: data_seed,
                n_instances: data_n,
            },
            (Some(m), Some(_)) => {
                return Err(fail(format!("data.manifest given but data.mode is `{m}`")));
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |message: &str| {
            Err(HarnessError::Config {
                line: 0,
                message: message.into(),
            })
        };
        if self.seeds.is_empty() {
            return fail("seeds must not be empty");
        }
        if self.dimensions.is_empty() || self.models.is_empty() || self.strategies.is_empty() {
            return fail("dimensions, models and strategies must not be empty");
        }
        if self.sources.is_empty() && self.models.iter().any(|m| m.uses_text()) {
            return fail("text-based models need at least one transcript source");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("split.train_fraction must lie in (0, 1)");
        }
        self.train.validate().map_err(|e| HarnessError::Config {
            line: 0,
            message: e.to_string(),
        })?;
        Ok(())
    }

    /// Stable hash of everything that affects training results.
    pub fn hash(&self) -> u64 {
        let v = serde_json::json!({
            "data": self.data,
            "train": self.train,
            "global_seed": self.global_seed,
            "train_fraction": self.train_fraction,
            "split_by_case": self.split_by_case,
        });
        fnv1a(v.to_string().as_bytes())
    }

    /// The synthetic spec in force, if the data is synthetic.
    pub fn synthetic_spec(&self) -> Result<Option<SyntheticSpec>, HarnessError> {
        let DataSource::Synthetic {
            mode,
            spec,
            n_instances,
            ..
        } = &self.data
        else {
            return Ok(None);
        };
        let mut s = match spec {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| HarnessError::Config {
                    line: 0,
                    message: format!("{}: {e}", p.display()),
                })?
            }
            None => default_spec(),
        };
        s.mode = *mode;
        if let Some(n) = n_instances {
            s.n_instances = *n;
        }
        Ok(Some(s))
    }

    /// Records for the experiment, generated or read from the manifest.
    pub fn load_records(&self) -> Result<Vec<InstanceRecord>, HarnessError> {
        match &self.data {
            DataSource::Manifest(p) => Ok(load_manifest(p)?),
            DataSource::Synthetic { seed, .. } => {
                let spec = self.synthetic_spec()?.expect("synthetic source");
                Ok(sample_dataset(&spec, *seed)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_documented_key() {
        let text = "\
# demo
data.mode = analytic
data.seed = 7
data.n = 500
train.epochs = 4
train.lr = 0.002
train.batch = 4
train.grad_accum = 5
train.patience = 3
train.factor = 0.25
grid.dimensions = praise, visual_aid
grid.models = text,feature
grid.strategies = individual,staged
grid.sources = manual,asr
grid.seeds = 3,4
grid.global_seed = 11
out.dir = results
";
        let c = ExperimentConfig::parse(text, Path::new("/tmp/x")).unwrap();
        assert_eq!(c.train.epochs, 4);
        assert_eq!(c.train.effective_batch(), 20);
        assert_eq!(c.train.factor, 0.25);
        assert_eq!(c.dimensions, vec![Dimension::Praise, Dimension::VisualAid]);
        assert_eq!(
            c.models,
            vec![
                ModelSpec::Single(Modality::Text),
                ModelSpec::Fusion(FusionKind::Feature)
            ]
        );
        assert_eq!(c.sources.len(), 2);
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.global_seed, 11);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x/results"));
        assert!(matches!(
            c.data,
            DataSource::Synthetic {
                mode: DataMode::Analytic,
                seed: 7,
                n_instances: Some(500),
                ..
            }
        ));
    }

    #[test]
    fn manifest_source() {
        let c = ExperimentConfig::parse("data.manifest = m.jsonl", Path::new("/d")).unwrap();
        assert_eq!(c.data, DataSource::Manifest(PathBuf::from("/d/m.jsonl")));
        assert!(ExperimentConfig::parse("data.mode = manifest", Path::new("/d")).is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("train.epochs = 3\nbogus = 1", Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("bogus"));
        let e = ExperimentConfig::parse("grid.dimensions = anatomic, nope", Path::new("."))
            .unwrap_err();
        assert!(e.to_string().contains("nope"));
        assert!(ExperimentConfig::parse("grid.seeds = ", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("train.epochs = 0", Path::new(".")).is_err());
        assert!(ExperimentConfig::parse("train.lr = 1\ntrain.lr = 2", Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_training_inputs() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.lr *= 2.0;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn model_strategy_pairs() {
        assert!(ModelSpec::BestVoting.supports(Strategy::Individual));
        assert!(!ModelSpec::Fusion(FusionKind::Feature).supports(Strategy::Individual));
        assert!(!ModelSpec::Single(Modality::Audio).uses_text());
    }
}
