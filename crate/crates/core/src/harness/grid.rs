//! The experiment grid: dimensions × models × strategies × transcript
//! sources × seeds, with resumable result files.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::config::{ExperimentConfig, ModelSpec};
use super::results::{
    compute_aggregate, read_results, write_table, Aggregate, Appender, CellKey, CellPredictions,
    FailureRow, OracleRow, ResultRow, FAILURES_HEADER, ORACLE_HEADER, RESULTS_HEADER,
};
use super::HarnessError;
use crate::datagen::{BayesOracle, DataMode};
use crate::domain::{derive_seed, Dimension, Modality, TranscriptSource};
use crate::encoders::ModalityEncoder;
use crate::eval::{roc_auc, RunMetrics};
use crate::fusion::{best_voting, vote_score, VoteRule};
use crate::ingest::{balance_dataset, split, split_by_case};
use crate::record::InstanceRecord;
use crate::strategies::{
    train_individual_with_snapshot, train_joint, train_staged_from, History, Strategy,
    StrategyError, TaskData, TrainedModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Execution::Parallel;
        #[cfg(not(feature = "parallel"))]
        Execution::Sequential
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Every completed row, sorted by cell key.
    pub rows: Vec<ResultRow>,
    pub failures: Vec<FailureRow>,
    pub oracle: Vec<OracleRow>,
    pub aggregate: Aggregate,
    /// Cells trained in this invocation.
    pub executed: usize,
    /// Cells skipped because a previous invocation finished them.
    pub skipped: usize,
}

/// All cells of the grid in canonical order.
pub fn enumerate_cells(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut out = Vec::new();
    for &dimension in &cfg.dimensions {
        for &seed in &cfg.seeds {
            for &model in &cfg.models {
                for &strategy in cfg.strategies.iter().filter(|s| model.supports(**s)) {
                    let sources: Vec<Option<TranscriptSource>> = if model.uses_text() {
                        cfg.sources.iter().map(|s| Some(*s)).collect()
                    } else {
                        vec![None]
                    };
                    for source in sources {
                        out.push(CellKey {
                            dimension,
                            model,
                            strategy,
                            source,
                            seed,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Training seed of a cell, derived from the global seed and the cell key.
pub fn cell_seed(global_seed: u64, key: &CellKey) -> u64 {
    derive_seed(global_seed, &key.id())
}

/// Seed for balancing and splitting. Shared by every model of a
/// (dimension, run) so paired tests compare the same instances.
pub fn data_seed(global_seed: u64, dimension: Dimension, run_seed: u64) -> u64 {
    derive_seed(global_seed, &format!("data|{dimension}|{run_seed}"))
}

/// Balanced train/test records for one dimension and run.
pub fn prepare_split(
    cfg: &ExperimentConfig,
    records: &[InstanceRecord],
    dimension: Dimension,
    run_seed: u64,
) -> Result<(Vec<InstanceRecord>, Vec<InstanceRecord>), HarnessError> {
    let seed = data_seed(cfg.global_seed, dimension, run_seed);
    let balanced = balance_dataset(records, dimension, derive_seed(seed, "balance"))?;
    let split_seed = derive_seed(seed, "split");
    if cfg.split_by_case {
        let cases: Vec<String> = balanced.iter().map(|r| r.case_id.clone()).collect();
        let (tr, te) = split_by_case(&cases, cfg.train_fraction, split_seed)?;
        let pick = |ix: Vec<usize>| ix.into_iter().map(|i| balanced[i].clone()).collect();
        Ok((pick(tr), pick(te)))
    } else {
        Ok(split(&balanced, cfg.train_fraction, split_seed)?)
    }
}

/// Result of running one cell.
#[derive(Debug, Clone)]
pub struct CellRun {
    pub row: ResultRow,
    pub preds: CellPredictions,
    /// `None` for Best Voting, which has no parameters.
    pub model: Option<TrainedModel>,
    pub vocabulary: Option<crate::encoders::Vocabulary>,
}

struct Individual {
    model: TrainedModel,
    snapshot: Option<(ModalityEncoder, History)>,
    runtime_s: f64,
}

/// State shared by the cells of one (dimension, run seed).
struct Job<'a> {
    cfg: &'a ExperimentConfig,
    dimension: Dimension,
    run_seed: u64,
    train: Vec<InstanceRecord>,
    test: Vec<InstanceRecord>,
    data: HashMap<Option<TranscriptSource>, TaskData>,
    individuals: HashMap<(Modality, Option<TranscriptSource>), Individual>,
}

impl<'a> Job<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        records: &[InstanceRecord],
        dimension: Dimension,
        run_seed: u64,
    ) -> Result<Self, HarnessError> {
        let (train, test) = prepare_split(cfg, records, dimension, run_seed)?;
        Ok(Self {
            cfg,
            dimension,
            run_seed,
            train,
            test,
            data: HashMap::new(),
            individuals: HashMap::new(),
        })
    }

    fn data(&mut self, source: Option<TranscriptSource>) -> Result<&TaskData, HarnessError> {
        if !self.data.contains_key(&source) {
            let d = TaskData::build(&self.train, &self.test, self.dimension, source)?;
            self.data.insert(source, d);
        }
        Ok(&self.data[&source])
    }

    fn key(
        &self,
        model: ModelSpec,
        strategy: Strategy,
        source: Option<TranscriptSource>,
    ) -> CellKey {
        CellKey {
            dimension: self.dimension,
            model,
            strategy,
            source,
            seed: self.run_seed,
        }
    }

    /// Train (once) the individual model a cell depends on. Non-text
    /// modalities ignore the transcript source.
    fn individual(
        &mut self,
        m: Modality,
        source: Option<TranscriptSource>,
    ) -> Result<&Individual, HarnessError> {
        let source = if m == Modality::Text { source } else { None };
        let slot = (m, source);
        if !self.individuals.contains_key(&slot) {
            let key = self.key(ModelSpec::Single(m), Strategy::Individual, source);
            let cfg = self
                .cfg
                .train
                .with_seed(cell_seed(self.cfg.global_seed, &key));
            let half = cfg.stage_epochs().0;
            let start = Instant::now();
            let data = self.data(source)?;
            let (model, snapshot) =
                train_individual_with_snapshot(m, data, &cfg, (half > 0).then_some(half))?;
            self.individuals.insert(
                slot,
                Individual {
                    model,
                    snapshot,
                    runtime_s: start.elapsed().as_secs_f64(),
                },
            );
        }
        Ok(&self.individuals[&slot])
    }

    fn run(&mut self, key: &CellKey) -> Result<CellRun, HarnessError> {
        let start = Instant::now();
        let labels = self.data(key.source)?.test.labels.clone();
        let ids = self.data(key.source)?.test.ids.clone();
        let vocabulary = self.data(key.source)?.vocabulary.clone();
        let (scores, model, vote_rule, runtime) = match (key.model, key.strategy) {
            (ModelSpec::Single(m), Strategy::Individual) => {
                let ind = self.individual(m, key.source)?;
                (
                    ind.model.reported_scores().to_vec(),
                    Some(ind.model.clone()),
                    None,
                    ind.runtime_s,
                )
            }
            (ModelSpec::BestVoting, Strategy::Individual) => {
                let mut per_model = Vec::with_capacity(3);
                for m in Modality::ALL {
                    per_model.push(
                        self.individual(m, key.source)?
                            .model
                            .reported_scores()
                            .to_vec(),
                    );
                }
                let rule_scores = |rule| -> Vec<f64> {
                    (0..labels.len())
                        .map(|i| {
                            vote_score([per_model[0][i], per_model[1][i], per_model[2][i]], rule)
                        })
                        .collect()
                };
                let (maj, max) = (rule_scores(VoteRule::Majority), rule_scores(VoteRule::Max));
                let rule = best_voting(roc_auc(&maj, &labels)?, roc_auc(&max, &labels)?);
                let scores = if rule == VoteRule::Majority { maj } else { max };
                (scores, None, Some(rule), start.elapsed().as_secs_f64())
            }
            (ModelSpec::Fusion(kind), Strategy::Joint) => {
                let cfg = self
                    .cfg
                    .train
                    .with_seed(cell_seed(self.cfg.global_seed, key));
                let t = train_joint(kind, self.data(key.source)?, &cfg)?;
                (
                    t.reported_scores().to_vec(),
                    Some(t),
                    None,
                    start.elapsed().as_secs_f64(),
                )
            }
            (ModelSpec::Fusion(kind), Strategy::Staged) => {
                if self.cfg.train.epochs < 2 {
                    return Err(StrategyError::TooFewEpochs(self.cfg.train.epochs).into());
                }
                let mut pre = Vec::with_capacity(3);
                let mut pre_time = 0.0;
                for m in Modality::ALL {
                    let ind = self.individual(m, key.source)?;
                    pre_time += ind.runtime_s / 2.0;
                    pre.push(
                        ind.snapshot
                            .clone()
                            .expect("snapshot taken when epochs >= 2"),
                    );
                }
                let pre: [_; 3] = pre.try_into().expect("three modalities");
                let cfg = self
                    .cfg
                    .train
                    .with_seed(cell_seed(self.cfg.global_seed, key));
                let t = train_staged_from(kind, self.data(key.source)?, &cfg, pre)?;
                (
                    t.reported_scores().to_vec(),
                    Some(t),
                    None,
                    pre_time + start.elapsed().as_secs_f64(),
                )
            }
            (model, strategy) => {
                return Err(StrategyError::InvalidConfig(format!(
                    "{model} does not support {strategy}"
                ))
                .into());
            }
        };
        let metrics = RunMetrics::from_scores(scores, labels)?;
        let history = model.as_ref().map(|m| &m.history);
        let preds = CellPredictions {
            key: *key,
            ids,
            labels: metrics.labels.clone(),
            scores: metrics.scores.clone(),
            best_epoch: history.map(|h| h.best_epoch),
            auc_curve: history.map(|h| h.auc.clone()).unwrap_or_default(),
            loss_curve: history.map(|h| h.loss.clone()).unwrap_or_default(),
            lr_curve: history.map(|h| h.lr.clone()).unwrap_or_default(),
            final_auc: history.map(|h| h.final_auc()),
            vote_rule,
        };
        Ok(CellRun {
            row: ResultRow {
                key: *key,
                auc: metrics.auc,
                precision: metrics.precision,
                recall: metrics.recall,
                f1: metrics.f1,
                runtime_s: runtime,
            },
            preds,
            model,
            vocabulary,
        })
    }

    /// Bayes-oracle AUC on this job's test split, for analytic synthetic data.
    fn oracle_rows(&self, oracle: &BayesOracle) -> Result<Vec<OracleRow>, HarnessError> {
        let labels: Vec<bool> = self
            .test
            .iter()
            .map(|r| r.labels.get(self.dimension))
            .collect();
        let mut scopes: Vec<(String, Vec<Modality>, TranscriptSource)> = Vec::new();
        for s in [TranscriptSource::Manual, TranscriptSource::Asr] {
            scopes.push((format!("all|{s}"), Modality::ALL.to_vec(), s));
            scopes.push((format!("text|{s}"), vec![Modality::Text], s));
        }
        scopes.push((
            "audio".into(),
            vec![Modality::Audio],
            TranscriptSource::Manual,
        ));
        scopes.push((
            "video".into(),
            vec![Modality::Video],
            TranscriptSource::Manual,
        ));
        let mut out = Vec::new();
        for (scope, mods, source) in scopes {
            let scores = self
                .test
                .iter()
                .map(|r| Ok(oracle.log_odds_with(r, &mods, source)?[self.dimension.index()]))
                .collect::<Result<Vec<f64>, HarnessError>>()?;
            out.push(OracleRow {
                dimension: self.dimension,
                seed: self.run_seed,
                scope,
                auc: roc_auc(&scores, &labels)?,
            });
        }
        Ok(out)
    }
}

/// Train a single cell outside the grid, e.g. from the command line.
pub fn train_cell(
    cfg: &ExperimentConfig,
    records: &[InstanceRecord],
    key: &CellKey,
) -> Result<CellRun, HarnessError> {
    let mut job = Job::new(cfg, records, key.dimension, key.seed)?;
    job.run(key)
}

pub fn run_grid(cfg: &ExperimentConfig) -> Result<GridOutcome, HarnessError> {
    run_grid_with(cfg, Execution::default())
}

struct Sinks {
    results: Appender,
    failures: Appender,
}

pub fn run_grid_with(cfg: &ExperimentConfig, exec: Execution) -> Result<GridOutcome, HarnessError> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    let preds_dir = out.join("preds");
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&preds_dir).map_err(|e| HarnessError::io(&preds_dir, e))?;
    if cfg.save_checkpoints {
        fs::create_dir_all(&ckpt_dir).map_err(|e| HarnessError::io(&ckpt_dir, e))?;
    }
    check_run_marker(out, cfg.hash())?;

    let results_path = out.join("results.csv");
    let previous = read_results(&results_path)?;
    let done: BTreeSet<CellKey> = previous.iter().map(|r| r.key).collect();
    let cells = enumerate_cells(cfg);
    let skipped = cells.iter().filter(|k| done.contains(k)).count();

    let failures_path = out.join("failures.csv");
    write_table(&failures_path, FAILURES_HEADER, std::iter::empty())?;
    let sinks = Mutex::new(Sinks {
        results: Appender::open(&results_path, RESULTS_HEADER)?,
        failures: Appender::open(&failures_path, FAILURES_HEADER)?,
    });

    let records = cfg.load_records()?;
    let oracle = match cfg.synthetic_spec()? {
        Some(spec) if spec.mode == DataMode::Analytic && spec.label_correlation.is_none() => {
            Some(BayesOracle::new(&spec)?)
        }
        _ => None,
    };

    let mut jobs: Vec<(Dimension, u64, Vec<CellKey>)> = Vec::new();
    for &d in &cfg.dimensions {
        for &s in &cfg.seeds {
            let pending = cells
                .iter()
                .filter(|k| k.dimension == d && k.seed == s && !done.contains(k))
                .copied()
                .collect();
            jobs.push((d, s, pending));
        }
    }

    let run_job = |(d, s, pending): &(Dimension, u64, Vec<CellKey>)| -> JobReport {
        let mut report = JobReport::default();
        let mut job = match Job::new(cfg, &records, *d, *s) {
            Ok(j) => j,
            Err(e) => {
                report.failures = pending
                    .iter()
                    .map(|k| FailureRow {
                        key: *k,
                        error: e.to_string(),
                    })
                    .collect();
                report.persist(&sinks);
                return report;
            }
        };
        if let Some(o) = &oracle {
            match job.oracle_rows(o) {
                Ok(rows) => report.oracle = rows,
                Err(e) => report.setup_error = Some(e.to_string()),
            }
        }
        for key in pending {
            match job
                .run(key)
                .and_then(|run| persist_cell(cfg, &preds_dir, &ckpt_dir, run))
            {
                Ok(row) => {
                    let mut s = sinks.lock().expect("results appender");
                    if let Err(e) = s.results.append(&row.to_csv()) {
                        report.setup_error = Some(e.to_string());
                    }
                    report.rows.push(row);
                }
                Err(e) => {
                    let f = FailureRow {
                        key: *key,
                        error: e.to_string(),
                    };
                    let mut s = sinks.lock().expect("failures appender");
                    if let Err(e) = s.failures.append(&f.to_csv()) {
                        report.setup_error = Some(e.to_string());
                    }
                    report.failures.push(f);
                }
            }
        }
        report
    };

    let reports: Vec<JobReport> = match exec {
        Execution::Sequential => jobs.iter().map(run_job).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => jobs.par_iter().map(run_job).collect(),
    };

    if let Some(e) = reports.iter().find_map(|r| r.setup_error.clone()) {
        return Err(HarnessError::Io {
            path: out.display().to_string(),
            message: e,
        });
    }
    let executed = reports.iter().map(|r| r.rows.len()).sum();
    let mut rows = previous;
    let mut failures = Vec::new();
    let mut oracle_rows = Vec::new();
    for r in reports {
        rows.extend(r.rows);
        failures.extend(r.failures);
        oracle_rows.extend(r.oracle);
    }
    rows.sort_by_key(|r| r.key);
    rows.dedup_by_key(|r| r.key);
    failures.sort_by_key(|f| f.key);
    oracle_rows
        .sort_by(|a, b| (a.dimension, a.seed, &a.scope).cmp(&(b.dimension, b.seed, &b.scope)));

    drop(sinks);
    write_table(
        &results_path,
        RESULTS_HEADER,
        rows.iter().map(ResultRow::to_csv),
    )?;
    write_table(
        &failures_path,
        FAILURES_HEADER,
        failures.iter().map(FailureRow::to_csv),
    )?;
    if oracle.is_some() {
        write_table(
            &out.join("oracle.csv"),
            ORACLE_HEADER,
            oracle_rows.iter().map(OracleRow::to_csv),
        )?;
    }
    let aggregate = compute_aggregate(&rows, Some(&preds_dir))?;
    let agg_path = out.join("aggregate.json");
    let text =
        serde_json::to_string_pretty(&aggregate).map_err(|e| HarnessError::io(&agg_path, e))?;
    fs::write(&agg_path, text).map_err(|e| HarnessError::io(&agg_path, e))?;

    Ok(GridOutcome {
        rows,
        failures,
        oracle: oracle_rows,
        aggregate,
        executed,
        skipped,
    })
}

#[derive(Default)]
struct JobReport {
    rows: Vec<ResultRow>,
    failures: Vec<FailureRow>,
    oracle: Vec<OracleRow>,
    setup_error: Option<String>,
}

impl JobReport {
    fn persist(&mut self, sinks: &Mutex<Sinks>) {
        let mut s = sinks.lock().expect("failures appender");
        for f in &self.failures {
            if let Err(e) = s.failures.append(&f.to_csv()) {
                self.setup_error = Some(e.to_string());
            }
        }
    }
}

fn persist_cell(
    cfg: &ExperimentConfig,
    preds_dir: &Path,
    ckpt_dir: &Path,
    run: CellRun,
) -> Result<ResultRow, HarnessError> {
    run.preds.save(preds_dir)?;
    if cfg.save_checkpoints {
        if let Some(model) = &run.model {
            let meta = CheckpointMeta::for_cell(cfg, &run.row.key, run.vocabulary.clone(), model);
            let path = ckpt_dir.join(format!("{}.ffck", run.row.key.file_stem()));
            save_checkpoint(&path, &model.model, &meta)?;
        }
    }
    Ok(run.row)
}

/// Refuse to resume into a directory written under a different config.
fn check_run_marker(out: &Path, hash: u64) -> Result<(), HarnessError> {
    let marker = out.join("run.json");
    if marker.exists() {
        let text = fs::read_to_string(&marker).map_err(|e| HarnessError::io(&marker, e))?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| HarnessError::io(&marker, e))?;
        let found = v["config_hash"]
            .as_str()
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .ok_or_else(|| HarnessError::io(&marker, "missing config_hash"))?;
        if found != hash {
            return Err(HarnessError::ResumeMismatch {
                found,
                expected: hash,
            });
        }
        return Ok(());
    }
    let v = serde_json::json!({ "config_hash": format!("{hash:016x}") });
    fs::write(&marker, v.to_string()).map_err(|e| HarnessError::io(&marker, e))
}
