use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use feedfuse::datagen::{default_spec, sample_dataset, DataMode, SyntheticSpec};
use feedfuse::encoders::Parameterized;
use feedfuse::eval::{format_gain, relative_gain, RunMetrics};
use feedfuse::harness::checkpoint::CheckpointMeta;
use feedfuse::harness::results::{write_table, RESULTS_HEADER};
use feedfuse::harness::{
    compute_aggregate, load_checkpoint, pooled_mcnemar, read_results, render_report, run_grid_with,
    save_checkpoint, train_cell, CellKey, Execution, ExperimentConfig, ModelSpec, ReportFormat,
    ResultRow,
};
use feedfuse::ingest::{load_manifest, write_manifest, ManifestWriteOptions};
use feedfuse::strategies::{Strategy, TaskData};
use feedfuse::{Dimension, Modality, TranscriptSource};

#[derive(Parser)]
#[command(
    name = "feedfuse",
    version,
    about = "Multimodal feedback classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Analytic,
    Structural,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as a manifest.
    GenData {
        #[arg(long, value_enum, default_value = "analytic")]
        mode: Mode,
        /// JSON synthetic spec; defaults to the built-in spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of instances (overrides the spec).
        #[arg(long)]
        n: Option<usize>,
        /// Output directory; the manifest is written to `<out>/manifest.jsonl`.
        #[arg(long)]
        out: PathBuf,
        /// Store frame stacks in side files instead of inline.
        #[arg(long)]
        frames_to_files: bool,
    },
    /// Train one grid cell, append its results row and save a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dimension: Dimension,
        #[arg(long)]
        model: ModelSpec,
        #[arg(long, default_value = "individual")]
        strategy: Strategy,
        /// Transcript source for text-based models.
        #[arg(long, default_value = "manual")]
        source: TranscriptSource,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (overrides `out.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on every instance of a manifest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the dimension the checkpoint was trained on.
        #[arg(long)]
        dimension: Option<Dimension>,
        /// Defaults to the source the checkpoint was trained on.
        #[arg(long)]
        source: Option<TranscriptSource>,
    },
    /// Compare two result sets: gain of B over A and a paired McNemar test.
    Compare {
        /// Baseline results directory or results.csv.
        a: PathBuf,
        /// Candidate results directory or results.csv.
        b: PathBuf,
    },
    /// Render the results grid from a results directory.
    Report {
        #[arg(long, default_value = ".")]
        results: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run, or resume, the full experiment grid.
    Grid {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `out.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run cells one at a time.
        #[arg(long)]
        sequential: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            mode,
            spec,
            seed,
            n,
            out,
            frames_to_files,
        } => gen_data(mode, spec.as_deref(), seed, n, &out, frames_to_files),
        Command::Train {
            config,
            dimension,
            model,
            strategy,
            source,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref(), out)?;
            let key = CellKey {
                dimension,
                model,
                strategy,
                source: model.uses_text().then_some(source),
                seed,
            };
            train(&mut cfg, key)
        }
        Command::Evaluate {
            checkpoint,
            data,
            dimension,
            source,
        } => evaluate(&checkpoint, &data, dimension, source),
        Command::Compare { a, b } => compare(&a, &b),
        Command::Report {
            results,
            format,
            out,
        } => report(&results, format, out.as_deref()),
        Command::Grid {
            config,
            out,
            sequential,
        } => {
            let cfg = load_config(config.as_deref(), out)?;
            grid(&cfg, sequential)
        }
    }
}

fn load_config(path: Option<&Path>, out: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    Ok(cfg)
}

fn gen_data(
    mode: Mode,
    spec: Option<&Path>,
    seed: u64,
    n: Option<usize>,
    out: &Path,
    frames_to_files: bool,
) -> Result<()> {
    let mut s: SyntheticSpec = match spec {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => default_spec(),
    };
    s.mode = match mode {
        Mode::Analytic => DataMode::Analytic,
        Mode::Structural => DataMode::Structural,
    };
    if let Some(n) = n {
        s.n_instances = n;
    }
    let records = sample_dataset(&s, seed)?;
    let path = out.join("manifest.jsonl");
    let opts = ManifestWriteOptions {
        frames_to_files,
        ..Default::default()
    };
    write_manifest(&path, &records, &opts)?;
    println!("wrote {} instances to {}", records.len(), path.display());
    Ok(())
}

fn train(cfg: &mut ExperimentConfig, key: CellKey) -> Result<()> {
    if !key.model.supports(key.strategy) {
        bail!(
            "model `{}` cannot be trained with strategy `{}`",
            key.model,
            key.strategy
        );
    }
    let records = cfg.load_records()?;
    let run = train_cell(cfg, &records, &key)?;
    let out = &cfg.out_dir;
    let preds = out.join("preds");
    fs::create_dir_all(&preds).with_context(|| format!("creating {}", preds.display()))?;
    run.preds.save(&preds)?;

    let results = out.join("results.csv");
    let mut rows: Vec<ResultRow> = read_results(&results)?
        .into_iter()
        .filter(|r| r.key != key)
        .collect();
    rows.push(run.row.clone());
    rows.sort_by_key(|r| r.key);
    write_table(&results, RESULTS_HEADER, rows.iter().map(ResultRow::to_csv))?;
    println!("{RESULTS_HEADER}\n{}", run.row.to_csv());

    if let Some(model) = &run.model {
        let dir = out.join("checkpoints");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.ffck", key.file_stem()));
        let meta = CheckpointMeta::for_cell(cfg, &key, run.vocabulary.clone(), model);
        save_checkpoint(&path, &model.model, &meta)?;
        println!(
            "checkpoint: {} ({} parameters)",
            path.display(),
            model.model.param_count()
        );
    }
    Ok(())
}

fn evaluate(
    checkpoint: &Path,
    data: &Path,
    dimension: Option<Dimension>,
    source: Option<TranscriptSource>,
) -> Result<()> {
    let (model, meta) = load_checkpoint(checkpoint)?;
    let dimension = dimension
        .or(meta.cell.map(|c| c.dimension))
        .context("checkpoint has no dimension; pass --dimension")?;
    let uses_text = meta
        .architecture
        .encoders
        .iter()
        .any(|(m, _)| *m == Modality::Text);
    let source = uses_text.then(|| {
        source
            .or(meta.cell.and_then(|c| c.source))
            .unwrap_or(TranscriptSource::Manual)
    });
    let records = load_manifest(data)?;
    if records.is_empty() {
        bail!("{} holds no instances", data.display());
    }
    let task = TaskData::build_with(
        &records,
        &records,
        dimension,
        source,
        meta.architecture.vocabulary.as_ref(),
    )?;
    let scores = model.predict(&task.test)?;
    let m = RunMetrics::from_scores(scores, task.test.labels.clone())?;
    let summary = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "dimension": dimension.key(),
        "n": m.labels.len(),
        "auc": m.auc,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Results file and predictions directory for a directory or CSV path.
fn result_paths(p: &Path) -> (PathBuf, PathBuf) {
    if p.is_dir() {
        (p.join("results.csv"), p.join("preds"))
    } else {
        let dir = p.parent().unwrap_or(Path::new("."));
        (p.to_path_buf(), dir.join("preds"))
    }
}

fn compare(a: &Path, b: &Path) -> Result<()> {
    let (ra, pa) = result_paths(a);
    let (rb, pb) = result_paths(b);
    let (rows_a, rows_b) = (read_results(&ra)?, read_results(&rb)?);
    let group = |rows: &[ResultRow]| {
        let mut g: BTreeMap<String, Vec<ResultRow>> = BTreeMap::new();
        for r in rows {
            g.entry(r.key.group()).or_default().push(r.clone());
        }
        g
    };
    let (ga, gb) = (group(&rows_a), group(&rows_b));
    let shared: BTreeSet<&String> = ga.keys().filter(|k| gb.contains_key(*k)).collect();
    if shared.is_empty() {
        bail!("the two result sets have no (dimension, model, strategy, source) group in common");
    }
    println!("group,n_a,n_b,auc_a,auc_b,gain,mcnemar_b,mcnemar_c,p_value");
    for g in shared {
        let (xa, xb) = (&ga[g], &gb[g]);
        let mean = |v: &[ResultRow]| v.iter().map(|r| r.auc).sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(xa), mean(xb));
        let (ra, rb): (Vec<&ResultRow>, Vec<&ResultRow>) =
            (xa.iter().collect(), xb.iter().collect());
        let test = pooled_mcnemar(&pa, &ra, &pb, &rb)?;
        let (b, c, p) = match test {
            Some(t) => (
                t.b.to_string(),
                t.c.to_string(),
                format!("{:.4}", t.p_value),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        println!(
            "{g},{},{},{:.4},{:.4},{},{b},{c},{p}",
            xa.len(),
            xb.len(),
            ma,
            mb,
            format_gain(relative_gain(mb, ma))
        );
    }
    Ok(())
}

fn report(results: &Path, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let (csv, preds) = result_paths(results);
    let rows = read_results(&csv)?;
    if rows.is_empty() {
        bail!("{} holds no results", csv.display());
    }
    let agg = compute_aggregate(&rows, preds.is_dir().then_some(preds.as_path()))?;
    let (text, warnings) = render_report(&agg, format);
    for w in warnings {
        eprintln!("warning: {w}");
    }
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn grid(cfg: &ExperimentConfig, sequential: bool) -> Result<()> {
    let exec = if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let outcome = run_grid_with(cfg, exec)?;
    println!(
        "{} cells trained, {} already complete, {} failed; results in {}",
        outcome.executed,
        outcome.skipped,
        outcome.failures.len(),
        cfg.out_dir.display()
    );
    for f in &outcome.failures {
        eprintln!("failed: {}: {}", f.key.id(), f.error);
    }
    let (text, warnings) = render_report(&outcome.aggregate, ReportFormat::Markdown);
    for w in warnings {
        eprintln!("warning: {w}");
    }
    print!("{text}");
    Ok(())
}
