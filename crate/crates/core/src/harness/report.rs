//! Results grid rendering: one row per model, one column per dimension plus
//! the mean relative gain.

use std::fmt::Write as _;
use std::str::FromStr;

use super::config::ModelSpec;
use super::results::{Aggregate, AggregateEntry};
use crate::domain::{Dimension, Modality, TranscriptSource};
use crate::eval::format_gain;
use crate::fusion::FusionKind;
use crate::strategies::Strategy;

/// Significance level for the gain marker.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

struct Row {
    label: String,
    model: ModelSpec,
    strategy: Strategy,
    source: Option<TranscriptSource>,
}

const FUSION_ROWS: [(&str, ModelSpec, Strategy); 5] = [
    ("Best Voting", ModelSpec::BestVoting, Strategy::Individual),
    (
        "Joint-Ensemble",
        ModelSpec::Fusion(FusionKind::Ensemble),
        Strategy::Joint,
    ),
    (
        "Staged-Ensemble",
        ModelSpec::Fusion(FusionKind::Ensemble),
        Strategy::Staged,
    ),
    (
        "Joint-Feature",
        ModelSpec::Fusion(FusionKind::Feature),
        Strategy::Joint,
    ),
    (
        "Staged-Feature",
        ModelSpec::Fusion(FusionKind::Feature),
        Strategy::Staged,
    ),
];

fn source_label(s: TranscriptSource) -> &'static str {
    match s {
        TranscriptSource::Manual => "Manual",
        TranscriptSource::Asr => "ASR",
    }
}

fn layout(agg: &Aggregate) -> Vec<Row> {
    let mut sources: Vec<TranscriptSource> = agg.values().filter_map(|e| e.source).collect();
    sources.sort();
    sources.dedup();
    if sources.is_empty() {
        sources.push(TranscriptSource::Manual);
    }
    let mut rows = Vec::new();
    for s in [TranscriptSource::Manual, TranscriptSource::Asr] {
        rows.push(Row {
            label: format!("Text ({})", source_label(s)),
            model: ModelSpec::Single(Modality::Text),
            strategy: Strategy::Individual,
            source: Some(s),
        });
    }
    for (label, m) in [("Audio", Modality::Audio), ("Video", Modality::Video)] {
        rows.push(Row {
            label: label.into(),
            model: ModelSpec::Single(m),
            strategy: Strategy::Individual,
            source: None,
        });
    }
    let tag = sources.len() > 1;
    for &s in &sources {
        for (label, model, strategy) in FUSION_ROWS {
            rows.push(Row {
                label: if tag {
                    format!("{label} ({})", source_label(s))
                } else {
                    label.to_string()
                },
                model,
                strategy,
                source: Some(s),
            });
        }
    }
    rows
}

fn lookup<'a>(agg: &'a Aggregate, row: &Row, d: Dimension) -> Option<&'a AggregateEntry> {
    agg.values().find(|e| {
        e.dimension == d
            && e.model == row.model
            && e.strategy == row.strategy
            && e.source == row.source
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Render the results grid. Returns the text and any warnings, such as
/// fusion cells whose single-modality baselines are missing.
pub fn render_report(agg: &Aggregate, format: ReportFormat) -> (String, Vec<String>) {
    let rows = layout(agg);
    let mut warnings = Vec::new();
    let mut table: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["Model".to_string()];
    header.extend(Dimension::ALL.iter().map(|d| d.title().to_string()));
    header.push("Mean %".into());
    for row in &rows {
        let fusion = !matches!(row.model, ModelSpec::Single(_));
        let mut cells = vec![row.label.clone()];
        let mut gains = Vec::new();
        let mut gain_missing = false;
        for d in Dimension::ALL {
            let Some(e) = lookup(agg, row, d) else {
                cells.push("-".into());
                continue;
            };
            let mut cell = format!("{} ± {}", pct(e.auc.mean), pct(e.auc.std));
            if fusion {
                match e.gain_pct {
                    Some(g) => {
                        let star = if e.mcnemar.as_ref().is_some_and(|t| t.p_value < SIGNIFICANCE) {
                            "*"
                        } else {
                            ""
                        };
                        let _ = write!(cell, " ({}{star})", format_gain(g));
                        gains.push(g);
                    }
                    None => {
                        gain_missing = true;
                        warnings.push(format!(
                            "{} / {d}: no single-modality baseline, gain left blank",
                            row.label
                        ));
                    }
                }
            }
            cells.push(cell);
        }
        let mean = if fusion && !gains.is_empty() {
            if gain_missing || gains.len() < Dimension::ALL.len() {
                warnings.push(format!(
                    "{}: mean gain over {} of {} dimensions",
                    row.label,
                    gains.len(),
                    Dimension::ALL.len()
                ));
            }
            format_gain(gains.iter().sum::<f64>() / gains.len() as f64)
        } else {
            String::new()
        };
        cells.push(mean);
        table.push(cells);
    }
    let text = match format {
        ReportFormat::Markdown => {
            let mut s = String::new();
            let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
            s.push_str(&line(&header));
            s.push_str(&line(&vec!["---".to_string(); header.len()]));
            for r in &table {
                s.push_str(&line(r));
            }
            s
        }
        ReportFormat::Csv => {
            let mut s = String::new();
            for r in std::iter::once(&header).chain(&table) {
                let quoted: Vec<String> = r.iter().map(|c| csv_field(c)).collect();
                s.push_str(&quoted.join(","));
                s.push('\n');
            }
            s
        }
    };
    (text, warnings)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{aggregate, McNemarMethod, McNemarOutcome};
    use crate::harness::results::{compute_aggregate, CellKey, ResultRow};

    fn row(d: Dimension, model: ModelSpec, strategy: Strategy, seed: u64, auc: f64) -> ResultRow {
        let source = model.uses_text().then_some(TranscriptSource::Manual);
        ResultRow {
            key: CellKey {
                dimension: d,
                model,
                strategy,
                source,
                seed,
            },
            auc,
            precision: 0.5,
            recall: 0.5,
            f1: 0.5,
            runtime_s: 0.0,
        }
    }

    fn full_rows() -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for (i, d) in Dimension::ALL.into_iter().enumerate() {
            let base = 0.6 + 0.02 * i as f64;
            rows.push(row(
                d,
                ModelSpec::Single(Modality::Text),
                Strategy::Individual,
                0,
                base,
            ));
            rows.push(row(
                d,
                ModelSpec::Single(Modality::Audio),
                Strategy::Individual,
                0,
                base - 0.05,
            ));
            rows.push(row(
                d,
                ModelSpec::Single(Modality::Video),
                Strategy::Individual,
                0,
                base - 0.1,
            ));
            for (_, m, s) in FUSION_ROWS {
                rows.push(row(d, m, s, 0, base + 0.03));
            }
        }
        rows
    }

    #[test]
    fn markdown_has_nine_model_rows_and_a_header() {
        let agg = compute_aggregate(&full_rows(), None).unwrap();
        let (md, warnings) = render_report(&agg, ReportFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 2 + 9);
        assert!(lines[0].contains("Mean %"));
        assert!(lines[2].starts_with("| Text (Manual) |"));
        assert!(lines[3].starts_with("| Text (ASR) | - |"));
        assert!(lines[10].starts_with("| Staged-Feature |"));
        assert!(warnings.is_empty(), "{warnings:?}");
        let (csv, _) = render_report(&agg, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 1 + 9);
    }

    #[test]
    fn mean_column_averages_the_five_gains() {
        let agg = compute_aggregate(&full_rows(), None).unwrap();
        let (csv, _) = render_report(&agg, ReportFormat::Csv);
        let line = csv
            .lines()
            .find(|l| l.starts_with("Joint-Feature,"))
            .unwrap();
        let mean = line.rsplit(',').next().unwrap();
        let expected: f64 = (0..5)
            .map(|i| {
                let base = 0.6 + 0.02 * i as f64;
                100.0 * 0.03 / base
            })
            .sum::<f64>()
            / 5.0;
        assert_eq!(mean, format!("{expected:.1}%"));
    }

    #[test]
    fn marker_iff_p_below_threshold() {
        let mut agg = compute_aggregate(&full_rows(), None).unwrap();
        let outcome = |p| McNemarOutcome {
            b: 0,
            c: 0,
            statistic: 0.0,
            p_value: p,
            method: McNemarMethod::ExactBinomial,
        };
        for e in agg.values_mut() {
            if e.model == ModelSpec::BestVoting {
                e.mcnemar = Some(outcome(if e.dimension == Dimension::Praise {
                    0.049
                } else {
                    0.05
                }));
            }
        }
        let (md, _) = render_report(&agg, ReportFormat::Markdown);
        let bv = md.lines().find(|l| l.starts_with("| Best Voting")).unwrap();
        assert_eq!(bv.matches('*').count(), 1);
        let praise_col = 1 + Dimension::ALL
            .iter()
            .position(|d| *d == Dimension::Praise)
            .unwrap();
        let cells: Vec<&str> = bv.trim_matches('|').split('|').map(str::trim).collect();
        assert!(cells[praise_col].ends_with("*)"));
    }

    #[test]
    fn missing_baselines_leave_gains_blank() {
        let rows: Vec<ResultRow> = full_rows()
            .into_iter()
            .filter(|r| !matches!(r.key.model, ModelSpec::Single(_)))
            .collect();
        let agg = compute_aggregate(&rows, None).unwrap();
        let (csv, warnings) = render_report(&agg, ReportFormat::Csv);
        assert!(!warnings.is_empty());
        assert!(!csv.contains('%') || csv.lines().skip(1).all(|l| !l.contains('%')));
        let line = csv
            .lines()
            .find(|l| l.starts_with("Joint-Ensemble,"))
            .unwrap();
        assert!(line.ends_with(','));
    }

    #[test]
    fn std_is_rendered_in_points() {
        let mut rows = full_rows();
        rows.push(row(
            Dimension::Anatomic,
            ModelSpec::Single(Modality::Audio),
            Strategy::Individual,
            1,
            0.65,
        ));
        let agg = compute_aggregate(&rows, None).unwrap();
        let (md, _) = render_report(&agg, ReportFormat::Markdown);
        let sd = aggregate(&[0.55, 0.65]).unwrap().std;
        let audio = md.lines().find(|l| l.starts_with("| Audio")).unwrap();
        assert!(audio.contains(&format!("60.0 ± {}", pct(sd))), "{audio}");
    }
}
