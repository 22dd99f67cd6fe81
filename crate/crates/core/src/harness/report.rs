use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::run::{median, GridResult, ScenarioRun};
use super::scenario::{InformationValue, Scenario};
use crate::error::{Result, SddsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Csv,
}

/// Mean and max-min spread over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub spread: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        Self { mean, spread: max - min }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub id: String,
    pub information_value: InformationValue,
    pub runs: usize,
    pub accuracy: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    /// Early-stop epoch, the training-time proxy.
    pub stopped_epoch: Stat,
}

fn stat(runs: &[&ScenarioRun], f: impl Fn(&ScenarioRun) -> f64) -> Stat {
    Stat::of(&runs.iter().map(|r| f(r)).collect::<Vec<_>>())
}

/// One summary per scenario in E1..E8 order.
pub fn summarize(result: &GridResult) -> Vec<ScenarioSummary> {
    let mut ids: Vec<&str> = result.runs.iter().map(|r| r.id.as_str()).collect();
    ids.sort_by_key(|id| (Scenario::paper(id, vec![0]).map_or(usize::MAX, |s| s.order()), id.to_string()));
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            let runs: Vec<&ScenarioRun> = result.runs_of(id).collect();
            ScenarioSummary {
                id: id.to_string(),
                information_value: runs[0].information_value,
                runs: runs.len(),
                accuracy: stat(&runs, |r| r.metrics.accuracy),
                precision: stat(&runs, |r| r.metrics.precision),
                recall: stat(&runs, |r| r.metrics.recall),
                f1: stat(&runs, |r| r.metrics.f1),
                stopped_epoch: stat(&runs, |r| r.history.stopped_epoch as f64),
            }
        })
        .collect()
}

pub const CSV_HEADER: [&str; 11] = [
    "experiment",
    "group",
    "runs",
    "accuracy",
    "accuracy_spread",
    "precision",
    "precision_spread",
    "recall",
    "recall_spread",
    "f1",
    "f1_spread",
];

/// Renders the comparison table or CSV. Errors on an empty result.
pub fn report(result: &GridResult, format: ReportFormat) -> Result<String> {
    let rows = summarize(result);
    if rows.is_empty() {
        return Err(SddsError::Empty("nonempty results required".into()));
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for r in &rows {
                let mut rec = vec![r.id.clone(), r.information_value.to_string(), r.runs.to_string()];
                for s in [r.accuracy, r.precision, r.recall, r.f1] {
                    rec.push(s.mean.to_string());
                    rec.push(s.spread.to_string());
                }
                w.write_record(&rec)?;
            }
            let bytes = w.into_inner().map_err(|e| SddsError::Config(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("utf-8"))
        }
        ReportFormat::Table => {
            let cell = |s: Stat| format!("{:.3} ± {:.3}", s.mean, s.spread);
            let mut out = String::new();
            let header = format!(
                "{:<10} {:<15} {:<15} {:<15} {:<15} {:>9}",
                "Experiment", "Accuracy", "Precision", "Recall", "F1 score", "Stop ep."
            );
            let rule = "-".repeat(header.chars().count());
            writeln!(out, "{header}\n{rule}").unwrap();
            let mut group = rows[0].information_value;
            for r in &rows {
                if r.information_value != group {
                    writeln!(out, "{rule}").unwrap();
                    group = r.information_value;
                }
                writeln!(
                    out,
                    "{:<10} {:<15} {:<15} {:<15} {:<15} {:>9.1}",
                    r.id,
                    cell(r.accuracy),
                    cell(r.precision),
                    cell(r.recall),
                    cell(r.f1),
                    r.stopped_epoch.mean
                )
                .unwrap();
            }
            writeln!(out, "{rule}").unwrap();
            for line in hypotheses(&rows) {
                writeln!(out, "{line}").unwrap();
            }
            if !result.failures.is_empty() {
                writeln!(out, "failed:").unwrap();
                for f in &result.failures {
                    let seed = f.seed.map_or(String::new(), |s| format!(" seed {s}"));
                    writeln!(out, "  {}{seed}: {}", f.id, f.error).unwrap();
                }
            }
            Ok(out)
        }
    }
}

/// Parses the CSV produced by [`report`] back into `(id, [accuracy, precision, recall, f1] means)`.
pub fn parse_csv(text: &str) -> Result<Vec<(String, [f64; 4])>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| SddsError::Config(format!("bad csv field {i} in {rec:?}")))
        };
        out.push((rec[0].to_string(), [num(3)?, num(5)?, num(7)?, num(9)?]));
    }
    Ok(out)
}

fn find<'a>(rows: &'a [ScenarioSummary], id: &str) -> Option<&'a ScenarioSummary> {
    rows.iter().find(|r| r.id == id)
}

/// Plain-language checks of the two hypotheses on the summarized rows.
pub fn hypotheses(rows: &[ScenarioSummary]) -> Vec<String> {
    let mut out = Vec::new();
    if let (Some(b), Some(m), Some(s)) = (find(rows, "E2"), find(rows, "E6"), find(rows, "E8")) {
        let decreasing = b.f1.mean >= m.f1.mean && m.f1.mean >= s.f1.mean;
        out.push(format!(
            "information value: F1 binary {:.3}, multiclass {:.3}, segmentation {:.3}; decreasing with information value: {}",
            b.f1.mean,
            m.f1.mean,
            s.f1.mean,
            if decreasing { "yes" } else { "no" }
        ));
    }
    for (scratch, transfer) in [("E1", "E2"), ("E1", "E3"), ("E5", "E6"), ("E7", "E8")] {
        if let (Some(a), Some(b)) = (find(rows, scratch), find(rows, transfer)) {
            out.push(format!(
                "knowledge transfer {transfer} vs {scratch}: F1 {:+.3}, early-stop epoch {:+.1}; better and faster: {}",
                b.f1.mean - a.f1.mean,
                b.stopped_epoch.mean - a.stopped_epoch.mean,
                if b.f1.mean > a.f1.mean && b.stopped_epoch.mean <= a.stopped_epoch.mean { "yes" } else { "no" }
            ));
        }
    }
    out
}

/// Median focus ratio pooled over all seeds of `id`.
pub fn pooled_median_focus(result: &GridResult, id: &str) -> Option<f64> {
    let all: Vec<f64> = result.runs_of(id).flat_map(|r| r.focus_ratios.iter().cloned()).collect();
    median(&all)
}
