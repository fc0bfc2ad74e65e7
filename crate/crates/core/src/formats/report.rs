//! Line-delimited JSON reports. Each line is one record tagged by `kind`:
//! a named metric, one domain's accuracy, or one recording's decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalReport, RecordingResult};
use crate::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReportLine {
    Metric {
        name: String,
        value: Option<f64>,
    },
    Domain {
        domain: String,
        n: usize,
        correct: usize,
        accuracy: f64,
    },
    Recording {
        id: String,
        domain: String,
        truth: Label,
        predicted: Label,
        p_abnormal: f64,
    },
}

pub fn lines(report: &EvalReport) -> Vec<ReportLine> {
    let mut out: Vec<ReportLine> = report
        .metric_values()
        .into_iter()
        .map(|(name, value)| ReportLine::Metric {
            name: name.to_string(),
            value,
        })
        .collect();
    out.extend(report.domains.per_domain.iter().map(|(d, a)| ReportLine::Domain {
        domain: d.clone(),
        n: a.total,
        correct: a.correct,
        accuracy: a.accuracy,
    }));
    out.extend(report.records.iter().map(|r| ReportLine::Recording {
        id: r.id.clone(),
        domain: r.domain.clone(),
        truth: r.truth,
        predicted: r.predicted,
        p_abnormal: r.p_abnormal,
    }));
    out
}

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("plain records serialize"));
        s.push('\n');
    }
    s
}

pub fn encode(report: &EvalReport) -> String {
    to_jsonl(&lines(report))
}

pub fn parse_lines(text: &str) -> Result<Vec<ReportLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format("report", format!("line {}: {e}", i + 1))))
        .collect()
}

/// Per-recording decisions from a report; other lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<RecordingResult>> {
    let mut out = Vec::new();
    for line in parse_lines(text)? {
        if let ReportLine::Recording {
            id,
            domain,
            truth,
            predicted,
            p_abnormal,
        } = line
        {
            if !(0.0..=1.0).contains(&p_abnormal) {
                return Err(Error::format(
                    "report",
                    format!("recording {id}: p_abnormal {p_abnormal}"),
                ));
            }
            out.push(RecordingResult {
                id,
                domain,
                truth,
                predicted,
                p_abnormal,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::format("report", "no recording lines"));
    }
    Ok(out)
}
