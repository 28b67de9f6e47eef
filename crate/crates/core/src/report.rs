//! Rendering condition reports as markdown, CSV or JSON, and rebuilding
//! reports from a directory of transcripts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::condition::ConditionCode;
use crate::error::{Error, Result};
use crate::metrics::ConditionReport;
use crate::runner::condition_report;
use crate::transcript::Transcript;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format `{other}`; expected md, csv or json"
            ))),
        }
    }
}

const NA: &str = "N/A";

fn opt(value: Option<f64>, decimals: usize) -> String {
    value.map_or_else(|| NA.to_string(), |v| format!("{v:.decimals$}"))
}

pub fn render_report(reports: &[ConditionReport], format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Markdown => render_markdown(reports),
        ReportFormat::Csv => render_csv(reports),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports)?;
            s.push('\n');
            s
        }
    })
}

/// A summary table (DL/TP/FR), an extended table with standard deviations
/// and secondary metrics, and an API cost table when any condition used a
/// chat model.
fn render_markdown(reports: &[ConditionReport]) -> String {
    let mut out = String::new();
    out.push_str("| Condition | DL | TP | FR |\n|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {:.3} | {:.3} | {:.3} |",
            r.condition, r.deadlock_rate, r.throughput_mean, r.fairness_mean
        );
    }

    out.push_str("\n| Condition | DL | TP (std) | FR (std) | TTD | SC | MAC |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {:.3} | {:.3} ({:.3}) | {:.3} ({:.3}) | {} | {:.2} | {} |",
            r.condition,
            r.deadlock_rate,
            r.throughput_mean,
            r.throughput_std,
            r.fairness_mean,
            r.fairness_std,
            opt(r.time_to_deadlock, 1),
            r.starvation_mean,
            opt(r.message_action_consistency, 1),
        );
    }

    let costs: Vec<_> = reports
        .iter()
        .filter_map(|r| r.accounting.map(|a| (r, a)))
        .collect();
    if !costs.is_empty() {
        out.push_str(
            "\n| Condition | Avg Latency (ms) | Total Tokens | LLM Calls | Parse Failures |\n",
        );
        out.push_str("|---|---|---|---|---|\n");
        for (r, a) in costs {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                r.condition,
                opt(a.avg_latency_ms(), 0),
                a.total_tokens,
                a.calls,
                a.parse_failures
            );
        }
    }

    let zero: Vec<_> = reports
        .iter()
        .filter(|r| r.fairness_zero_total_episodes > 0)
        .collect();
    if !zero.is_empty() {
        out.push('\n');
        for r in zero {
            let _ = writeln!(
                out,
                "Note: {}: {} of {} episodes had zero meals; their fairness counts as 1.0.",
                r.condition, r.fairness_zero_total_episodes, r.episodes
            );
        }
    }
    out
}

fn render_csv(reports: &[ConditionReport]) -> String {
    let mut out = String::from(
        "condition,episodes,dl,tp,tp_std,fr,fr_std,fr_zero_total_episodes,ttd,sc,mac,\
         llm_calls,total_tokens,avg_latency_ms,parse_failures\n",
    );
    let cell = |v: Option<String>| v.unwrap_or_else(|| NA.to_string());
    for r in reports {
        let a = r.accounting;
        let _ = writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{},{:.2},{},{},{},{},{}",
            r.condition,
            r.episodes,
            r.deadlock_rate,
            r.throughput_mean,
            r.throughput_std,
            r.fairness_mean,
            r.fairness_std,
            r.fairness_zero_total_episodes,
            opt(r.time_to_deadlock, 1),
            r.starvation_mean,
            opt(r.message_action_consistency, 1),
            cell(a.map(|a| a.calls.to_string())),
            cell(a.map(|a| a.total_tokens.to_string())),
            cell(
                a.and_then(|a| a.avg_latency_ms())
                    .map(|l| format!("{l:.0}"))
            ),
            cell(a.map(|a| a.parse_failures.to_string())),
        );
    }
    out
}

fn episode_index(path: &Path) -> Option<u32> {
    path.file_name()?
        .to_str()?
        .strip_prefix("ep")?
        .strip_suffix(".jsonl")?
        .parse()
        .ok()
}

/// Rebuilds one condition's report from its `ep<k>.jsonl` files. Aborted
/// episodes are skipped.
pub fn load_condition_dir(dir: &Path) -> Result<Option<ConditionReport>> {
    let mut files: Vec<(u32, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| episode_index(&p).map(|i| (i, p)))
        .collect();
    files.sort();

    let mut code: Option<ConditionCode> = None;
    let mut results = Vec::new();
    let mut transcripts = Vec::new();
    for (_, path) in files {
        let t = Transcript::read(&path)?;
        let header = t.header().ok_or_else(|| Error::Transcript {
            path: path.clone(),
            detail: "missing header".into(),
        })?;
        match code {
            Some(c) if c != header.condition => {
                return Err(Error::Transcript {
                    path,
                    detail: format!("condition {} mixed into {c} directory", header.condition),
                })
            }
            _ => code = Some(header.condition),
        }
        if let Some(r) = t.result() {
            results.push(r.clone());
            transcripts.push(t);
        }
    }
    match code {
        Some(c) if !results.is_empty() => Ok(Some(condition_report(&c, &results, &transcripts)?)),
        _ => Ok(None),
    }
}

/// Reports for every condition directory under `root`, in standard order.
pub fn collect_reports(root: &Path) -> Result<Vec<ConditionReport>> {
    let mut reports = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() {
            if let Some(r) = load_condition_dir(&path)? {
                reports.push(r);
            }
        }
    }
    reports.sort_by_key(|r| {
        r.condition
            .parse::<ConditionCode>()
            .map(|c| c.sort_key())
            .unwrap_or((usize::MAX, r.condition.clone()))
    });
    Ok(reports)
}

/// Writes `<root>/report.<ext>` and returns its path and contents.
pub fn write_report(root: &Path, format: ReportFormat) -> Result<(PathBuf, String)> {
    let text = render_report(&collect_reports(root)?, format)?;
    let path = root.join(format!("report.{}", format.extension()));
    fs::write(&path, &text)?;
    Ok((path, text))
}
