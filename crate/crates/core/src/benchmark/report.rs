//! Accuracy tables: one row per dataset, one column per strategy, the best
//! cell of each row marked.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{BenchmarkError, BenchmarkResult};
use crate::prompting::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Tab-separated; the best cell carries a trailing `*`.
    Tsv,
    /// Markdown table; the best cell is bold.
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(ReportFormat::Tsv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format {s:?} (expected tsv, markdown or json)")),
        }
    }
}

#[derive(Serialize)]
struct Cell {
    accuracy: f64,
    ci: (f64, f64),
    correct: usize,
    total: usize,
    errored: usize,
    best: bool,
}

#[derive(Serialize)]
struct Row {
    dataset: String,
    cells: BTreeMap<String, Cell>,
}

#[derive(Serialize)]
struct Table {
    strategies: Vec<&'static str>,
    rows: Vec<Row>,
}

fn table(results: &[BenchmarkResult]) -> Result<Table, BenchmarkError> {
    if results.is_empty() {
        return Err(BenchmarkError::Report("no results to report".into()));
    }
    let mut datasets: Vec<String> = Vec::new();
    let mut by_key: BTreeMap<(String, Strategy), &BenchmarkResult> = BTreeMap::new();
    for r in results {
        let key = (r.dataset.to_string(), r.strategy);
        if by_key.insert(key, r).is_some() {
            return Err(BenchmarkError::Report(format!("duplicate result for {} / {}", r.dataset, r.strategy.label())));
        }
        if !datasets.contains(&r.dataset.0) {
            datasets.push(r.dataset.to_string());
        }
    }
    let strategies: Vec<Strategy> = Strategy::ALL.into_iter().filter(|s| results.iter().any(|r| r.strategy == *s)).collect();
    let rows = datasets
        .into_iter()
        .map(|d| {
            let present: Vec<&BenchmarkResult> =
                strategies.iter().filter_map(|s| by_key.get(&(d.clone(), *s)).copied()).collect();
            let best = present.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
            let cells = present
                .into_iter()
                .map(|r| {
                    let cell = Cell {
                        accuracy: r.accuracy,
                        ci: r.ci,
                        correct: r.correct,
                        total: r.total,
                        errored: r.errored,
                        best: r.accuracy == best,
                    };
                    (r.strategy.label().to_string(), cell)
                })
                .collect();
            Row { dataset: d, cells }
        })
        .collect();
    Ok(Table { strategies: strategies.iter().map(|s| s.label()).collect(), rows })
}

/// Renders results as a dataset by strategy table. Each (dataset, strategy)
/// pair may appear once.
pub fn emit_report(results: &[BenchmarkResult], format: ReportFormat) -> Result<String, BenchmarkError> {
    let t = table(results)?;
    let cell = |row: &Row, s: &str, bold: (&str, &str)| match row.cells.get(s) {
        Some(c) if c.best => format!("{}{:.1}{}", bold.0, 100.0 * c.accuracy, bold.1),
        Some(c) => format!("{:.1}", 100.0 * c.accuracy),
        None => "-".into(),
    };
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(&t).expect("table serializes"),
        ReportFormat::Tsv => {
            let mut out = format!("dataset\t{}\n", t.strategies.join("\t"));
            for row in &t.rows {
                let cells: Vec<String> = t.strategies.iter().map(|s| cell(row, s, ("", "*"))).collect();
                out += &format!("{}\t{}\n", row.dataset, cells.join("\t"));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = format!("| Dataset | {} |\n|---|{}\n", t.strategies.join(" | "), "---|".repeat(t.strategies.len()));
            for row in &t.rows {
                let cells: Vec<String> = t.strategies.iter().map(|s| cell(row, s, ("**", "**"))).collect();
                out += &format!("| {} | {} |\n", row.dataset, cells.join(" | "));
            }
            out
        }
    })
}
