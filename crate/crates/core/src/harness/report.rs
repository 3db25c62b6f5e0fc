use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bench::{BenchmarkResult, Estimand, Method};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
    Plotdata,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Plotdata];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "results.json",
            ReportFormat::Csv => "results.csv",
            ReportFormat::Plotdata => "plotdata.json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::Plotdata),
            _ => Err(Error::input(format!("unknown report format '{s}'"))),
        }
    }
}

/// Estimates per `(method, size)` plus the truth, for external box plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub estimand: Estimand,
    pub truth: f64,
    pub series: Vec<PlotSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub method: Method,
    pub size: usize,
    pub estimates: Vec<f64>,
}

pub fn plot_data(result: &BenchmarkResult) -> PlotData {
    PlotData {
        estimand: result.config.estimand,
        truth: result.truth,
        series: result
            .cells
            .iter()
            .map(|c| PlotSeries {
                method: c.method,
                size: c.size,
                estimates: c.estimates(),
            })
            .collect(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |v| v.to_string())
}

/// `"mae (se)"` with two decimals.
pub fn summary_cell(mae: Option<f64>, se: Option<f64>) -> String {
    let two = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |v| format!("{v:.2}"));
    format!("{} ({})", two(mae), two(se))
}

/// One row per method, one formatted column per size, then raw MAE, SE and
/// failure counts per size.
pub fn csv_table(result: &BenchmarkResult) -> Result<String> {
    let mut sizes: Vec<usize> = result.cells.iter().map(|c| c.size).collect();
    sizes.dedup();
    let mut methods: Vec<Method> = Vec::new();
    for c in &result.cells {
        if !methods.contains(&c.method) {
            methods.push(c.method);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_owned()];
    header.extend(sizes.iter().map(|n| format!("n={n}")));
    for n in &sizes {
        header.push(format!("mae_{n}"));
        header.push(format!("se_{n}"));
        header.push(format!("failures_{n}"));
    }
    w.write_record(&header)?;
    for m in methods {
        let mut row = vec![m.name().to_owned()];
        let cells: Vec<_> = sizes.iter().map(|&n| result.cell(m, n)).collect();
        for c in &cells {
            row.push(c.map_or_else(String::new, |c| summary_cell(c.summary.mae, c.summary.se)));
        }
        for c in &cells {
            match c {
                Some(c) => {
                    row.push(fmt_opt(c.summary.mae));
                    row.push(fmt_opt(c.summary.se));
                    row.push(c.summary.failures.to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::input(e.to_string()))
}

pub fn render(result: &BenchmarkResult, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(result)?,
        ReportFormat::Csv => csv_table(result)?,
        ReportFormat::Plotdata => serde_json::to_string_pretty(&plot_data(result))?,
    })
}

/// Writes one format to `path`.
pub fn emit_report(result: &BenchmarkResult, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render(result, format)?)?;
    Ok(())
}

pub fn load_result(path: impl AsRef<Path>) -> Result<BenchmarkResult> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_format() {
        assert_eq!(summary_cell(Some(0.349), Some(0.3312)), "0.35 (0.33)");
        assert_eq!(summary_cell(Some(1.0), None), "1.00 (NA)");
    }

    #[test]
    fn format_names() {
        for f in ReportFormat::ALL {
            let name = serde_json::to_string(&f).unwrap();
            assert_eq!(name.trim_matches('"').parse::<ReportFormat>().unwrap(), f);
        }
    }
}
