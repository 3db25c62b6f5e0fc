//! Data ingestion, the synthetic benchmark runner and result reports.

pub mod bench;
pub mod ingest;
pub mod report;

pub use bench::{
    run_benchmark, run_benchmark_with_progress, BenchmarkResult, CellResult, Condition, Estimand,
    Method, Progress, RepRecord, RunConfig, Summary,
};
pub use ingest::{
    ingest_csv, ingest_str, normalize_outcomes, read_headers, to_csv_string, write_csv, ColumnRole,
    ColumnSpec, Schema,
};
pub use report::{emit_report, load_result, plot_data, render, PlotData, PlotSeries, ReportFormat};
