//! Experiment grids over selector × annotator × seed, run directories, and
//! the aggregate reports (mean ± std tables, Welch tests, Pareto data).
//!
//! Layout of an output directory after `sweep` and `report`:
//!
//! ```text
//! <out>/grid.json                   materialised config + defaulted keys
//! <out>/universe.json               the shared universe
//! <out>/<selector>__<annotator>__seed<seed>/
//!     manifest.json  metrics.csv  events.jsonl  eval.csv
//!     sft_policy.json  final_policy.json
//! <out>/summary.csv  welch.csv  pareto.csv  summary.md
//! ```

mod config;
mod report;
mod run;

pub use config::{parse_config, parse_config_str, EvalSettings, ExperimentGrid, UniverseSource};
pub use report::{
    aggregate_summary, emit_pareto, find_run_dirs, summary_markdown, write_report, ParetoRow, Report, SummaryRow,
    WelchRecord, PARETO_HEADER,
};
pub use run::{
    evaluate_run, grid_cells, run_cell, run_grid, run_single, CellSpec, EvalRow, RunManifest, RunOptions, EVAL_HEADER,
};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
