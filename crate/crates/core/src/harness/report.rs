use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{EvalRow, RunManifest};
use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::selection::{Selector, REFERENCE_WALLCLOCK_RATIO};
use crate::stats::{mean, sample_std, welch_test, WelchOutcome};

pub const PARETO_HEADER: &str = "run_id,selector,annotator,evaluator,seed,win_rate,delta_acc_pp,collapse_flag";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub selector: Selector,
    pub annotator: String,
    pub evaluator: String,
    pub n_seeds: usize,
    pub win_rate_mean: f64,
    pub win_rate_std: f64,
    pub delta_acc_mean: f64,
    pub delta_acc_std: f64,
    pub collapse_runs: usize,
    pub extra_scoring_ops_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchRecord {
    pub annotator: String,
    pub evaluator: String,
    pub metric: String,
    pub random_mean: f64,
    pub apl_mean: f64,
    pub n_random: usize,
    pub n_apl: usize,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p_value: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub run_id: String,
    pub selector: Selector,
    pub annotator: String,
    pub evaluator: String,
    pub seed: u64,
    pub win_rate: f64,
    pub delta_acc_pp: f64,
    pub collapse_flag: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<SummaryRow>,
    pub tests: Vec<WelchRecord>,
    pub pareto: Vec<ParetoRow>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn row(&self, selector: Selector, annotator: &str, evaluator: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.selector == selector && r.annotator == annotator && r.evaluator == evaluator)
    }
}

/// Run directories (those holding a `manifest.json`) directly under `dir`,
/// in name order.
pub fn find_run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.join("manifest.json").is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

struct RunRecord {
    manifest: RunManifest,
    evals: Vec<EvalRow>,
}

fn load_run(dir: &Path) -> Result<RunRecord> {
    let manifest: RunManifest = serde_json::from_str(&read_file(&dir.join("manifest.json"))?)?;
    let eval_path = dir.join("eval.csv");
    let text = read_file(&eval_path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let evals = reader.deserialize().collect::<std::result::Result<Vec<EvalRow>, _>>()?;
    Ok(RunRecord { manifest, evals })
}

type CellKey = (String, String, String);
type Metric = (&'static str, fn(&SeedValues) -> f64);

const METRICS: [Metric; 2] = [("win_rate", |r| r.win_rate), ("delta_acc_pp", |r| r.delta_acc_pp)];

struct SeedValues {
    win_rate: f64,
    delta_acc_pp: f64,
    collapsed: bool,
    extra_scoring_ops: f64,
}

pub fn aggregate_summary(run_dirs: &[PathBuf]) -> Result<Report> {
    let mut report = Report::default();
    // (selector name, annotator, evaluator) -> per-seed records
    let mut cells: BTreeMap<CellKey, Vec<SeedValues>> = BTreeMap::new();
    let mut selectors: BTreeMap<String, Selector> = BTreeMap::new();

    for dir in run_dirs {
        let run = match load_run(dir) {
            Ok(run) => run,
            Err(e) => {
                report.warnings.push(format!("skipping {}: {e}", dir.display()));
                continue;
            }
        };
        if run.evals.is_empty() {
            report
                .warnings
                .push(format!("skipping {}: no eval rows", dir.display()));
            continue;
        }
        let m = &run.manifest;
        selectors.insert(m.selector.name().to_string(), m.selector);
        for e in &run.evals {
            let collapsed = e.collapse_flag || m.aborted;
            cells
                .entry((
                    m.selector.name().to_string(),
                    m.annotator.clone(),
                    e.evaluator_label.clone(),
                ))
                .or_default()
                .push(SeedValues {
                    win_rate: e.win_rate,
                    delta_acc_pp: e.delta_acc_pp,
                    collapsed,
                    extra_scoring_ops: m.extra_scoring_ops_per_iteration,
                });
            report.pareto.push(ParetoRow {
                run_id: m.run_id.clone(),
                selector: m.selector,
                annotator: m.annotator.clone(),
                evaluator: e.evaluator_label.clone(),
                seed: m.seed,
                win_rate: e.win_rate,
                delta_acc_pp: e.delta_acc_pp,
                collapse_flag: collapsed,
            });
        }
    }

    for ((selector, annotator, evaluator), runs) in &cells {
        let wins: Vec<f64> = runs.iter().map(|r| r.win_rate).collect();
        let deltas: Vec<f64> = runs.iter().map(|r| r.delta_acc_pp).collect();
        let ops: Vec<f64> = runs.iter().map(|r| r.extra_scoring_ops).collect();
        if runs.len() == 1 {
            report.warnings.push(format!(
                "{selector}/{annotator}/{evaluator}: single seed, std reported as 0"
            ));
        }
        report.rows.push(SummaryRow {
            selector: selectors[selector],
            annotator: annotator.clone(),
            evaluator: evaluator.clone(),
            n_seeds: runs.len(),
            win_rate_mean: mean(&wins),
            win_rate_std: sample_std(&wins),
            delta_acc_mean: mean(&deltas),
            delta_acc_std: sample_std(&deltas),
            collapse_runs: runs.iter().filter(|r| r.collapsed).count(),
            extra_scoring_ops_mean: mean(&ops),
        });
    }

    let pairs: BTreeMap<(String, String), ()> = cells.keys().map(|(_, a, e)| ((a.clone(), e.clone()), ())).collect();
    for (annotator, evaluator) in pairs.keys() {
        let get = |s: &str| cells.get(&(s.to_string(), annotator.clone(), evaluator.clone()));
        let (Some(random), Some(apl)) = (get("random"), get("apl")) else {
            report.warnings.push(format!(
                "{annotator}/{evaluator}: Random and APL not both present, no test"
            ));
            continue;
        };
        for (metric, pick) in METRICS {
            let a: Vec<f64> = random.iter().map(pick).collect();
            let b: Vec<f64> = apl.iter().map(pick).collect();
            let outcome = welch_test(&a, &b);
            let (t, df, p_value, status) = match outcome {
                WelchOutcome::Ok { t, df, p_value } => (Some(t), Some(df), Some(p_value), "ok"),
                WelchOutcome::Degenerate => (None, None, None, "degenerate"),
            };
            report.tests.push(WelchRecord {
                annotator: annotator.clone(),
                evaluator: evaluator.clone(),
                metric: metric.to_string(),
                random_mean: mean(&a),
                apl_mean: mean(&b),
                n_random: a.len(),
                n_apl: b.len(),
                t,
                df,
                p_value,
                status: status.to_string(),
            });
        }
    }

    report.pareto.sort_by(|a, b| {
        (a.selector.name(), &a.annotator, a.seed, &a.evaluator).cmp(&(
            b.selector.name(),
            &b.annotator,
            b.seed,
            &b.evaluator,
        ))
    });
    Ok(report)
}

fn to_csv<T: Serialize>(rows: &[T], header: Option<&str>) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(header.is_none())
        .from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Plot-ready capability-vs-win-rate data, one row per run and evaluator,
/// columns as in [`PARETO_HEADER`], sorted by (selector, annotator, seed).
pub fn emit_pareto(report: &Report, path: &Path) -> Result<()> {
    write_file(path, to_csv(&report.pareto, Some(PARETO_HEADER))?)
}

fn pm(mean: f64, std: f64, digits: usize) -> String {
    format!("{mean:.digits$} ± {std:.digits$}")
}

/// Markdown table in the mean ± std layout, followed by the Welch tests and
/// the overhead comparison.
pub fn summary_markdown(report: &Report) -> String {
    let mut md = String::new();
    md.push_str(
        "| Annotator | Evaluator | Method | Seeds | Win-rate | Δacc (pp) | Collapsed runs | Scoring evals / iter |\n",
    );
    md.push_str("|---|---|---|---|---|---|---|---|\n");
    let mut rows: Vec<&SummaryRow> = report.rows.iter().collect();
    rows.sort_by(|a, b| {
        (&a.annotator, &a.evaluator, b.selector.name()).cmp(&(&b.annotator, &b.evaluator, a.selector.name()))
    });
    for r in rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} | {:.1} |",
            r.annotator,
            r.evaluator,
            r.selector.name().to_uppercase(),
            r.n_seeds,
            pm(r.win_rate_mean, r.win_rate_std, 3),
            pm(r.delta_acc_mean, r.delta_acc_std, 2),
            r.collapse_runs,
            r.extra_scoring_ops_mean
        );
    }
    md.push_str("\nWelch two-sample t-test (unequal variances), Random vs APL:\n\n");
    md.push_str("| Annotator | Evaluator | Metric | Random | APL | t | p-value |\n|---|---|---|---|---|---|---|\n");
    for t in &report.tests {
        let (ts, ps) = match (t.t, t.p_value) {
            (Some(tv), Some(p)) => (format!("{tv:.3}"), format!("{p:.4}")),
            _ => ("-".to_string(), "degenerate".to_string()),
        };
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.4} | {:.4} | {} | {} |",
            t.annotator, t.evaluator, t.metric, t.random_mean, t.apl_mean, ts, ps
        );
    }
    let apl_ops: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| r.selector == Selector::Apl)
        .map(|r| r.extra_scoring_ops_mean)
        .collect();
    if !apl_ops.is_empty() {
        let _ = writeln!(
            md,
            "\nOverhead: APL spends {:.1} extra policy/reference log-prob evaluations per iteration over Random \
             (operation counts only; the LLM-scale wall-clock ratio of x{REFERENCE_WALLCLOCK_RATIO} is a reference, not reproduced).",
            mean(&apl_ops)
        );
    }
    md
}

/// Writes `summary.csv`, `welch.csv`, `pareto.csv` and `summary.md`.
pub fn write_report(report: &Report, out_dir: &Path) -> Result<()> {
    write_file(&out_dir.join("summary.csv"), to_csv(&report.rows, None)?)?;
    write_file(&out_dir.join("welch.csv"), to_csv(&report.tests, None)?)?;
    emit_pareto(report, &out_dir.join("pareto.csv"))?;
    write_file(&out_dir.join("summary.md"), summary_markdown(report))?;
    Ok(())
}
