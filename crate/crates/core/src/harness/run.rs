use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EvalSettings, ExperimentGrid};
use super::{sha256_hex, write_file};
use crate::error::{Error, Result};
use crate::eval::{capability_report, estimate_win_rate};
use crate::judges::{make_judge, JudgeSpec};
use crate::policy::Policy;
use crate::selection::{counters_report, CostReport, OpCounters, Selector};
use crate::streams::stream;
use crate::trainer::{run_online_dpo, sft_fit, RunResult, TrainConfig};
use crate::universe::PromptUniverse;

pub const EVAL_HEADER: &str =
    "run_id,selector,annotator_label,evaluator_label,seed,win_rate,ci_low,ci_high,probe_acc,delta_acc_pp,mean_entropy,collapse_flag";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub selector: Selector,
    pub annotator: JudgeSpec,
    pub seed: u64,
}

impl CellSpec {
    pub fn run_id(&self) -> String {
        format!("{}__{}__seed{}", self.selector.name(), self.annotator.label, self.seed)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub overwrite: bool,
    /// Worker threads; `0` or `1` runs cells one after another.
    pub parallel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub run_id: String,
    pub selector: Selector,
    pub annotator_label: String,
    pub evaluator_label: String,
    pub seed: u64,
    pub win_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub probe_acc: f64,
    pub delta_acc_pp: f64,
    pub mean_entropy: f64,
    pub collapse_flag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub selector: Selector,
    pub annotator: String,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub evaluators: Vec<JudgeSpec>,
    pub eval: EvalSettings,
    pub defaulted: Vec<String>,
    pub universe_hash: String,
    pub iterations_completed: usize,
    pub labeled_pairs: usize,
    pub counters: OpCounters,
    /// Scoring overhead against a Random run with the same generation and
    /// labelling counts.
    pub cost_vs_random: CostReport,
    pub extra_scoring_ops_per_iteration: f64,
    pub aborted: bool,
    pub shortfall_events: usize,
    pub degenerate_prompts: usize,
    /// SHA-256 over the train config, evaluators, eval settings, universe
    /// hash and seed.
    pub hash: String,
}

fn provenance_hash(
    cfg: &TrainConfig,
    evaluators: &[JudgeSpec],
    eval: &EvalSettings,
    universe_hash: &str,
    seed: u64,
) -> Result<String> {
    let body = serde_json::to_vec(&serde_json::json!({
        "config": cfg,
        "evaluators": evaluators,
        "eval": eval,
        "universe_hash": universe_hash,
        "seed": seed,
    }))?;
    Ok(sha256_hex(&body))
}

/// One eval row per evaluator for the final policy of `run`.
pub fn evaluate_run(
    u: &PromptUniverse,
    run: &RunResult,
    cell: &CellSpec,
    evaluators: &[JudgeSpec],
    settings: &EvalSettings,
) -> Result<Vec<EvalRow>> {
    let capability = capability_report(&run.final_policy, &run.sft_policy, u, settings.collapse_fraction)?;
    evaluators
        .iter()
        .map(|spec| {
            let mut judge = make_judge(&spec.clone().with_seed(spec.seed ^ cell.seed), u)?;
            let mut rng = stream(cell.seed, &format!("eval/{}", spec.label));
            let win = estimate_win_rate(
                &run.final_policy,
                &run.sft_policy,
                &mut judge,
                u,
                settings.win_rate_trials,
                &mut rng,
            )?;
            Ok(EvalRow {
                run_id: cell.run_id(),
                selector: cell.selector,
                annotator_label: cell.annotator.label.clone(),
                evaluator_label: spec.label.clone(),
                seed: cell.seed,
                win_rate: win.rate,
                ci_low: win.ci_low,
                ci_high: win.ci_high,
                probe_acc: capability.probe_accuracy,
                delta_acc_pp: capability.delta_vs_sft,
                mean_entropy: capability.mean_policy_entropy,
                collapse_flag: capability.collapse_flag,
            })
        })
        .collect()
}

fn eval_csv(rows: &[EvalRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Trains and evaluates one cell, writing its run directory under
/// `out_dir`. Collapsed runs are written like any other.
pub fn run_cell(
    u: &PromptUniverse,
    universe_hash: &str,
    sft: &Policy,
    grid: &ExperimentGrid,
    cell: &CellSpec,
    out_dir: &Path,
) -> Result<PathBuf> {
    let mut cfg = grid.train.clone();
    cfg.selector = cell.selector;
    cfg.annotator = cell.annotator.clone();
    cfg.run_seed = cell.seed;

    let run = run_online_dpo(u, sft, &cfg)?;
    let rows = evaluate_run(u, &run, cell, &grid.evaluators, &grid.eval)?;

    let iterations = run.per_iteration.len();
    let random_equivalent = OpCounters {
        policy_logprob_evals: 0,
        ref_logprob_evals: 0,
        ..run.counters
    };
    let manifest = RunManifest {
        run_id: cell.run_id(),
        selector: cell.selector,
        annotator: cell.annotator.label.clone(),
        seed: cell.seed,
        hash: provenance_hash(&cfg, &grid.evaluators, &grid.eval, universe_hash, cell.seed)?,
        train_config: cfg,
        evaluators: grid.evaluators.clone(),
        eval: grid.eval.clone(),
        defaulted: grid.defaulted.clone(),
        universe_hash: universe_hash.to_string(),
        iterations_completed: iterations,
        labeled_pairs: run.labeled_pairs(),
        counters: run.counters,
        cost_vs_random: counters_report(&run.counters, &random_equivalent),
        extra_scoring_ops_per_iteration: if iterations == 0 {
            0.0
        } else {
            run.counters.scoring_evals() as f64 / iterations as f64
        },
        aborted: run.aborted(),
        shortfall_events: run.shortfalls(),
        degenerate_prompts: run.degenerate_prompts(),
    };

    let dir = out_dir.join(cell.run_id());
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    write_file(&dir.join("metrics.csv"), run.metrics_csv()?)?;
    write_file(&dir.join("events.jsonl"), run.events_jsonl()?)?;
    write_file(&dir.join("eval.csv"), eval_csv(&rows)?)?;
    write_file(&dir.join("sft_policy.json"), run.sft_policy.to_json()?)?;
    write_file(&dir.join("final_policy.json"), run.final_policy.to_json()?)?;
    Ok(dir)
}

pub fn grid_cells(grid: &ExperimentGrid) -> Vec<CellSpec> {
    let mut cells = Vec::with_capacity(grid.num_runs());
    for &selector in &grid.selectors {
        for annotator in &grid.annotators {
            for &seed in &grid.seeds {
                cells.push(CellSpec {
                    selector,
                    annotator: annotator.clone(),
                    seed,
                });
            }
        }
    }
    cells
}

/// Runs every (selector, annotator, seed) cell into `grid.output_dir`.
///
/// Refuses to touch existing run directories unless `opts.overwrite`.
/// Runs sharing (annotator, seed) use the same prompt and generation
/// streams, so selectors are compared on paired candidate draws.
pub fn run_grid(grid: &ExperimentGrid, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    run_cells(grid, &grid_cells(grid), opts)
}

pub(crate) fn run_cells(grid: &ExperimentGrid, cells: &[CellSpec], opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = &grid.output_dir;
    if !opts.overwrite {
        if let Some(existing) = cells.iter().map(|c| out.join(c.run_id())).find(|d| d.exists()) {
            return Err(Error::config(format!(
                "run directory {} already exists; pass --overwrite to replace it",
                existing.display()
            )));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let universe = grid.universe.load()?;
    let universe_json = universe.to_json()?;
    let universe_hash = sha256_hex(universe_json.as_bytes());
    write_file(&out.join("universe.json"), &universe_json)?;
    write_file(&out.join("grid.json"), grid.manifest_json()?)?;

    let sft = sft_fit(&universe, &grid.train)?;
    let work = |cell: &CellSpec| run_cell(&universe, &universe_hash, &sft, grid, cell, out);
    if opts.parallel <= 1 {
        cells.iter().map(work).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallel)
            .build()
            .map_err(|e| Error::config(format!("cannot start {} workers: {e}", opts.parallel)))?;
        pool.install(|| cells.par_iter().map(work).collect())
    }
}

/// Runs only the cell for (first selector, first annotator, `seed`).
pub fn run_single(grid: &ExperimentGrid, seed: Option<u64>, opts: &RunOptions) -> Result<PathBuf> {
    let cell = CellSpec {
        selector: grid.selectors[0],
        annotator: grid.annotators[0].clone(),
        seed: seed.unwrap_or(grid.seeds[0]),
    };
    Ok(run_cells(grid, &[cell], opts)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_header_matches_row_fields() {
        let row = EvalRow {
            run_id: "r".into(),
            selector: Selector::Apl,
            annotator_label: "a".into(),
            evaluator_label: "e".into(),
            seed: 1,
            win_rate: 0.5,
            ci_low: 0.4,
            ci_high: 0.6,
            probe_acc: 0.9,
            delta_acc_pp: -1.5,
            mean_entropy: 1.0,
            collapse_flag: false,
        };
        let csv = eval_csv(&[row]).unwrap();
        assert_eq!(csv.lines().next().unwrap(), EVAL_HEADER);
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "r,apl,a,e,1,0.5,0.4,0.6,0.9,-1.5,1.0,false"
        );
    }
}
