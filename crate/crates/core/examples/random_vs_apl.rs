//! A Random-vs-APL sweep through the harness: five seeds under the strong
//! judge, then the mean ± std table and Welch tests. Writes to a temporary
//! directory unless a path is given.

use std::path::PathBuf;

use dpolab::harness::{aggregate_summary, parse_config_str, run_grid, summary_markdown, write_report, RunOptions};

const CONFIG: &str = r#"
selectors = ["random", "apl"]
seeds = [42, 43, 44, 45, 46]

[universe]
num_train_prompts = 1024
misalignment_rho = 0.3
seed = 7

[train.dpo]
max_steps = 150
"#;

fn main() -> dpolab::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("dpolab-random-vs-apl-{}", std::process::id())));
    let mut grid = parse_config_str(CONFIG)?;
    grid.output_dir = out.clone();
    println!("{} runs into {}", grid.num_runs(), out.display());

    let dirs = run_grid(
        &grid,
        &RunOptions {
            overwrite: true,
            parallel: 4,
        },
    )?;
    let report = aggregate_summary(&dirs)?;
    write_report(&report, &out)?;
    print!("{}", summary_markdown(&report));
    Ok(())
}
