use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dpolab::harness::{self, ExperimentGrid, RunOptions, UniverseSource};
use dpolab::trainer::sft_fit;
use dpolab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dpolab",
    version,
    about = "Online DPO with Random and APL pair selection on synthetic universes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the universe of a config as universe.json
    Generate(Common),
    /// Fit the SFT policy and write sft_policy.json
    Sft(Common),
    /// Train and evaluate one cell (first selector and annotator)
    Train(Common),
    /// Run every selector x annotator x seed cell
    Sweep(Common),
    /// Aggregate run directories into summary, Welch and Pareto files
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Grid config (TOML); built-in defaults when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed: universe seed for `generate`, run seed for `train`
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    overwrite: bool,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

impl Common {
    fn grid(&self) -> Result<ExperimentGrid> {
        let mut grid = match &self.config {
            Some(path) => harness::parse_config(path)?,
            None => harness::parse_config_str("")?,
        };
        if let Some(out) = &self.out {
            grid.output_dir = out.clone();
        }
        Ok(grid)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            overwrite: self.overwrite,
            parallel: self.parallel,
        }
    }
}

fn refuse_existing(path: &std::path::Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::Config(format!(
            "{} already exists; pass --overwrite to replace it",
            path.display()
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let mut grid = args.grid()?;
            if let (Some(seed), UniverseSource::Inline(cfg)) = (args.seed, &mut grid.universe) {
                cfg.seed = seed;
            }
            let path = grid.output_dir.join("universe.json");
            refuse_existing(&path, args.overwrite)?;
            let u = grid.universe.load()?;
            std::fs::create_dir_all(&grid.output_dir).map_err(|e| Error::io(&grid.output_dir, e))?;
            std::fs::write(&path, u.to_json()?).map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
        }
        Command::Sft(args) => {
            let grid = args.grid()?;
            let path = grid.output_dir.join("sft_policy.json");
            refuse_existing(&path, args.overwrite)?;
            let u = grid.universe.load()?;
            let sft = sft_fit(&u, &grid.train)?;
            std::fs::create_dir_all(&grid.output_dir).map_err(|e| Error::io(&grid.output_dir, e))?;
            std::fs::write(&path, sft.to_json()?).map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
        }
        Command::Train(args) => {
            let grid = args.grid()?;
            let dir = harness::run_single(&grid, args.seed, &args.options())?;
            println!("{}", dir.display());
        }
        Command::Sweep(args) => {
            let grid = args.grid()?;
            for dir in harness::run_grid(&grid, &args.options())? {
                println!("{}", dir.display());
            }
        }
        Command::Report(args) => {
            let grid = args.grid()?;
            let dirs = harness::find_run_dirs(&grid.output_dir)?;
            let report = harness::aggregate_summary(&dirs)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            harness::write_report(&report, &grid.output_dir)?;
            print!("{}", harness::summary_markdown(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
