use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judges::JudgeSpec;
use crate::selection::Selector;
use crate::trainer::TrainConfig;
use crate::universe::{generate_universe, validate_universe, PromptUniverse, UniverseConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub win_rate_trials: usize,
    pub collapse_fraction: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            win_rate_trials: 10_000,
            collapse_fraction: 0.1,
        }
    }
}

/// On-disk form of a grid config (TOML).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GridFile {
    output_dir: PathBuf,
    universe_path: Option<PathBuf>,
    selectors: Vec<Selector>,
    seeds: Vec<u64>,
    universe: UniverseConfig,
    train: TrainConfig,
    eval: EvalSettings,
    annotators: Vec<JudgeSpec>,
    evaluators: Vec<JudgeSpec>,
}

impl Default for GridFile {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            universe_path: None,
            selectors: vec![Selector::Random, Selector::Apl],
            seeds: vec![42, 43, 44],
            universe: UniverseConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSettings::default(),
            annotators: vec![JudgeSpec::preset("strong").expect("preset")],
            evaluators: vec![JudgeSpec::preset("strong").expect("preset")],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UniverseSource {
    Inline(UniverseConfig),
    Path(PathBuf),
}

impl UniverseSource {
    pub fn load(&self) -> Result<PromptUniverse> {
        match self {
            UniverseSource::Inline(cfg) => generate_universe(cfg),
            UniverseSource::Path(path) => {
                let u = PromptUniverse::from_json(&super::read_file(path)?)?;
                let report = validate_universe(&u);
                match report.violations.first() {
                    None => Ok(u),
                    Some(v) => Err(Error::config(format!("universe {}: {v}", path.display()))),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentGrid {
    pub universe: UniverseSource,
    /// Template; selector, annotator and run seed are set per cell.
    pub train: TrainConfig,
    pub selectors: Vec<Selector>,
    pub annotators: Vec<JudgeSpec>,
    pub evaluators: Vec<JudgeSpec>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub eval: EvalSettings,
    /// Every setting after defaults were filled in.
    pub materialized: serde_json::Value,
    /// Dotted paths of settings the config file did not give.
    pub defaulted: Vec<String>,
}

impl ExperimentGrid {
    pub fn num_runs(&self) -> usize {
        self.selectors.len() * self.annotators.len() * self.seeds.len()
    }

    /// Grid echo written as `grid.json`.
    pub fn manifest_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "config": self.materialized,
            "defaulted": self.defaulted,
        }))?)
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentGrid> {
    let text = super::read_file(path)?;
    let mut grid = parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    // relative universe paths resolve against the config file
    if let UniverseSource::Path(p) = &grid.universe {
        if p.is_relative() {
            if let Some(dir) = path.parent() {
                grid.universe = UniverseSource::Path(dir.join(p));
            }
        }
    }
    Ok(grid)
}

/// Parses and validates a grid config; unknown keys are rejected.
pub fn parse_config_str(text: &str) -> Result<ExperimentGrid> {
    let raw: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    let file: GridFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;

    let at = |key: &str| match line_of_key(text, key) {
        Some(line) => format!(" (line {line})"),
        None => String::new(),
    };
    let nonempty = |name: &str, len: usize| {
        if len == 0 {
            Err(Error::config(format!("`{name}` must not be empty{}", at(name))))
        } else {
            Ok(())
        }
    };
    nonempty("selectors", file.selectors.len())?;
    nonempty("seeds", file.seeds.len())?;
    nonempty("annotators", file.annotators.len())?;
    nonempty("evaluators", file.evaluators.len())?;

    let mut seen = BTreeSet::new();
    for s in &file.seeds {
        if !seen.insert(*s) {
            return Err(Error::config(format!(
                "seed {s} listed twice in `seeds`{}",
                at("seeds")
            )));
        }
    }
    let mut seen = BTreeSet::new();
    for s in &file.selectors {
        if !seen.insert(*s) {
            return Err(Error::config(format!(
                "selector {} listed twice{}",
                s.name(),
                at("selectors")
            )));
        }
    }
    for (kind, judges) in [("annotators", &file.annotators), ("evaluators", &file.evaluators)] {
        let mut labels = BTreeSet::new();
        for j in judges {
            j.validate()
                .map_err(|e| Error::config(format!("{kind}: {e}{}", at(&format!("label = \"{}\"", j.label)))))?;
            if !labels.insert(j.label.as_str()) {
                return Err(Error::config(format!("{kind}: label '{}' used twice", j.label)));
            }
            if j.label.contains(['/', '\\']) || j.label.contains("__") {
                return Err(Error::config(format!(
                    "{kind}: label '{}' may not contain '/' or '__'",
                    j.label
                )));
            }
        }
    }
    if raw.contains_key("universe") && file.universe_path.is_some() {
        return Err(Error::config(format!(
            "give either [universe] or universe_path, not both{}",
            at("universe_path")
        )));
    }
    if file.universe_path.is_none() {
        file.universe
            .validate()
            .map_err(|e| Error::config(format!("{e}{}", at("[universe]"))))?;
    }
    file.train
        .validate()
        .map_err(|e| Error::config(format!("{e}{}", at("[train"))))?;
    if !(file.eval.win_rate_trials >= 1) {
        return Err(Error::config(format!(
            "eval.win_rate_trials must be >= 1{}",
            at("win_rate_trials")
        )));
    }
    if !(file.eval.collapse_fraction > 0.0 && file.eval.collapse_fraction < 1.0) {
        return Err(Error::config(format!(
            "eval.collapse_fraction must lie in (0, 1){}",
            at("collapse_fraction")
        )));
    }

    let materialized_toml = toml::Value::try_from(&file).map_err(|e| Error::config(e.to_string()))?;
    let mut given = BTreeSet::new();
    leaf_paths(&toml::Value::Table(raw.clone()), "", &mut given);
    let mut all = BTreeSet::new();
    leaf_paths(&materialized_toml, "", &mut all);
    let defaulted = all.difference(&given).cloned().collect();
    let materialized = serde_json::to_value(&file)?;

    Ok(ExperimentGrid {
        universe: match &file.universe_path {
            Some(p) => UniverseSource::Path(p.clone()),
            None => UniverseSource::Inline(file.universe.clone()),
        },
        train: file.train,
        selectors: file.selectors,
        annotators: file.annotators,
        evaluators: file.evaluators,
        seeds: file.seeds,
        output_dir: file.output_dir,
        eval: file.eval,
        materialized,
        defaulted,
    })
}

/// Dotted paths of all leaves; arrays of tables are indexed, other arrays
/// are leaves.
fn leaf_paths(value: &toml::Value, prefix: &str, out: &mut BTreeSet<String>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                leaf_paths(v, &join(k), out);
            }
        }
        toml::Value::Array(items) if !items.is_empty() && items.iter().all(toml::Value::is_table) => {
            for (i, v) in items.iter().enumerate() {
                leaf_paths(v, &format!("{prefix}[{i}]"), out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.trim_start().starts_with(key))
        .map(|i| i + 1)
}
