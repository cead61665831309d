//! Synthetic preference environment.
//!
//! A universe holds a fixed pool of prompts, each with `V` candidate
//! responses described by feature rows `φ(x, y) ∈ R^d`. Two unit directions
//! shape it:
//!
//! * the probe direction `u`, which defines the latent true reward
//!   `r*(x, y) = true_reward_scale · ⟨u, φ(x, y)⟩ + c_x` (with a per-prompt
//!   offset `c_x`), and therefore the correct answer of every probe prompt;
//! * the proxy-bias direction `g`, placed at cosine exactly `ρ` from `u`,
//!   which misaligned judges reward instead of `r*`.
//!
//! Train prompts drive optimisation, eval prompts drive win-rate
//! estimation, probe prompts measure capability.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::streams::{stream, Stream};

/// Attempts at redrawing a probe prompt whose true-reward argmax is tied.
const MAX_TIE_REDRAWS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseConfig {
    pub num_train_prompts: usize,
    pub num_eval_prompts: usize,
    pub num_probe_prompts: usize,
    pub responses_per_prompt: usize,
    pub feature_dim: usize,
    pub feature_scale: f64,
    pub true_reward_scale: f64,
    pub misalignment_rho: f64,
    pub tabular_mode: bool,
    pub seed: u64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        Self {
            num_train_prompts: 2048,
            num_eval_prompts: 128,
            num_probe_prompts: 256,
            responses_per_prompt: 8,
            feature_dim: 32,
            feature_scale: 1.0,
            true_reward_scale: 1.0,
            misalignment_rho: 0.0,
            tabular_mode: false,
            seed: 0,
        }
    }
}

impl UniverseConfig {
    /// Tabular configuration: one-hot features, `d = prompts × V`.
    pub fn tabular(train: usize, eval: usize, probe: usize, responses: usize, seed: u64) -> Self {
        Self {
            num_train_prompts: train,
            num_eval_prompts: eval,
            num_probe_prompts: probe,
            responses_per_prompt: responses,
            feature_dim: (train + eval + probe) * responses,
            tabular_mode: true,
            seed,
            ..Self::default()
        }
    }

    pub fn total_prompts(&self) -> usize {
        self.num_train_prompts + self.num_eval_prompts + self.num_probe_prompts
    }

    /// Every violated bound, in declaration order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, value) in [
            ("num_train_prompts", self.num_train_prompts),
            ("num_eval_prompts", self.num_eval_prompts),
            ("num_probe_prompts", self.num_probe_prompts),
        ] {
            if value < 1 {
                out.push(format!("{name} must be >= 1 (got {value})"));
            }
        }
        if self.responses_per_prompt < 2 {
            out.push(format!(
                "responses_per_prompt must be >= 2 (got {})",
                self.responses_per_prompt
            ));
        }
        if self.feature_dim < 1 {
            out.push("feature_dim must be >= 1 (got 0)".to_string());
        }
        if !(self.feature_scale.is_finite() && self.feature_scale > 0.0) {
            out.push(format!(
                "feature_scale must be finite and > 0 (got {})",
                self.feature_scale
            ));
        }
        if !(self.true_reward_scale.is_finite() && self.true_reward_scale > 0.0) {
            out.push(format!(
                "true_reward_scale must be finite and > 0 (got {})",
                self.true_reward_scale
            ));
        }
        if self.misalignment_rho.is_nan() || self.misalignment_rho.abs() > 1.0 {
            out.push(format!(
                "misalignment_rho must lie in [-1, 1] (got {})",
                self.misalignment_rho
            ));
        } else if self.feature_dim == 1 && self.misalignment_rho.abs() < 1.0 {
            out.push("misalignment_rho strictly inside (-1, 1) needs feature_dim >= 2".to_string());
        }
        if self.tabular_mode {
            match self.total_prompts().checked_mul(self.responses_per_prompt) {
                Some(d) if d == self.feature_dim => {}
                Some(d) => out.push(format!(
                    "tabular_mode requires feature_dim = prompts x responses = {d} (got {})",
                    self.feature_dim
                )),
                None => out.push("tabular feature dimension overflows".to_string()),
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(first) => Err(Error::config(first)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Eval,
    Probe,
}

/// Feature rows of one prompt, `V × d`.
///
/// Tabular universes would need `V × (prompts·V)` dense entries per prompt,
/// so one-hot rows are stored by their base index instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Features {
    Dense(Vec<Vec<f64>>),
    OneHot {
        one_hot_base: usize,
        responses: usize,
        dim: usize,
    },
}

impl Features {
    pub fn num_responses(&self) -> usize {
        match self {
            Features::Dense(rows) => rows.len(),
            Features::OneHot { responses, .. } => *responses,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(rows) => rows.first().map_or(0, Vec::len),
            Features::OneHot { dim, .. } => *dim,
        }
    }

    /// `⟨v, φ(y)⟩`.
    pub fn dot_row(&self, y: usize, v: &[f64]) -> f64 {
        match self {
            Features::Dense(rows) => dot(&rows[y], v),
            Features::OneHot { one_hot_base, .. } => v[one_hot_base + y],
        }
    }

    /// `out += coef · φ(y)`.
    pub fn add_row_scaled(&self, y: usize, coef: f64, out: &mut [f64]) {
        match self {
            Features::Dense(rows) => {
                for (o, f) in out.iter_mut().zip(&rows[y]) {
                    *o += coef * f;
                }
            }
            Features::OneHot { one_hot_base, .. } => out[one_hot_base + y] += coef,
        }
    }

    pub fn row(&self, y: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.add_row_scaled(y, 1.0, &mut out);
        out
    }

    fn is_finite(&self) -> bool {
        match self {
            Features::Dense(rows) => rows.iter().flatten().all(|v| v.is_finite()),
            Features::OneHot { .. } => true,
        }
    }

    fn is_rectangular(&self, responses: usize, dim: usize) -> bool {
        match self {
            Features::Dense(rows) => rows.len() == responses && rows.iter().all(|r| r.len() == dim),
            Features::OneHot {
                one_hot_base,
                responses: v,
                dim: d,
            } => *v == responses && *d == dim && one_hot_base + v <= dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: usize,
    pub role: Role,
    pub features: Features,
    pub true_reward: Vec<f64>,
    pub correct_response: Option<usize>,
}

impl PromptRecord {
    pub fn num_responses(&self) -> usize {
        self.true_reward.len()
    }

    /// Highest true reward, ties to the lower index.
    pub fn best_response(&self) -> usize {
        argmax(&self.true_reward)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptUniverse {
    pub config: UniverseConfig,
    pub prompts: Vec<PromptRecord>,
    pub proxy_bias_direction: Vec<f64>,
    pub probe_direction: Vec<f64>,
}

impl PromptUniverse {
    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn responses(&self) -> usize {
        self.config.responses_per_prompt
    }

    pub fn prompt(&self, id: usize) -> Result<&PromptRecord> {
        self.prompts
            .get(id)
            .ok_or_else(|| Error::contract(format!("prompt id {id} out of range ({})", self.prompts.len())))
    }

    pub fn ids(&self, role: Role) -> Vec<usize> {
        self.prompts
            .iter()
            .filter(|p| p.role == role)
            .map(|p| p.prompt_id)
            .collect()
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &PromptRecord> {
        self.prompts.iter().filter(move |p| p.role == role)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Index layout of one-hot tabular features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TabularLayout {
    pub num_prompts: usize,
    pub responses: usize,
    pub dim: usize,
}

impl TabularLayout {
    /// Position of the single non-zero entry of `φ(prompt, y)`.
    pub fn index(&self, prompt: usize, y: usize) -> usize {
        prompt * self.responses + y
    }

    pub fn features(&self, prompt: usize) -> Features {
        Features::OneHot {
            one_hot_base: prompt * self.responses,
            responses: self.responses,
            dim: self.dim,
        }
    }
}

pub fn make_tabular_features(num_prompts: usize, responses: usize) -> Result<TabularLayout> {
    if num_prompts < 1 || responses < 1 {
        return Err(Error::config(format!(
            "tabular layout needs counts >= 1 (prompts={num_prompts}, responses={responses})"
        )));
    }
    let dim = num_prompts
        .checked_mul(responses)
        .ok_or_else(|| Error::config(format!("tabular dimension {num_prompts} x {responses} overflows")))?;
    Ok(TabularLayout {
        num_prompts,
        responses,
        dim,
    })
}

pub fn generate_universe(config: &UniverseConfig) -> Result<PromptUniverse> {
    config.validate()?;
    let mut rng = stream(config.seed, "universe");
    let d = config.feature_dim;
    let v = config.responses_per_prompt;

    let probe_direction = random_unit(&mut rng, d);
    let proxy_bias_direction = direction_at_cosine(&mut rng, &probe_direction, config.misalignment_rho);

    let layout = if config.tabular_mode {
        Some(make_tabular_features(config.total_prompts(), v)?)
    } else {
        None
    };

    let roles = std::iter::repeat_n(Role::Train, config.num_train_prompts)
        .chain(std::iter::repeat_n(Role::Eval, config.num_eval_prompts))
        .chain(std::iter::repeat_n(Role::Probe, config.num_probe_prompts));

    let mut prompts = Vec::with_capacity(config.total_prompts());
    for (prompt_id, role) in roles.enumerate() {
        let offset: f64 = rng.sample(StandardNormal);
        let mut attempts = 0;
        let record = loop {
            let features = match layout {
                Some(layout) => layout.features(prompt_id),
                None => Features::Dense(
                    (0..v)
                        .map(|_| {
                            (0..d)
                                .map(|_| config.feature_scale * rng.sample::<f64, _>(StandardNormal))
                                .collect()
                        })
                        .collect(),
                ),
            };
            let true_reward: Vec<f64> = (0..v)
                .map(|y| config.true_reward_scale * features.dot_row(y, &probe_direction) + offset)
                .collect();
            let mut record = PromptRecord {
                prompt_id,
                role,
                features,
                true_reward,
                correct_response: None,
            };
            if role != Role::Probe {
                break record;
            }
            if has_unique_max(&record.true_reward) {
                record.correct_response = Some(argmax(&record.true_reward));
                break record;
            }
            attempts += 1;
            if layout.is_some() || attempts >= MAX_TIE_REDRAWS {
                return Err(Error::config(format!(
                    "probe prompt {prompt_id}: could not draw responses with a unique best true reward"
                )));
            }
        };
        prompts.push(record);
    }

    Ok(PromptUniverse {
        config: config.clone(),
        prompts,
        proxy_bias_direction,
        probe_direction,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    ConfigBound,
    UnitNorm,
    Cosine,
    PromptIds,
    Roles,
    Shape,
    NonFinite,
    ProbeAnswer,
    ProbeTie,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            detail: detail.into(),
        });
    }
}

/// Checks every structural invariant of `u` without touching it.
pub fn validate_universe(u: &PromptUniverse) -> ValidationReport {
    let mut report = ValidationReport::default();
    let cfg = &u.config;
    for v in cfg.violations() {
        report.push(ViolationKind::ConfigBound, v);
    }
    let d = cfg.feature_dim;
    let responses = cfg.responses_per_prompt;

    for (name, dir) in [
        ("proxy_bias_direction", &u.proxy_bias_direction),
        ("probe_direction", &u.probe_direction),
    ] {
        if dir.len() != d {
            report.push(
                ViolationKind::Shape,
                format!("{name} has length {} (expected {d})", dir.len()),
            );
        } else if !dir.iter().all(|x| x.is_finite()) {
            report.push(ViolationKind::NonFinite, format!("{name} has non-finite entries"));
        } else if (norm(dir) - 1.0).abs() > 1e-9 {
            report.push(ViolationKind::UnitNorm, format!("{name} has norm {}", norm(dir)));
        }
    }
    if u.proxy_bias_direction.len() == d && u.probe_direction.len() == d {
        let cosine = dot(&u.proxy_bias_direction, &u.probe_direction);
        if (cosine - cfg.misalignment_rho).abs() > 1e-6 {
            report.push(
                ViolationKind::Cosine,
                format!("dot(g, u) = {cosine}, requested {}", cfg.misalignment_rho),
            );
        }
    }

    let mut role_counts = [0usize; 3];
    for (index, p) in u.prompts.iter().enumerate() {
        if p.prompt_id != index {
            report.push(
                ViolationKind::PromptIds,
                format!("position {index} holds prompt_id {}", p.prompt_id),
            );
        }
        role_counts[p.role as usize] += 1;
        if !p.features.is_rectangular(responses, d) || p.true_reward.len() != responses {
            report.push(
                ViolationKind::Shape,
                format!("prompt {} is not {responses} x {d}", p.prompt_id),
            );
            continue;
        }
        if !p.features.is_finite() || !p.true_reward.iter().all(|r| r.is_finite()) {
            report.push(
                ViolationKind::NonFinite,
                format!("prompt {} has non-finite values", p.prompt_id),
            );
            continue;
        }
        match (p.role, p.correct_response) {
            (Role::Probe, None) => report.push(
                ViolationKind::ProbeAnswer,
                format!("probe prompt {} lacks correct_response", p.prompt_id),
            ),
            (Role::Probe, Some(answer)) => {
                if !has_unique_max(&p.true_reward) {
                    report.push(
                        ViolationKind::ProbeTie,
                        format!("probe prompt {} has a tied best response", p.prompt_id),
                    );
                } else if answer != argmax(&p.true_reward) {
                    report.push(
                        ViolationKind::ProbeAnswer,
                        format!(
                            "probe prompt {}: correct_response {answer} is not the argmax",
                            p.prompt_id
                        ),
                    );
                }
            }
            (_, Some(_)) => report.push(
                ViolationKind::ProbeAnswer,
                format!("non-probe prompt {} carries a correct_response", p.prompt_id),
            ),
            (_, None) => {}
        }
    }
    let expected = [cfg.num_train_prompts, cfg.num_eval_prompts, cfg.num_probe_prompts];
    if role_counts != expected {
        report.push(
            ViolationKind::Roles,
            format!("role counts (train, eval, probe) = {role_counts:?}, expected {expected:?}"),
        );
    }
    report
}

/// Index of the largest value, ties to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn has_unique_max(values: &[f64]) -> bool {
    let best = values[argmax(values)];
    values.iter().filter(|v| **v == best).count() == 1
}

fn random_unit(rng: &mut Stream, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector with cosine exactly `rho` to the unit vector `u`, built by
/// Gram–Schmidt from a random draw.
fn direction_at_cosine(rng: &mut Stream, u: &[f64], rho: f64) -> Vec<f64> {
    if rho.abs() == 1.0 {
        return u.iter().map(|x| rho * x).collect();
    }
    let orth = loop {
        let mut w: Vec<f64> = (0..u.len()).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the residual projection at rounding level
        for _ in 0..2 {
            let proj = dot(&w, u);
            for (wi, ui) in w.iter_mut().zip(u) {
                *wi -= proj * ui;
            }
        }
        let n = norm(&w);
        if n > 1e-6 {
            break w.into_iter().map(|x| x / n).collect::<Vec<_>>();
        }
    };
    let side = (1.0 - rho * rho).sqrt();
    u.iter().zip(&orth).map(|(ui, wi)| rho * ui + side * wi).collect()
}
