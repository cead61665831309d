//! Parametric preference oracles.
//!
//! A judge scores responses with the proxy reward
//! `(1 − λ) r*(x, y) + λ ⟨g, φ(x, y)⟩`: `λ = 0` is faithful to the latent
//! true reward, `λ = 1` rewards only the proxy-bias direction `g`.
//! Bradley–Terry judges sample the winner with probability
//! `σ((r₁ − r₂)/τ)`; deterministic judges pick the larger proxy reward.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::streams::{stream, Stream};
use crate::universe::{PromptRecord, PromptUniverse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    BradleyTerry,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgeSpec {
    pub label: String,
    pub kind: JudgeKind,
    pub misalignment: f64,
    #[serde(default = "default_temperature")]
    pub noise_temperature: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_temperature() -> f64 {
    1.0
}

impl JudgeSpec {
    pub fn bradley_terry(label: impl Into<String>, misalignment: f64, temperature: f64) -> Self {
        Self {
            label: label.into(),
            kind: JudgeKind::BradleyTerry,
            misalignment,
            noise_temperature: temperature,
            seed: 0,
        }
    }

    pub fn deterministic(label: impl Into<String>, misalignment: f64) -> Self {
        Self {
            label: label.into(),
            kind: JudgeKind::Deterministic,
            misalignment,
            noise_temperature: 1.0,
            seed: 0,
        }
    }

    /// Judge-family presets: `strong`, `weak`, `safety`, `oracle`.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "strong" => Self::bradley_terry("strong", 0.05, 0.5),
            "weak" => Self::bradley_terry("weak", 0.9, 1.0),
            "safety" => Self::bradley_terry("safety", 0.4, 0.75),
            "oracle" => Self::deterministic("oracle", 0.0),
            _ => return None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() {
            return Err(Error::config("judge label must not be empty"));
        }
        if !(0.0..=1.0).contains(&self.misalignment) {
            return Err(Error::config(format!(
                "judge '{}': misalignment must lie in [0, 1] (got {})",
                self.label, self.misalignment
            )));
        }
        if !(self.noise_temperature.is_finite() && self.noise_temperature > 0.0) {
            return Err(Error::config(format!(
                "judge '{}': noise_temperature must be > 0 (got {})",
                self.label, self.noise_temperature
            )));
        }
        Ok(())
    }
}

/// Anything that can label a pair of responses to one prompt.
///
/// The interface sees only `(x, y1, y2)`, never a policy.
pub trait PreferenceOracle {
    fn label(&self) -> &str;

    /// Returns whichever of `y1`, `y2` wins.
    fn prefer(&mut self, x: &PromptRecord, y1: usize, y2: usize) -> Result<usize>;
}

#[derive(Clone, Debug)]
pub struct Judge {
    spec: JudgeSpec,
    bias_direction: Vec<f64>,
    rng: Stream,
}

pub fn make_judge(spec: &JudgeSpec, u: &PromptUniverse) -> Result<Judge> {
    spec.validate()?;
    Ok(Judge {
        spec: spec.clone(),
        bias_direction: u.proxy_bias_direction.clone(),
        rng: stream(spec.seed, &format!("judge/{}", spec.label)),
    })
}

impl Judge {
    pub fn spec(&self) -> &JudgeSpec {
        &self.spec
    }

    pub fn proxy_reward(&self, x: &PromptRecord, y: usize) -> f64 {
        let lambda = self.spec.misalignment;
        let truth = x.true_reward[y];
        let bias = x.features.dot_row(y, &self.bias_direction);
        // keep the endpoints exact
        if lambda == 0.0 {
            truth
        } else if lambda == 1.0 {
            bias
        } else {
            (1.0 - lambda) * truth + lambda * bias
        }
    }

    pub fn preference_probability(&self, x: &PromptRecord, y1: usize, y2: usize) -> Result<f64> {
        if self.spec.kind != JudgeKind::BradleyTerry {
            return Err(Error::contract(format!(
                "judge '{}' is deterministic and has no preference probability",
                self.spec.label
            )));
        }
        check_pair(x, y1, y2, false)?;
        let gap = self.proxy_reward(x, y1) - self.proxy_reward(x, y2);
        Ok(sigmoid(gap / self.spec.noise_temperature))
    }

    pub fn judge_prefer(&mut self, x: &PromptRecord, y1: usize, y2: usize) -> Result<usize> {
        check_pair(x, y1, y2, true)?;
        match self.spec.kind {
            JudgeKind::BradleyTerry => {
                let p = self.preference_probability(x, y1, y2)?;
                let draw: f64 = self.rng.random();
                Ok(if draw < p { y1 } else { y2 })
            }
            JudgeKind::Deterministic => {
                let (r1, r2) = (self.proxy_reward(x, y1), self.proxy_reward(x, y2));
                Ok(if r1 > r2 || (r1 == r2 && y1 < y2) { y1 } else { y2 })
            }
        }
    }
}

impl PreferenceOracle for Judge {
    fn label(&self) -> &str {
        &self.spec.label
    }

    fn prefer(&mut self, x: &PromptRecord, y1: usize, y2: usize) -> Result<usize> {
        self.judge_prefer(x, y1, y2)
    }
}

fn check_pair(x: &PromptRecord, y1: usize, y2: usize, distinct: bool) -> Result<()> {
    let v = x.num_responses();
    if y1 >= v || y2 >= v {
        return Err(Error::contract(format!("pair ({y1}, {y2}) out of range for V={v}")));
    }
    if distinct && y1 == y2 {
        return Err(Error::contract(format!(
            "judge queried with identical responses ({y1})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::universe::{generate_universe, Features, Role, UniverseConfig};

    fn universe() -> PromptUniverse {
        generate_universe(&UniverseConfig {
            num_train_prompts: 3,
            num_eval_prompts: 2,
            num_probe_prompts: 6,
            responses_per_prompt: 4,
            feature_dim: 6,
            misalignment_rho: -0.5,
            seed: 4,
            ..UniverseConfig::default()
        })
        .unwrap()
    }

    /// Two responses, `φ = e_y`, so `⟨g, φ(y)⟩ = g[y]`.
    fn handmade(truth: [f64; 2], g: [f64; 2]) -> (PromptUniverse, PromptRecord) {
        let mut u = universe();
        u.proxy_bias_direction = g.to_vec();
        let x = PromptRecord {
            prompt_id: 0,
            role: Role::Eval,
            features: Features::OneHot {
                one_hot_base: 0,
                responses: 2,
                dim: 2,
            },
            true_reward: truth.to_vec(),
            correct_response: None,
        };
        (u, x)
    }

    #[test]
    fn proxy_reward_endpoints() {
        let (u, x) = handmade([2.0, 0.0], [-1.0, 0.0]);
        let at = |lambda| {
            make_judge(&JudgeSpec::deterministic("j", lambda), &u)
                .unwrap()
                .proxy_reward(&x, 0)
        };
        assert_eq!(at(0.0), 2.0);
        assert_eq!(at(1.0), -1.0);
        assert_eq!(at(0.5), 0.5);
    }

    #[test]
    fn bradley_terry_probabilities() {
        let (u, x) = handmade([1.0, 0.0], [0.0, 0.0]);
        let j = make_judge(&JudgeSpec::bradley_terry("bt", 0.0, 1.0), &u).unwrap();
        assert!((j.preference_probability(&x, 0, 1).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert_eq!(j.preference_probability(&x, 0, 0).unwrap(), 0.5);
        let hot = make_judge(&JudgeSpec::bradley_terry("bt", 0.0, 1e6), &u).unwrap();
        assert!((hot.preference_probability(&x, 0, 1).unwrap() - 0.5).abs() < 1e-6);
        let det = make_judge(&JudgeSpec::deterministic("d", 0.0), &u).unwrap();
        assert!(matches!(det.preference_probability(&x, 0, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn deterministic_choice_and_ties() {
        let (u, x) = handmade([2.0, 1.0], [0.0, 0.0]);
        let mut j = make_judge(&JudgeSpec::deterministic("d", 0.0), &u).unwrap();
        assert_eq!(j.judge_prefer(&x, 0, 1).unwrap(), 0);
        assert_eq!(j.judge_prefer(&x, 1, 0).unwrap(), 0);
        let (u, x) = handmade([1.0, 1.0], [0.0, 0.0]);
        let mut j = make_judge(&JudgeSpec::deterministic("d", 0.0), &u).unwrap();
        assert_eq!(j.judge_prefer(&x, 1, 0).unwrap(), 0);
        assert!(matches!(j.judge_prefer(&x, 1, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn bradley_terry_frequency_matches_sigmoid() {
        let (u, x) = handmade([1.0, 0.0], [0.0, 0.0]);
        let mut j = make_judge(&JudgeSpec::bradley_terry("bt", 0.0, 1.0), &u).unwrap();
        let n = 100_000;
        let wins = (0..n).filter(|_| j.judge_prefer(&x, 0, 1).unwrap() == 0).count();
        let p = 0.731_058_578_630_004_9;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((wins as f64 / n as f64 - p).abs() < 5.0 * se);
    }

    #[test]
    fn streams_depend_on_label_and_seed() {
        let u = universe();
        let x = &u.prompts[0];
        let outcomes = |spec: JudgeSpec| {
            let mut j = make_judge(&spec, &u).unwrap();
            (0..64).map(|_| j.judge_prefer(x, 0, 1).unwrap()).collect::<Vec<_>>()
        };
        let base = JudgeSpec::bradley_terry("annotator", 0.5, 5.0).with_seed(3);
        assert_eq!(outcomes(base.clone()), outcomes(base.clone()));
        assert_ne!(outcomes(base.clone()), outcomes(base.with_label("evaluator")));
    }

    #[test]
    fn faithful_judge_prefers_probe_answers() {
        let u = universe();
        let mut j = make_judge(&JudgeSpec::preset("oracle").unwrap(), &u).unwrap();
        for x in u.with_role(Role::Probe) {
            let best = x.correct_response.unwrap();
            for y in (0..4).filter(|y| *y != best) {
                assert_eq!(j.judge_prefer(x, y, best).unwrap(), best);
                assert_eq!(j.judge_prefer(x, best, y).unwrap(), best);
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let u = universe();
        assert!(make_judge(&JudgeSpec::bradley_terry("x", 1.2, 1.0), &u).is_err());
        assert!(make_judge(&JudgeSpec::bradley_terry("x", 0.2, 0.0), &u).is_err());
        assert!(JudgeSpec::preset("nonsense").is_none());
    }
}
