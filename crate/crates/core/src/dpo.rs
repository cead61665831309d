//! DPO objective, implicit reward, optimiser and learning-rate schedule.
//!
//! For a triple `(x, w, l)` with implicit reward
//! `r(x, y) = β (log π_θ(y|x) − log π_ref(y|x))` the loss is
//! `softplus(−h)` with `h = r(x, w) − r(x, l)`, which equals `−log σ(h)`.
//! Its gradient is `−σ(−h) β (∇log π_θ(w|x) − ∇log π_θ(l|x))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, softplus};
use crate::policy::Policy;
use crate::universe::{PromptRecord, PromptUniverse};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub prompt_id: usize,
    pub winner: usize,
    pub loser: usize,
    pub annotator: String,
    pub iteration: usize,
}

impl PreferenceTriple {
    pub fn validate<'u>(&self, u: &'u PromptUniverse) -> Result<&'u PromptRecord> {
        let x = u.prompt(self.prompt_id)?;
        let v = x.num_responses();
        if self.winner == self.loser {
            return Err(Error::contract(format!(
                "triple on prompt {} has winner == loser ({})",
                self.prompt_id, self.winner
            )));
        }
        if self.winner >= v || self.loser >= v {
            return Err(Error::contract(format!(
                "triple ({}, {}) out of range for V={v}",
                self.winner, self.loser
            )));
        }
        Ok(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Linear warmup, then constant.
    Constant,
    /// Linear warmup, then cosine decay to zero.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub schedule: Schedule,
    pub updates_per_sample: usize,
    pub max_steps: usize,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            warmup_ratio: 0.05,
            schedule: Schedule::Constant,
            updates_per_sample: 4,
            max_steps: 625,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("dpo.{name} must be finite and > 0 (got {v})")))
            }
        };
        positive("beta", self.beta)?;
        positive("learning_rate", self.learning_rate)?;
        positive("adam_eps", self.adam_eps)?;
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("dpo.{name} must lie in [0, 1) (got {v})")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(format!(
                "dpo.weight_decay must be >= 0 (got {})",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::config(format!(
                "dpo.warmup_ratio must lie in [0, 1) (got {})",
                self.warmup_ratio
            )));
        }
        if self.updates_per_sample < 1 {
            return Err(Error::config("dpo.updates_per_sample must be >= 1"));
        }
        if self.max_steps < 1 {
            return Err(Error::config("dpo.max_steps must be >= 1"));
        }
        Ok(())
    }

    pub fn total_updates(&self) -> usize {
        self.max_steps * self.updates_per_sample
    }

    pub fn warmup_updates(&self) -> usize {
        (self.warmup_ratio * self.total_updates() as f64).ceil() as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: usize,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(d: usize) -> Self {
        Self {
            step: 0,
            first_moment: vec![0.0; d],
            second_moment: vec![0.0; d],
        }
    }
}

pub fn implicit_reward(p: &Policy, reference: &Policy, x: &PromptRecord, y: usize, beta: f64) -> Result<f64> {
    Ok(beta * (p.log_prob(x, y)? - reference.log_prob(x, y)?))
}

fn margin_h(p: &Policy, reference: &Policy, x: &PromptRecord, t: &PreferenceTriple, beta: f64) -> Result<f64> {
    Ok(implicit_reward(p, reference, x, t.winner, beta)? - implicit_reward(p, reference, x, t.loser, beta)?)
}

pub fn dpo_example_loss(
    p: &Policy,
    reference: &Policy,
    u: &PromptUniverse,
    t: &PreferenceTriple,
    beta: f64,
) -> Result<f64> {
    let x = t.validate(u)?;
    Ok(softplus(-margin_h(p, reference, x, t, beta)?))
}

/// Mean loss and mean gradient over `batch`.
pub fn dpo_batch_grad(
    p: &Policy,
    reference: &Policy,
    u: &PromptUniverse,
    batch: &[PreferenceTriple],
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::contract("dpo_batch_grad needs a non-empty batch"));
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p.feature_dim];
    for t in batch {
        let x = t.validate(u)?;
        let lp = p.log_probs(x)?;
        let lr = reference.log_probs(x)?;
        let h = beta * ((lp[t.winner] - lr[t.winner]) - (lp[t.loser] - lr[t.loser]));
        loss += softplus(-h);
        let coef = -sigmoid(-h) * beta / n;
        // ∇log π(w) − ∇log π(l) = φ(w) − φ(l); the expectation terms cancel
        x.features.add_row_scaled(t.winner, coef, &mut grad);
        x.features.add_row_scaled(t.loser, -coef, &mut grad);
    }
    Ok((loss / n, grad))
}

pub fn lr_at_step(cfg: &DpoConfig, step: usize) -> f64 {
    let warmup = cfg.warmup_updates();
    if step < warmup {
        return cfg.learning_rate * step as f64 / warmup as f64;
    }
    match cfg.schedule {
        Schedule::Constant => cfg.learning_rate,
        Schedule::Cosine => {
            let span = cfg.total_updates().saturating_sub(warmup).max(1);
            let progress = ((step - warmup) as f64 / span as f64).min(1.0);
            cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// One optimiser update. The step counter is 1-based inside the schedule, so
/// the first update runs at `lr_at_step(cfg, 1)`.
pub fn optimizer_step(
    state: &OptimizerState,
    theta: &[f64],
    grad: &[f64],
    cfg: &DpoConfig,
) -> Result<(Vec<f64>, OptimizerState)> {
    if theta.len() != grad.len() || state.first_moment.len() != theta.len() || state.second_moment.len() != theta.len()
    {
        return Err(Error::contract(format!(
            "optimizer dimension mismatch: theta {}, grad {}, moments {}/{}",
            theta.len(),
            grad.len(),
            state.first_moment.len(),
            state.second_moment.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training(format!(
            "non-finite gradient component {i} ({}) at update {}",
            grad[i],
            state.step + 1
        )));
    }
    let step = state.step + 1;
    let lr = lr_at_step(cfg, step);
    let mut next = state.clone();
    next.step = step;
    let theta = match cfg.optimizer {
        OptimizerKind::Sgd => theta
            .iter()
            .zip(grad)
            .map(|(t, g)| t - lr * (g + cfg.weight_decay * t))
            .collect(),
        OptimizerKind::Adam => {
            let bc1 = 1.0 - cfg.adam_beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.adam_beta2.powi(step as i32);
            theta
                .iter()
                .zip(grad)
                .enumerate()
                .map(|(i, (t, g))| {
                    let m = cfg.adam_beta1 * state.first_moment[i] + (1.0 - cfg.adam_beta1) * g;
                    let v = cfg.adam_beta2 * state.second_moment[i] + (1.0 - cfg.adam_beta2) * g * g;
                    next.first_moment[i] = m;
                    next.second_moment[i] = v;
                    let update = (m / bc1) / ((v / bc2).sqrt() + cfg.adam_eps);
                    t - lr * (update + cfg.weight_decay * t)
                })
                .collect()
        }
    };
    Ok((theta, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::universe::{generate_universe, UniverseConfig};

    fn tabular() -> PromptUniverse {
        generate_universe(&UniverseConfig::tabular(1, 1, 1, 2, 0)).unwrap()
    }

    fn triple(w: usize, l: usize) -> PreferenceTriple {
        PreferenceTriple {
            prompt_id: 0,
            winner: w,
            loser: l,
            annotator: "t".into(),
            iteration: 0,
        }
    }

    fn theta_for(first_prompt: [f64; 2]) -> Policy {
        let mut theta = vec![0.0; 6];
        theta[..2].copy_from_slice(&first_prompt);
        Policy::new("p", theta)
    }

    #[test]
    fn implicit_reward_tabular_oracle() {
        let u = tabular();
        let x = &u.prompts[0];
        let p = theta_for([0.7, -0.1]);
        let r = Policy::zeros("ref", 6);
        let r0 = implicit_reward(&p, &r, x, 0, 2.0).unwrap();
        let r1 = implicit_reward(&p, &r, x, 1, 2.0).unwrap();
        // 40-digit oracle values
        assert!((r0 - 0.644_093_029_224_335_2).abs() < 1e-12, "{r0}");
        assert!((r1 + 0.955_906_970_775_664_8).abs() < 1e-12, "{r1}");
        assert!((r0 - r1 - 1.6).abs() < 1e-12);
        assert!((implicit_reward(&p, &r, x, 0, 4.0).unwrap() - 2.0 * r0).abs() < 1e-15);
        assert_eq!(implicit_reward(&p, &p, x, 1, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn example_losses() {
        let u = tabular();
        let r = Policy::zeros("ref", 6);
        assert!((dpo_example_loss(&r, &r, &u, &triple(0, 1), 0.1).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let p = theta_for([1.0, 0.0]);
        let fwd = dpo_example_loss(&p, &r, &u, &triple(0, 1), 0.5).unwrap();
        let back = dpo_example_loss(&p, &r, &u, &triple(1, 0), 0.5).unwrap();
        assert!((fwd - 0.474_076_984_180_106_7).abs() < 1e-12);
        assert!((back - 0.974_076_984_180_106_7).abs() < 1e-12);
        // softplus(h) − softplus(−h) = h
        assert!((back - fwd - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_triples_and_empty_batches() {
        let u = tabular();
        let r = Policy::zeros("ref", 6);
        assert!(matches!(
            dpo_example_loss(&r, &r, &u, &triple(1, 1), 0.1),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            dpo_example_loss(&r, &r, &u, &triple(0, 2), 0.1),
            Err(Error::Contract(_))
        ));
        assert!(matches!(dpo_batch_grad(&r, &r, &u, &[], 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn symmetric_batch_has_zero_gradient() {
        let u = tabular();
        let r = theta_for([0.3, -0.4]);
        let (loss, grad) = dpo_batch_grad(&r, &r, &u, &[triple(0, 1), triple(1, 0)], 0.7).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn single_triple_at_reference() {
        let u = tabular();
        let x = &u.prompts[0];
        let r = theta_for([0.3, -0.4]);
        let beta = 0.4;
        let (_, grad) = dpo_batch_grad(&r, &r, &u, &[triple(0, 1)], beta).unwrap();
        let gw = r.grad_log_prob(x, 0).unwrap();
        let gl = r.grad_log_prob(x, 1).unwrap();
        for i in 0..6 {
            assert!((grad[i] + beta / 2.0 * (gw[i] - gl[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_and_adam_steps() {
        let cfg = DpoConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.1,
            warmup_ratio: 0.0,
            ..DpoConfig::default()
        };
        let (theta, state) = optimizer_step(&OptimizerState::new(2), &[1.0, 1.0], &[1.0, 0.0], &cfg).unwrap();
        assert!((theta[0] - 0.9).abs() < 1e-15 && theta[1] == 1.0);
        assert_eq!(state.step, 1);

        let adam = DpoConfig {
            warmup_ratio: 0.0,
            adam_eps: 1e-300,
            ..DpoConfig::default()
        };
        let (same, _) = optimizer_step(&OptimizerState::new(2), &[0.5, -0.5], &[0.0, 0.0], &adam).unwrap();
        assert_eq!(same, vec![0.5, -0.5]);
        let (moved, _) = optimizer_step(&OptimizerState::new(3), &[0.0; 3], &[3.0, -0.01, 2.0], &adam).unwrap();
        let lr = adam.learning_rate;
        assert!((moved[0] + lr).abs() < 1e-12 && (moved[1] - lr).abs() < 1e-12 && (moved[2] + lr).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let err = optimizer_step(
            &OptimizerState::new(2),
            &[0.0, 0.0],
            &[f64::NAN, 0.0],
            &DpoConfig::default(),
        );
        assert!(matches!(err, Err(Error::Training(_))));
    }

    #[test]
    fn warmup_schedule() {
        let cfg = DpoConfig {
            max_steps: 625,
            updates_per_sample: 4,
            warmup_ratio: 0.05,
            learning_rate: 0.3,
            ..DpoConfig::default()
        };
        assert_eq!(lr_at_step(&cfg, 0), 0.0);
        assert_eq!(lr_at_step(&cfg, 125), 0.3);
        assert!((lr_at_step(&cfg, 62) - 62.0 / 125.0 * 0.3).abs() < 1e-15);
        assert_eq!(lr_at_step(&cfg, 2500), 0.3);
        let cosine = DpoConfig {
            schedule: Schedule::Cosine,
            ..cfg
        };
        assert_eq!(lr_at_step(&cosine, 125), 0.3);
        assert!(lr_at_step(&cosine, 2500).abs() < 1e-15);
    }
}
