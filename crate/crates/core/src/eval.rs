//! Proxy win-rate against the SFT reference, probe accuracy and collapse
//! diagnostics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::judges::PreferenceOracle;
use crate::policy::Policy;
use crate::universe::{argmax, PromptUniverse, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinRateEstimate {
    /// Wins with ties counted as one half.
    pub wins: f64,
    pub ties: usize,
    pub trials: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl WinRateEstimate {
    pub fn standard_error(&self) -> f64 {
        (self.rate * (1.0 - self.rate) / self.trials as f64).sqrt()
    }
}

/// Head-to-head comparison of `p` against `reference` on eval prompts.
///
/// Trial `i` uses eval prompt `i mod n`, draws one response from each
/// policy, scores identical responses as half a win, and otherwise asks the
/// evaluator with the two responses in a coin-flipped slot order.
pub fn estimate_win_rate<J, R>(
    p: &Policy,
    reference: &Policy,
    evaluator: &mut J,
    u: &PromptUniverse,
    n_trials: usize,
    rng: &mut R,
) -> Result<WinRateEstimate>
where
    J: PreferenceOracle + ?Sized,
    R: Rng + ?Sized,
{
    if n_trials < 1 {
        return Err(Error::contract("estimate_win_rate needs n_trials >= 1"));
    }
    let prompts: Vec<_> = u.with_role(Role::Eval).collect();
    if prompts.is_empty() {
        return Err(Error::contract("universe has no eval prompts"));
    }
    let mut wins = 0.0;
    let mut ties = 0;
    for trial in 0..n_trials {
        let x = prompts[trial % prompts.len()];
        let (ya, _) = p.sample_response(x, rng)?;
        let (yb, _) = reference.sample_response(x, rng)?;
        if ya == yb {
            wins += 0.5;
            ties += 1;
            continue;
        }
        let policy_first: bool = rng.random();
        let winner = if policy_first {
            evaluator.prefer(x, ya, yb)?
        } else {
            evaluator.prefer(x, yb, ya)?
        };
        if winner == ya {
            wins += 1.0;
        }
    }
    let n = n_trials as f64;
    let rate = wins / n;
    let half_width = 1.96 * (rate * (1.0 - rate) / n).sqrt();
    Ok(WinRateEstimate {
        wins,
        ties,
        trials: n_trials,
        rate,
        ci_low: (rate - half_width).max(0.0),
        ci_high: (rate + half_width).min(1.0),
    })
}

/// Fraction of probe prompts whose most likely response (logit ties to the
/// lower index) is the correct one.
pub fn probe_accuracy(p: &Policy, u: &PromptUniverse) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for x in u.with_role(Role::Probe) {
        total += 1;
        if Some(argmax(&p.logits(x)?)) == x.correct_response {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::contract("universe has no probe prompts"));
    }
    Ok(correct as f64 / total as f64)
}

/// Probe-accuracy change in percentage points.
pub fn capability_delta(p: &Policy, sft: &Policy, u: &PromptUniverse) -> Result<f64> {
    Ok(100.0 * (probe_accuracy(p, u)? - probe_accuracy(sft, u)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseMetrics {
    pub mean_entropy: f64,
    pub sft_mean_entropy: f64,
    pub collapsed: bool,
}

pub fn mean_entropy(p: &Policy, u: &PromptUniverse, role: Role) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for x in u.with_role(role) {
        sum += p.exact_entropy(x)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::contract(format!("universe has no {role:?} prompts")));
    }
    Ok(sum / n as f64)
}

/// Mean exact entropy on eval prompts, flagged when it falls below
/// `collapse_fraction` of the SFT policy's.
pub fn collapse_metrics(
    p: &Policy,
    sft: &Policy,
    u: &PromptUniverse,
    collapse_fraction: f64,
) -> Result<CollapseMetrics> {
    if !(collapse_fraction > 0.0 && collapse_fraction < 1.0) {
        return Err(Error::contract(format!(
            "collapse_fraction must lie in (0, 1) (got {collapse_fraction})"
        )));
    }
    let current = mean_entropy(p, u, Role::Eval)?;
    let sft_mean_entropy = mean_entropy(sft, u, Role::Eval)?;
    Ok(CollapseMetrics {
        mean_entropy: current,
        sft_mean_entropy,
        collapsed: current < collapse_fraction * sft_mean_entropy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapabilityReport {
    pub probe_accuracy: f64,
    pub delta_vs_sft: f64,
    pub mean_policy_entropy: f64,
    pub collapse_flag: bool,
}

pub fn capability_report(
    p: &Policy,
    sft: &Policy,
    u: &PromptUniverse,
    collapse_fraction: f64,
) -> Result<CapabilityReport> {
    let collapse = collapse_metrics(p, sft, u, collapse_fraction)?;
    Ok(CapabilityReport {
        probe_accuracy: probe_accuracy(p, u)?,
        delta_vs_sft: capability_delta(p, sft, u)?,
        mean_policy_entropy: collapse.mean_entropy,
        collapse_flag: collapse.collapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judges::{make_judge, JudgeSpec};
    use crate::streams::stream;
    use crate::universe::{generate_universe, UniverseConfig};

    fn universe() -> PromptUniverse {
        generate_universe(&UniverseConfig {
            num_train_prompts: 4,
            num_eval_prompts: 16,
            num_probe_prompts: 64,
            responses_per_prompt: 5,
            feature_dim: 10,
            misalignment_rho: 0.2,
            seed: 21,
            ..UniverseConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn probe_direction_solves_probes() {
        let u = universe();
        let theta: Vec<f64> = u.probe_direction.iter().map(|v| 50.0 * v).collect();
        let p = Policy::new("u", theta.clone());
        assert_eq!(probe_accuracy(&p, &u).unwrap(), 1.0);
        let scaled = Policy::new("u", theta.iter().map(|v| 0.01 * v).collect());
        assert_eq!(probe_accuracy(&scaled, &u).unwrap(), 1.0);
    }

    #[test]
    fn zero_policy_in_tabular_mode_picks_index_zero() {
        let u = generate_universe(&UniverseConfig::tabular(1, 1, 40, 4, 3)).unwrap();
        let zero = Policy::zeros("0", u.feature_dim());
        let expected = u
            .with_role(Role::Probe)
            .filter(|x| x.correct_response == Some(0))
            .count() as f64
            / 40.0;
        assert_eq!(probe_accuracy(&zero, &u).unwrap(), expected);
    }

    #[test]
    fn positive_rescaling_keeps_accuracy() {
        let u = universe();
        let mut rng = stream(0, "theta");
        let theta: Vec<f64> = (0..10).map(|_| rng.random::<f64>() - 0.5).collect();
        let a = probe_accuracy(&Policy::new("a", theta.clone()), &u).unwrap();
        let b = probe_accuracy(&Policy::new("b", theta.iter().map(|t| 7.5 * t).collect()), &u).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn delta_is_antisymmetric() {
        let u = universe();
        let a = Policy::new("a", u.probe_direction.clone());
        let b = Policy::new("b", u.proxy_bias_direction.clone());
        assert_eq!(capability_delta(&a, &a, &u).unwrap(), 0.0);
        assert_eq!(
            capability_delta(&a, &b, &u).unwrap(),
            -capability_delta(&b, &a, &u).unwrap()
        );
    }

    #[test]
    fn collapse_flag() {
        let u = universe();
        let sft = Policy::new("sft", u.probe_direction.clone());
        assert!(!collapse_metrics(&sft, &sft, &u, 0.1).unwrap().collapsed);
        let sharp = Policy::new("sharp", u.probe_direction.iter().map(|v| 1e4 * v).collect());
        let m = collapse_metrics(&sharp, &sft, &u, 0.1).unwrap();
        assert!(m.collapsed && m.mean_entropy < 1e-3);
        assert!(collapse_metrics(&sft, &sft, &u, 1.0).is_err());
    }

    #[test]
    fn faithful_evaluator_and_point_masses() {
        // point mass on the best response of every eval prompt is only
        // representable in tabular mode
        let t = generate_universe(&UniverseConfig::tabular(1, 6, 1, 3, 8)).unwrap();
        let mut best = vec![0.0; t.feature_dim()];
        let mut worst = vec![0.0; t.feature_dim()];
        for x in t.with_role(Role::Eval) {
            let b = x.best_response();
            let w = (b + 1) % 3;
            best[x.prompt_id * 3 + b] = 1e3;
            worst[x.prompt_id * 3 + w] = 1e3;
        }
        let mut judge = make_judge(&JudgeSpec::preset("oracle").unwrap(), &t).unwrap();
        let est = estimate_win_rate(
            &Policy::new("b", best),
            &Policy::new("w", worst),
            &mut judge,
            &t,
            500,
            &mut stream(1, "eval"),
        )
        .unwrap();
        assert_eq!(est.rate, 1.0);
        assert_eq!(est.ci_high, 1.0);
    }
}
