//! SFT initialisation and the online DPO loop.
//!
//! Each iteration samples `B` train prompts (without replacement inside the
//! iteration), draws `M` candidates per prompt from the current policy,
//! forms pair pools, selects up to `L` pairs, asks the annotator to label
//! them, then takes `updates_per_sample` optimiser steps on that batch.
//! The reference policy is the SFT policy and never changes.
//!
//! Prompt sampling, candidate generation, random selection and the
//! annotator each own a separate stream, so runs that differ only in the
//! selector draw the same prompt batches and the same generation uniforms.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dpo::{dpo_batch_grad, lr_at_step, optimizer_step, DpoConfig, OptimizerState, PreferenceTriple};
use crate::error::{Error, Result};
use crate::judges::{make_judge, JudgeSpec, PreferenceOracle};
use crate::policy::Policy;
use crate::selection::{
    entropy_estimate, form_pairs, generate_candidates, select_apl, select_random, OpCounters, Pair, SelectionConfig,
    Selector,
};
use crate::streams::stream;
use crate::universe::{PromptUniverse, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 1,
            batch: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dpo: DpoConfig,
    pub selection: SelectionConfig,
    pub selector: Selector,
    pub annotator: JudgeSpec,
    pub sft: SftConfig,
    pub run_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dpo: DpoConfig::default(),
            selection: SelectionConfig::default(),
            selector: Selector::Random,
            annotator: JudgeSpec::preset("strong").expect("preset"),
            sft: SftConfig::default(),
            run_seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dpo.validate()?;
        self.selection.validate()?;
        self.annotator.validate()?;
        if !(self.sft.learning_rate.is_finite() && self.sft.learning_rate >= 0.0) {
            return Err(Error::config(format!(
                "sft.learning_rate must be >= 0 (got {})",
                self.sft.learning_rate
            )));
        }
        if self.sft.batch < 1 {
            return Err(Error::config("sft.batch must be >= 1"));
        }
        Ok(())
    }
}

/// Loop shape of the LLM-scale reference runs: T = 625, B = 64, 4 updates
/// per collected batch, warmup ratio 0.05. β = 0.1, M = 4, N = 32 and L = 64
/// are local defaults.
pub fn llm_scale_preset() -> TrainConfig {
    TrainConfig {
        dpo: DpoConfig {
            beta: 0.1,
            max_steps: 625,
            updates_per_sample: 4,
            warmup_ratio: 0.05,
            ..DpoConfig::default()
        },
        selection: SelectionConfig {
            batch_prompts: 64,
            candidates_per_prompt: 4,
            apl_top_prompts: 32,
            label_budget: 64,
        },
        ..TrainConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    /// Mean DPO loss over the updates of this iteration; `None` when no
    /// pair was labelled.
    pub mean_loss: Option<f64>,
    pub labeled_pairs: usize,
    pub lr: f64,
    pub entropy_min: f64,
    pub entropy_mean: f64,
    pub entropy_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    Batch {
        iteration: usize,
        prompt_ids: Vec<usize>,
        candidates: Vec<Vec<usize>>,
    },
    Degenerate {
        iteration: usize,
        prompt_id: usize,
    },
    Selected {
        iteration: usize,
        strategy: Selector,
        prompt_id: usize,
        pair: Pair,
        score: Option<f64>,
    },
    Shortfall {
        iteration: usize,
        requested: usize,
        available: usize,
    },
    Abort {
        iteration: usize,
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub final_policy: Policy,
    pub sft_policy: Policy,
    pub per_iteration: Vec<IterationLog>,
    pub counters: OpCounters,
    pub events: Vec<RunEvent>,
}

impl RunResult {
    pub fn aborted(&self) -> bool {
        self.events.iter().any(|e| matches!(e, RunEvent::Abort { .. }))
    }

    pub fn shortfalls(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, RunEvent::Shortfall { .. }))
            .count()
    }

    pub fn degenerate_prompts(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, RunEvent::Degenerate { .. }))
            .count()
    }

    pub fn labeled_pairs(&self) -> usize {
        self.per_iteration.iter().map(|l| l.labeled_pairs).sum()
    }

    /// Candidate lists of every iteration, in prompt-batch order.
    pub fn candidate_log(&self) -> Vec<(usize, Vec<usize>, Vec<Vec<usize>>)> {
        self.events
            .iter()
            .filter_map(|e| match e {
                RunEvent::Batch {
                    iteration,
                    prompt_ids,
                    candidates,
                } => Some((*iteration, prompt_ids.clone(), candidates.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "iteration",
            "mean_loss",
            "labeled_pairs",
            "lr",
            "entropy_min",
            "entropy_mean",
            "entropy_max",
        ])?;
        for l in &self.per_iteration {
            w.write_record([
                l.iteration.to_string(),
                l.mean_loss.map(|v| v.to_string()).unwrap_or_default(),
                l.labeled_pairs.to_string(),
                l.lr.to_string(),
                l.entropy_min.to_string(),
                l.entropy_mean.to_string(),
                l.entropy_max.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::contract(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn events_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Fits the SFT policy by minibatch gradient ascent on the log-likelihood of
/// each train prompt's best true-reward response. Prompts are visited in id
/// order, so the result depends only on the universe and `cfg.sft`.
pub fn sft_fit(u: &PromptUniverse, cfg: &TrainConfig) -> Result<Policy> {
    let d = u.feature_dim();
    let mut policy = Policy::zeros("sft", d);
    let train: Vec<_> = u.with_role(Role::Train).collect();
    if train.is_empty() {
        return Err(Error::contract("sft_fit: universe has no train prompts"));
    }
    for epoch in 0..cfg.sft.epochs {
        for chunk in train.chunks(cfg.sft.batch) {
            let mut grad = vec![0.0; d];
            for x in chunk {
                let chosen = x.best_response();
                let probs = policy.probs(x)?;
                x.features.add_row_scaled(chosen, 1.0, &mut grad);
                for (y, p) in probs.iter().enumerate() {
                    x.features.add_row_scaled(y, -p, &mut grad);
                }
            }
            let scale = cfg.sft.learning_rate / chunk.len() as f64;
            for (t, g) in policy.theta.iter_mut().zip(&grad) {
                *t += scale * g;
            }
            if !policy.is_finite() {
                return Err(Error::Training(format!(
                    "SFT diverged to non-finite parameters in epoch {epoch}"
                )));
            }
        }
    }
    Ok(policy)
}

/// Runs the online loop from `sft` for `cfg.dpo.max_steps` iterations.
///
/// Numerical collapse is data, not failure: the run stops, records an
/// `Abort` event and returns what it has.
pub fn run_online_dpo(u: &PromptUniverse, sft: &Policy, cfg: &TrainConfig) -> Result<RunResult> {
    run_online_dpo_for(u, sft, cfg, cfg.dpo.max_steps)
}

/// As [`run_online_dpo`], but for `iterations` steps of the schedule
/// configured by `cfg` (zero is allowed).
pub fn run_online_dpo_for(u: &PromptUniverse, sft: &Policy, cfg: &TrainConfig, iterations: usize) -> Result<RunResult> {
    cfg.validate()?;
    if !sft.is_finite() {
        return Err(Error::Training("SFT policy has non-finite parameters".into()));
    }
    if sft.feature_dim != u.feature_dim() {
        return Err(Error::contract(format!(
            "SFT policy d={} but universe d={}",
            sft.feature_dim,
            u.feature_dim()
        )));
    }
    let train_ids = u.ids(Role::Train);
    if cfg.selection.batch_prompts > train_ids.len() {
        return Err(Error::config(format!(
            "selection.batch_prompts {} exceeds the {} train prompts",
            cfg.selection.batch_prompts,
            train_ids.len()
        )));
    }

    let reference = sft.clone().relabel("ref");
    let mut policy = sft.clone();
    let mut annotator = make_judge(&cfg.annotator.clone().with_seed(cfg.annotator.seed ^ cfg.run_seed), u)?;
    let mut prompt_rng = stream(cfg.run_seed, "prompts");
    let mut candidate_rng = stream(cfg.run_seed, "candidates");
    let mut selection_rng = stream(cfg.run_seed, "selection");
    let mut optimizer = OptimizerState::new(u.feature_dim());
    let mut counters = OpCounters::default();
    let mut per_iteration = Vec::with_capacity(iterations);
    let mut events = Vec::new();
    let beta = cfg.dpo.beta;

    for iteration in 1..=iterations {
        let mut batch_ids: Vec<usize> = index::sample(&mut prompt_rng, train_ids.len(), cfg.selection.batch_prompts)
            .into_iter()
            .map(|i| train_ids[i])
            .collect();
        batch_ids.sort_unstable();

        let sets = generate_candidates(
            &policy,
            u,
            &batch_ids,
            &cfg.selection,
            &mut candidate_rng,
            &mut counters,
        )?;
        events.push(RunEvent::Batch {
            iteration,
            prompt_ids: batch_ids.clone(),
            candidates: sets.iter().map(|s| s.candidates.clone()).collect(),
        });
        let pools: Vec<_> = sets.iter().map(form_pairs).collect();
        for pool in pools.iter().filter(|p| p.is_degenerate()) {
            events.push(RunEvent::Degenerate {
                iteration,
                prompt_id: pool.prompt_id,
            });
        }

        let selection = match cfg.selector {
            Selector::Random => select_random(&pools, cfg.selection.label_budget, &mut selection_rng),
            Selector::Apl => select_apl(
                &policy,
                &reference,
                u,
                &sets,
                &pools,
                &cfg.selection,
                beta,
                &mut counters,
            )?,
        };
        if let Some((requested, available)) = selection.shortfall {
            events.push(RunEvent::Shortfall {
                iteration,
                requested,
                available,
            });
        }

        let mut triples = Vec::with_capacity(selection.picks.len());
        for pick in &selection.picks {
            events.push(RunEvent::Selected {
                iteration,
                strategy: cfg.selector,
                prompt_id: pick.prompt_id,
                pair: pick.pair,
                score: pick.score,
            });
            let x = u.prompt(pick.prompt_id)?;
            let winner = annotator.prefer(x, pick.pair.0, pick.pair.1)?;
            counters.judge_queries += 1;
            let loser = if winner == pick.pair.0 {
                pick.pair.1
            } else {
                pick.pair.0
            };
            triples.push(PreferenceTriple {
                prompt_id: pick.prompt_id,
                winner,
                loser,
                annotator: annotator.label().to_string(),
                iteration,
            });
        }

        let entropies = sets.iter().map(entropy_estimate).collect::<Result<Vec<_>>>()?;
        let lr = lr_at_step(&cfg.dpo, optimizer.step + 1);
        let mut losses = Vec::new();
        let mut abort = None;
        if !triples.is_empty() {
            for _ in 0..cfg.dpo.updates_per_sample {
                let (loss, grad) = dpo_batch_grad(&policy, &reference, u, &triples, beta)?;
                losses.push(loss);
                match optimizer_step(&optimizer, &policy.theta, &grad, &cfg.dpo) {
                    Ok((theta, state)) if theta.iter().all(|t| t.is_finite()) => {
                        policy.theta = theta;
                        optimizer = state;
                    }
                    Ok(_) => {
                        abort = Some(format!("non-finite parameters after update {}", optimizer.step + 1));
                        break;
                    }
                    Err(Error::Training(reason)) => {
                        abort = Some(reason);
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        per_iteration.push(IterationLog {
            iteration,
            mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            labeled_pairs: triples.len(),
            lr,
            entropy_min: entropies.iter().copied().fold(f64::INFINITY, f64::min),
            entropy_mean: entropies.iter().sum::<f64>() / entropies.len() as f64,
            entropy_max: entropies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
        if let Some(reason) = abort {
            events.push(RunEvent::Abort { iteration, reason });
            break;
        }
    }

    Ok(RunResult {
        final_policy: policy.relabel(format!("step-{}", per_iteration.len())),
        sft_policy: sft.clone(),
        per_iteration,
        counters,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::universe::{generate_universe, UniverseConfig};

    fn tiny() -> (PromptUniverse, TrainConfig) {
        let u = generate_universe(&UniverseConfig {
            num_train_prompts: 24,
            num_eval_prompts: 8,
            num_probe_prompts: 16,
            responses_per_prompt: 6,
            feature_dim: 8,
            seed: 5,
            ..UniverseConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            selection: SelectionConfig {
                batch_prompts: 8,
                candidates_per_prompt: 4,
                apl_top_prompts: 4,
                label_budget: 8,
            },
            dpo: DpoConfig {
                max_steps: 10,
                ..DpoConfig::default()
            },
            ..TrainConfig::default()
        };
        (u, cfg)
    }

    #[test]
    fn preset_values() {
        let p = llm_scale_preset();
        assert_eq!(p.dpo.max_steps, 625);
        assert_eq!(p.selection.batch_prompts, 64);
        assert_eq!(p.dpo.updates_per_sample, 4);
        assert_eq!(p.dpo.warmup_ratio, 0.05);
        assert_eq!(p.dpo.beta, 0.1);
        assert_eq!(
            (
                p.selection.candidates_per_prompt,
                p.selection.apl_top_prompts,
                p.selection.label_budget
            ),
            (4, 32, 64)
        );
        assert!(p.validate().is_ok());
    }

    #[test]
    fn sft_raises_chosen_likelihood_and_is_deterministic() {
        let (u, cfg) = tiny();
        let sft = sft_fit(&u, &cfg).unwrap();
        let mean_ll = |p: &Policy| {
            let train: Vec<_> = u.with_role(Role::Train).collect();
            train
                .iter()
                .map(|x| p.log_prob(x, x.best_response()).unwrap())
                .sum::<f64>()
                / train.len() as f64
        };
        assert!(mean_ll(&sft) > mean_ll(&Policy::zeros("0", 8)));
        assert_eq!(sft, sft_fit(&u, &cfg).unwrap());
    }

    #[test]
    fn zero_iterations_return_sft() {
        let (u, cfg) = tiny();
        let sft = sft_fit(&u, &cfg).unwrap();
        let run = run_online_dpo_for(&u, &sft, &cfg, 0).unwrap();
        assert_eq!(run.final_policy.theta, sft.theta);
        assert!(run.per_iteration.is_empty() && run.events.is_empty());
    }

    #[test]
    fn runs_are_deterministic_and_budgeted() {
        let (u, mut cfg) = tiny();
        let sft = sft_fit(&u, &cfg).unwrap();
        for selector in [Selector::Random, Selector::Apl] {
            cfg.selector = selector;
            let a = run_online_dpo(&u, &sft, &cfg).unwrap();
            let b = run_online_dpo(&u, &sft, &cfg).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert_eq!(a.counters.judge_queries as usize, a.labeled_pairs());
            assert!(a.labeled_pairs() <= 10 * 8);
            assert!(a.per_iteration.iter().all(|l| l.labeled_pairs <= 8));
        }
    }

    #[test]
    fn selectors_share_prompt_batches_and_first_candidates() {
        let (u, mut cfg) = tiny();
        let sft = sft_fit(&u, &cfg).unwrap();
        let random = run_online_dpo(&u, &sft, &cfg).unwrap();
        cfg.selector = Selector::Apl;
        let apl = run_online_dpo(&u, &sft, &cfg).unwrap();
        let (rl, al) = (random.candidate_log(), apl.candidate_log());
        assert_eq!(rl[0], al[0]);
        for (r, a) in rl.iter().zip(&al) {
            assert_eq!(r.1, a.1);
        }
    }

    #[test]
    fn nan_sft_is_rejected() {
        let (u, cfg) = tiny();
        let bad = Policy::new("bad", vec![f64::NAN; 8]);
        assert!(matches!(run_online_dpo(&u, &bad, &cfg), Err(Error::Training(_))));
    }

    #[test]
    fn huge_learning_rate_aborts_with_partial_result() {
        let (u, mut cfg) = tiny();
        cfg.dpo.optimizer = crate::dpo::OptimizerKind::Sgd;
        cfg.dpo.warmup_ratio = 0.0;
        cfg.dpo.learning_rate = 1e307;
        cfg.dpo.beta = 1e3;
        let sft = sft_fit(&u, &cfg).unwrap();
        let run = run_online_dpo(&u, &sft, &cfg).unwrap();
        assert!(run.aborted());
        assert!(run.per_iteration.len() < 10);
    }
}
