//! Candidate generation, pair pools and the two budget-matched selectors.
//!
//! Both selectors label exactly `label_budget` pairs per iteration (fewer
//! only when the pools run short). Random draws uniformly without
//! replacement from the union of all pools. APL keeps the `apl_top_prompts`
//! prompts with the largest Monte-Carlo entropy estimate, computed from the
//! log-probs recorded at generation time, then labels the pairs with the
//! largest implicit-reward margin `|r(x, y1) − r(x, y2)|`.

use std::cmp::Ordering;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dpo::implicit_reward;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::universe::{PromptRecord, PromptUniverse};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub batch_prompts: usize,
    pub candidates_per_prompt: usize,
    pub apl_top_prompts: usize,
    pub label_budget: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            batch_prompts: 64,
            candidates_per_prompt: 4,
            apl_top_prompts: 32,
            label_budget: 64,
        }
    }
}

impl SelectionConfig {
    pub fn pairs_per_prompt(&self) -> usize {
        self.candidates_per_prompt * self.candidates_per_prompt.saturating_sub(1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates_per_prompt < 2 {
            return Err(Error::config(format!(
                "selection.candidates_per_prompt must be >= 2 (got {})",
                self.candidates_per_prompt
            )));
        }
        if self.apl_top_prompts < 1 || self.apl_top_prompts > self.batch_prompts {
            return Err(Error::config(format!(
                "selection.apl_top_prompts must lie in [1, batch_prompts={}] (got {})",
                self.batch_prompts, self.apl_top_prompts
            )));
        }
        if self.label_budget < 1 {
            return Err(Error::config("selection.label_budget must be >= 1"));
        }
        let per = self.pairs_per_prompt();
        if self.label_budget > self.batch_prompts * per {
            return Err(Error::config(format!(
                "selection.label_budget {} exceeds batch_prompts x C(M,2) = {}",
                self.label_budget,
                self.batch_prompts * per
            )));
        }
        if self.label_budget > self.apl_top_prompts * per {
            return Err(Error::config(format!(
                "selection.label_budget {} exceeds apl_top_prompts x C(M,2) = {}",
                self.label_budget,
                self.apl_top_prompts * per
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    Random,
    Apl,
}

impl Selector {
    pub fn name(self) -> &'static str {
        match self {
            Selector::Random => "random",
            Selector::Apl => "apl",
        }
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Selector::Random),
            "apl" => Ok(Selector::Apl),
            other => Err(Error::config(format!(
                "unknown selector '{other}' (expected random or apl)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub prompt_id: usize,
    pub candidates: Vec<usize>,
    pub candidate_log_probs: Vec<f64>,
}

/// Unordered pair of distinct responses, stored as `(low, high)`.
pub type Pair = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPool {
    pub prompt_id: usize,
    pub pairs: Vec<Pair>,
}

impl PairPool {
    /// All candidates were the same response.
    pub fn is_degenerate(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub policy_logprob_evals: u64,
    pub ref_logprob_evals: u64,
    pub judge_queries: u64,
    pub generated_samples: u64,
}

impl OpCounters {
    pub fn add(&mut self, other: &OpCounters) {
        self.policy_logprob_evals += other.policy_logprob_evals;
        self.ref_logprob_evals += other.ref_logprob_evals;
        self.judge_queries += other.judge_queries;
        self.generated_samples += other.generated_samples;
    }

    pub fn scoring_evals(&self) -> u64 {
        self.policy_logprob_evals + self.ref_logprob_evals
    }

    pub fn total(&self) -> u64 {
        self.scoring_evals() + self.judge_queries + self.generated_samples
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedPair {
    pub prompt_id: usize,
    pub pair: Pair,
    /// Margin for APL, `None` for Random.
    pub score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub picks: Vec<SelectedPair>,
    /// `(requested, available)` when fewer than the budget could be labelled.
    pub shortfall: Option<(usize, usize)>,
}

/// Draws `M` responses per prompt from `p`, recording their log-probs.
pub fn generate_candidates<R: Rng + ?Sized>(
    p: &Policy,
    u: &PromptUniverse,
    prompt_ids: &[usize],
    cfg: &SelectionConfig,
    rng: &mut R,
    counters: &mut OpCounters,
) -> Result<Vec<CandidateSet>> {
    prompt_ids
        .iter()
        .map(|&id| {
            let x = u.prompt(id)?;
            let mut set = CandidateSet {
                prompt_id: id,
                candidates: Vec::with_capacity(cfg.candidates_per_prompt),
                candidate_log_probs: Vec::with_capacity(cfg.candidates_per_prompt),
            };
            for _ in 0..cfg.candidates_per_prompt {
                let (y, lp) = p.sample_response(x, rng)?;
                set.candidates.push(y);
                set.candidate_log_probs.push(lp);
            }
            counters.generated_samples += cfg.candidates_per_prompt as u64;
            Ok(set)
        })
        .collect()
}

/// Complete graph on the distinct candidate values, lexicographic order.
pub fn form_pairs(c: &CandidateSet) -> PairPool {
    let mut values = c.candidates.clone();
    values.sort_unstable();
    values.dedup();
    let mut pairs = Vec::with_capacity(values.len() * values.len().saturating_sub(1) / 2);
    for (i, &a) in values.iter().enumerate() {
        for &b in &values[i + 1..] {
            pairs.push((a, b));
        }
    }
    PairPool {
        prompt_id: c.prompt_id,
        pairs,
    }
}

/// `−(1/M) Σ log π(y⁽ᵐ⁾|x)` over the recorded draws; no policy evaluation.
pub fn entropy_estimate(c: &CandidateSet) -> Result<f64> {
    if c.candidate_log_probs.is_empty() || c.candidate_log_probs.len() != c.candidates.len() {
        return Err(Error::contract(format!(
            "prompt {}: {} log-probs recorded for {} candidates",
            c.prompt_id,
            c.candidate_log_probs.len(),
            c.candidates.len()
        )));
    }
    let mean = c.candidate_log_probs.iter().sum::<f64>() / c.candidate_log_probs.len() as f64;
    Ok(-mean)
}

pub fn margin_score(
    p: &Policy,
    reference: &Policy,
    x: &PromptRecord,
    pair: Pair,
    beta: f64,
    counters: &mut OpCounters,
) -> Result<f64> {
    let r1 = implicit_reward(p, reference, x, pair.0, beta)?;
    let r2 = implicit_reward(p, reference, x, pair.1, beta)?;
    counters.policy_logprob_evals += 2;
    counters.ref_logprob_evals += 2;
    Ok((r1 - r2).abs())
}

pub fn select_random<R: Rng + ?Sized>(pools: &[PairPool], budget: usize, rng: &mut R) -> Selection {
    let union: Vec<SelectedPair> = pools
        .iter()
        .flat_map(|pool| {
            pool.pairs.iter().map(|&pair| SelectedPair {
                prompt_id: pool.prompt_id,
                pair,
                score: None,
            })
        })
        .collect();
    if union.len() <= budget {
        let available = union.len();
        return Selection {
            picks: union,
            shortfall: (available < budget).then_some((budget, available)),
        };
    }
    let mut chosen = index::sample(rng, union.len(), budget).into_vec();
    chosen.sort_unstable();
    Selection {
        picks: chosen.into_iter().map(|i| union[i].clone()).collect(),
        shortfall: None,
    }
}

/// Prompt positions (into `candidate_sets`) kept by the entropy stage:
/// descending estimate, ties to the lower prompt id, degenerate pools skipped.
pub fn rank_by_entropy(candidate_sets: &[CandidateSet], pools: &[PairPool], keep: usize) -> Result<Vec<usize>> {
    let mut scored = Vec::with_capacity(candidate_sets.len());
    for (i, (c, pool)) in candidate_sets.iter().zip(pools).enumerate() {
        if !pool.is_degenerate() {
            scored.push((i, c.prompt_id, entropy_estimate(c)?));
        }
    }
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(keep).map(|(i, _, _)| i).collect())
}

#[allow(clippy::too_many_arguments)]
pub fn select_apl(
    p: &Policy,
    reference: &Policy,
    u: &PromptUniverse,
    candidate_sets: &[CandidateSet],
    pools: &[PairPool],
    cfg: &SelectionConfig,
    beta: f64,
    counters: &mut OpCounters,
) -> Result<Selection> {
    if candidate_sets.len() != pools.len() {
        return Err(Error::contract("select_apl: candidate sets and pools differ in length"));
    }
    let kept = rank_by_entropy(candidate_sets, pools, cfg.apl_top_prompts)?;
    let mut scored = Vec::new();
    for i in kept {
        let pool = &pools[i];
        let x = u.prompt(pool.prompt_id)?;
        for &pair in &pool.pairs {
            let score = margin_score(p, reference, x, pair, beta, counters)?;
            scored.push(SelectedPair {
                prompt_id: pool.prompt_id,
                pair,
                score: Some(score),
            });
        }
    }
    scored.sort_by(|a, b| {
        let (sa, sb) = (a.score.unwrap_or(0.0), b.score.unwrap_or(0.0));
        match sb.total_cmp(&sa) {
            Ordering::Equal => a.prompt_id.cmp(&b.prompt_id).then(a.pair.cmp(&b.pair)),
            other => other,
        }
    });
    let available = scored.len();
    scored.truncate(cfg.label_budget);
    Ok(Selection {
        picks: scored,
        shortfall: (available < cfg.label_budget).then_some((cfg.label_budget, available)),
    })
}

/// Wall-clock APL/Random cost ratio per query–update cycle for LLM-scale
/// online DPO. Operation counts here are an analog of that overhead, not a
/// reproduction of it.
pub const REFERENCE_WALLCLOCK_RATIO: f64 = 20.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub delta_policy_logprob_evals: i64,
    pub delta_ref_logprob_evals: i64,
    pub delta_judge_queries: i64,
    pub delta_generated_samples: i64,
    /// Extra policy + reference log-prob evaluations spent on scoring.
    pub extra_scoring_ops: i64,
    pub total_extra_ops: i64,
    /// Total counted operations relative to the baseline.
    pub relative_ops: f64,
    pub reference_wallclock_ratio: f64,
}

pub fn counters_report(c: &OpCounters, baseline: &OpCounters) -> CostReport {
    let d = |a: u64, b: u64| a as i64 - b as i64;
    let delta_policy_logprob_evals = d(c.policy_logprob_evals, baseline.policy_logprob_evals);
    let delta_ref_logprob_evals = d(c.ref_logprob_evals, baseline.ref_logprob_evals);
    CostReport {
        delta_policy_logprob_evals,
        delta_ref_logprob_evals,
        delta_judge_queries: d(c.judge_queries, baseline.judge_queries),
        delta_generated_samples: d(c.generated_samples, baseline.generated_samples),
        extra_scoring_ops: delta_policy_logprob_evals + delta_ref_logprob_evals,
        total_extra_ops: d(c.total(), baseline.total()),
        relative_ops: if baseline.total() == 0 {
            if c.total() == 0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            c.total() as f64 / baseline.total() as f64
        },
        reference_wallclock_ratio: REFERENCE_WALLCLOCK_RATIO,
    }
}

impl std::fmt::Display for CostReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "extra scoring evals {} (policy {:+}, ref {:+}), judge queries {:+}, samples {:+}; \
             counted ops x{:.2} vs baseline (LLM-scale wall-clock reference: x{:.1}, not reproduced)",
            self.extra_scoring_ops,
            self.delta_policy_logprob_evals,
            self.delta_ref_logprob_evals,
            self.delta_judge_queries,
            self.delta_generated_samples,
            self.relative_ops,
            self.reference_wallclock_ratio
        )
    }
}
