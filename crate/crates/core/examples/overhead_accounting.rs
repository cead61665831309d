//! Operation counts for one APL iteration against Random on the same
//! candidates: 4 prompts, 4 candidates each, the 2 highest-entropy prompts
//! kept, so 2 × C(4,2) pairs scored at 2 policy + 2 reference evals each.

use dpolab::policy::Policy;
use dpolab::selection::{
    counters_report, form_pairs, generate_candidates, select_apl, select_random, OpCounters, SelectionConfig,
};
use dpolab::streams::stream;
use dpolab::universe::{generate_universe, UniverseConfig};

fn main() -> dpolab::Result<()> {
    let u = generate_universe(&UniverseConfig {
        num_train_prompts: 4,
        num_eval_prompts: 1,
        num_probe_prompts: 1,
        responses_per_prompt: 64,
        feature_dim: 8,
        seed: 2,
        ..Default::default()
    })?;
    let cfg = SelectionConfig {
        batch_prompts: 4,
        candidates_per_prompt: 4,
        apl_top_prompts: 2,
        label_budget: 2,
    };
    let p = Policy::zeros("sft", u.feature_dim());
    let reference = p.clone().relabel("ref");

    let mut shared = OpCounters::default();
    let sets = generate_candidates(&p, &u, &[0, 1, 2, 3], &cfg, &mut stream(0, "candidates"), &mut shared)?;
    let pools: Vec<_> = sets.iter().map(form_pairs).collect();
    for (s, pool) in sets.iter().zip(&pools) {
        println!(
            "prompt {}: candidates {:?}, {} pairs",
            s.prompt_id,
            s.candidates,
            pool.pairs.len()
        );
    }

    let random = select_random(&pools, cfg.label_budget, &mut stream(0, "selection"));
    let mut apl_counters = shared;
    let apl = select_apl(&p, &reference, &u, &sets, &pools, &cfg, 0.1, &mut apl_counters)?;
    println!(
        "random picks {:?}",
        random.picks.iter().map(|s| (s.prompt_id, s.pair)).collect::<Vec<_>>()
    );
    println!(
        "apl picks    {:?}",
        apl.picks.iter().map(|s| (s.prompt_id, s.pair)).collect::<Vec<_>>()
    );

    let kept_pairs: usize = 2 * cfg.pairs_per_prompt();
    println!("closed form: 4 x {kept_pairs} = {}", 4 * kept_pairs);
    println!("counted:     {}", apl_counters.scoring_evals());
    println!("{}", counters_report(&apl_counters, &shared));
    Ok(())
}
