//! Proxy win-rate against true capability: the same training loop driven by
//! a misaligned weak judge and by the faithful oracle.

use dpolab::eval::{capability_delta, estimate_win_rate, mean_entropy};
use dpolab::judges::{make_judge, JudgeSpec};
use dpolab::streams::stream;
use dpolab::trainer::{run_online_dpo, sft_fit, TrainConfig};
use dpolab::universe::{generate_universe, Role, UniverseConfig};

fn main() -> dpolab::Result<()> {
    let u = generate_universe(&UniverseConfig {
        feature_dim: 32,
        misalignment_rho: -0.8,
        seed: 1,
        ..Default::default()
    })?;
    let mut cfg = TrainConfig::default();
    cfg.dpo.max_steps = 300;
    let sft = sft_fit(&u, &cfg)?;
    println!("SFT entropy {:.3}", mean_entropy(&sft, &u, Role::Eval)?);

    let oracle = JudgeSpec::preset("oracle").unwrap();
    for annotator in ["weak", "oracle"] {
        let spec = JudgeSpec::preset(annotator).unwrap();
        for seed in [42, 43, 44] {
            cfg.annotator = spec.clone();
            cfg.run_seed = seed;
            let run = run_online_dpo(&u, &sft, &cfg)?;
            let p = &run.final_policy;
            let mut proxy = make_judge(&spec.clone().with_label("proxy-eval").with_seed(seed), &u)?;
            let mut truth = make_judge(&oracle.clone().with_label("truth-eval"), &u)?;
            let proxy_win = estimate_win_rate(p, &sft, &mut proxy, &u, 10_000, &mut stream(seed, "eval"))?;
            let true_win = estimate_win_rate(p, &sft, &mut truth, &u, 10_000, &mut stream(seed, "eval"))?;
            println!(
                "{annotator:>6} seed {seed}: proxy win {:.3}  true win {:.3}  Δacc {:+6.1} pp  entropy {:.3}",
                proxy_win.rate,
                true_win.rate,
                capability_delta(p, &sft, &u)?,
                mean_entropy(p, &u, Role::Eval)?
            );
        }
    }
    Ok(())
}
