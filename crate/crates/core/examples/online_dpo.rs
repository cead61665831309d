//! One online DPO run with APL selection: SFT fit, training log, and the
//! final evaluation against the SFT reference.

use dpolab::eval::{capability_report, estimate_win_rate};
use dpolab::judges::{make_judge, JudgeSpec};
use dpolab::selection::Selector;
use dpolab::streams::stream;
use dpolab::trainer::{run_online_dpo, sft_fit, TrainConfig};
use dpolab::universe::{generate_universe, UniverseConfig};

fn main() -> dpolab::Result<()> {
    let u = generate_universe(&UniverseConfig {
        misalignment_rho: 0.5,
        seed: 5,
        ..Default::default()
    })?;
    let mut cfg = TrainConfig {
        selector: Selector::Apl,
        ..Default::default()
    };
    cfg.dpo.max_steps = 200;

    let sft = sft_fit(&u, &cfg)?;
    let run = run_online_dpo(&u, &sft, &cfg)?;
    for log in run.per_iteration.iter().step_by(40) {
        println!(
            "iter {:>3}  loss {:.4}  pairs {:>2}  lr {:.4}  entropy mean {:.3}",
            log.iteration,
            log.mean_loss.unwrap_or(f64::NAN),
            log.labeled_pairs,
            log.lr,
            log.entropy_mean
        );
    }
    println!(
        "labeled pairs {}, shortfall events {}",
        run.labeled_pairs(),
        run.shortfalls()
    );

    let mut evaluator = make_judge(&JudgeSpec::preset("strong").unwrap().with_label("eval"), &u)?;
    let w = estimate_win_rate(
        &run.final_policy,
        &sft,
        &mut evaluator,
        &u,
        10_000,
        &mut stream(cfg.run_seed, "eval"),
    )?;
    let cap = capability_report(&run.final_policy, &sft, &u, 0.1)?;
    println!("win-rate vs SFT {:.3} [{:.3}, {:.3}]", w.rate, w.ci_low, w.ci_high);
    println!(
        "probe accuracy {:.3} ({:+.2} pp vs SFT), mean entropy {:.3}, collapsed {}",
        cap.probe_accuracy, cap.delta_vs_sft, cap.mean_policy_entropy, cap.collapse_flag
    );
    Ok(())
}
