//! Builds a dense and a tabular universe, validates both, and prints a few
//! prompts. Pass a path to also write the dense universe as JSON.

use dpolab::linalg::dot;
use dpolab::universe::{generate_universe, validate_universe, Role, UniverseConfig};

fn main() -> dpolab::Result<()> {
    let cfg = UniverseConfig {
        num_train_prompts: 256,
        num_eval_prompts: 32,
        num_probe_prompts: 64,
        feature_dim: 16,
        misalignment_rho: -0.8,
        seed: 3,
        ..Default::default()
    };
    let u = generate_universe(&cfg)?;
    let report = validate_universe(&u);
    println!(
        "dense: {} prompts, d={}, valid={}",
        u.prompts.len(),
        u.feature_dim(),
        report.is_valid()
    );
    println!(
        "cos(u, g) = {:.6} (target {})",
        dot(&u.probe_direction, &u.proxy_bias_direction),
        cfg.misalignment_rho
    );
    for x in u.with_role(Role::Probe).take(3) {
        let rewards: Vec<String> = x.true_reward.iter().map(|r| format!("{r:+.2}")).collect();
        println!(
            "  probe {:>3}: r* = [{}], correct = {:?}",
            x.prompt_id,
            rewards.join(" "),
            x.correct_response
        );
    }

    let tab = generate_universe(&UniverseConfig::tabular(8, 2, 2, 4, 3))?;
    println!(
        "tabular: {} prompts, d={}, valid={}",
        tab.prompts.len(),
        tab.feature_dim(),
        validate_universe(&tab).is_valid()
    );

    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, u.to_json()?).map_err(|e| dpolab::Error::io(&path, e))?;
        println!("wrote {path}");
    }
    Ok(())
}
