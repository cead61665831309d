//! Analytic DPO gradient against central finite differences on a random
//! instance, and the ln 2 loss at the reference point.

use dpolab::dpo::{dpo_batch_grad, dpo_example_loss, PreferenceTriple};
use dpolab::policy::Policy;
use dpolab::streams::stream;
use dpolab::universe::{generate_universe, Role, UniverseConfig};
use rand::Rng;

fn main() -> dpolab::Result<()> {
    let u = generate_universe(&UniverseConfig {
        num_train_prompts: 16,
        num_eval_prompts: 1,
        num_probe_prompts: 1,
        responses_per_prompt: 6,
        feature_dim: 8,
        seed: 11,
        ..Default::default()
    })?;
    let mut rng = stream(11, "example");
    let d = u.feature_dim();
    let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let theta_ref: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (p, reference) = (Policy::new("p", theta), Policy::new("ref", theta_ref));
    let beta = 0.5;

    let batch: Vec<PreferenceTriple> = u
        .ids(Role::Train)
        .into_iter()
        .map(|prompt_id| {
            let winner = rng.random_range(0..6);
            let loser = (winner + rng.random_range(1..6)) % 6;
            PreferenceTriple {
                prompt_id,
                winner,
                loser,
                annotator: "synthetic".into(),
                iteration: 1,
            }
        })
        .collect();

    let (loss, grad) = dpo_batch_grad(&p, &reference, &u, &batch, beta)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let shifted = |s: f64| {
            let mut t = p.theta.clone();
            t[i] += s;
            dpo_batch_grad(&Policy::new("p", t), &reference, &u, &batch, beta).map(|(l, _)| l)
        };
        let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-12);
        worst = worst.max(rel);
        println!("  dθ[{i}]: analytic {:+.9}  fd {:+.9}", grad[i], fd);
    }
    println!("batch loss {loss:.6}, worst relative error {worst:.2e}");

    let at_ref = dpo_example_loss(&reference, &reference, &u, &batch[0], beta)?;
    println!(
        "loss at θ = θ_ref: {at_ref:.15} (ln 2 = {:.15})",
        std::f64::consts::LN_2
    );
    Ok(())
}
