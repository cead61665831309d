use dpolab::dpo::{dpo_batch_grad, dpo_example_loss, implicit_reward, PreferenceTriple};
use dpolab::linalg::{dot, logsumexp};
use dpolab::policy::Policy;
use dpolab::universe::{generate_universe, PromptUniverse, UniverseConfig};
use proptest::prelude::*;

fn universe(d: usize, v: usize, seed: u64) -> PromptUniverse {
    generate_universe(&UniverseConfig {
        num_train_prompts: 6,
        num_eval_prompts: 1,
        num_probe_prompts: 1,
        responses_per_prompt: v,
        feature_dim: d,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn triples(pairs: &[(usize, usize, usize)], v: usize) -> Vec<PreferenceTriple> {
    pairs
        .iter()
        .map(|&(x, w, off)| PreferenceTriple {
            prompt_id: x % 6,
            winner: w % v,
            loser: (w % v + 1 + off % (v - 1)) % v,
            annotator: "t".into(),
            iteration: 1,
        })
        .collect()
}

/// (d, V, universe seed, θ, θ_ref, β, raw triples)
type Instance = (usize, usize, u64, Vec<f64>, Vec<f64>, f64, Vec<(usize, usize, usize)>);

fn instance() -> impl Strategy<Value = Instance> {
    (2usize..=16, 2usize..=8, any::<u64>()).prop_flat_map(|(d, v, seed)| {
        (
            Just(d),
            Just(v),
            Just(seed),
            prop::collection::vec(-2.0..2.0f64, d),
            prop::collection::vec(-2.0..2.0f64, d),
            0.05..2.0f64,
            prop::collection::vec((0usize..6, 0usize..8, 0usize..8), 1..6),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_gradient_matches_central_differences((d, v, seed, theta, theta_ref, beta, pairs) in instance()) {
        let u = universe(d, v, seed);
        let batch = triples(&pairs, v);
        let p = Policy::new("p", theta);
        let reference = Policy::new("ref", theta_ref);
        let (_, grad) = dpo_batch_grad(&p, &reference, &u, &batch, beta).unwrap();
        let h = 1e-5;
        for i in 0..d {
            let at = |s: f64| {
                let mut t = p.theta.clone();
                t[i] += s;
                dpo_batch_grad(&Policy::new("p", t), &reference, &u, &batch, beta).unwrap().0
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-6);
            prop_assert!((fd - grad[i]).abs() / scale <= 1e-6, "coord {i}: analytic {} fd {}", grad[i], fd);
        }
    }

    #[test]
    fn loss_at_reference_is_ln2((d, v, seed, theta, _t, beta, pairs) in instance()) {
        let u = universe(d, v, seed);
        let p = Policy::new("p", theta);
        for t in triples(&pairs, v) {
            let loss = dpo_example_loss(&p, &p, &u, &t, beta).unwrap();
            prop_assert!((loss - std::f64::consts::LN_2).abs() <= 1e-12);
        }
    }

    #[test]
    fn swapping_winner_and_loser_negates_margin((d, v, seed, theta, theta_ref, beta, pairs) in instance()) {
        let u = universe(d, v, seed);
        let p = Policy::new("p", theta);
        let reference = Policy::new("ref", theta_ref);
        for t in triples(&pairs, v) {
            let x = u.prompt(t.prompt_id).unwrap();
            let h = implicit_reward(&p, &reference, x, t.winner, beta).unwrap()
                - implicit_reward(&p, &reference, x, t.loser, beta).unwrap();
            let fwd = dpo_example_loss(&p, &reference, &u, &t, beta).unwrap();
            let swapped = PreferenceTriple { winner: t.loser, loser: t.winner, ..t.clone() };
            let back = dpo_example_loss(&p, &reference, &u, &swapped, beta).unwrap();
            // softplus(-h) - softplus(h) = -h
            prop_assert!((fwd - back + h).abs() <= 1e-9 * (1.0 + h.abs()));
        }
    }

    #[test]
    fn policy_probabilities_are_normalised((d, v, seed, theta, _t, _b, _p) in instance()) {
        let u = universe(d, v, seed);
        let p = Policy::new("p", theta);
        for x in &u.prompts {
            let probs = p.probs(x).unwrap();
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(probs.iter().all(|q| *q >= 0.0));
            let h = p.exact_entropy(x).unwrap();
            prop_assert!(h >= -1e-12 && h <= (v as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn grad_log_prob_is_feature_minus_expectation((d, v, seed, theta, _t, _b, _p) in instance()) {
        let u = universe(d, v, seed);
        let p = Policy::new("p", theta);
        let x = &u.prompts[0];
        let probs = p.probs(x).unwrap();
        let mut expected = vec![0.0; d];
        for (y, q) in probs.iter().enumerate() {
            x.features.add_row_scaled(y, *q, &mut expected);
        }
        for y in 0..v {
            let g = p.grad_log_prob(x, y).unwrap();
            let phi = x.features.row(y);
            for i in 0..d {
                prop_assert!((g[i] - (phi[i] - expected[i])).abs() <= 1e-12);
            }
        }
        // probability-weighted gradients sum to zero
        let mut weighted = vec![0.0; d];
        for (y, q) in probs.iter().enumerate() {
            for (w, gi) in weighted.iter_mut().zip(p.grad_log_prob(x, y).unwrap()) {
                *w += q * gi;
            }
        }
        prop_assert!(weighted.iter().all(|w| w.abs() <= 1e-12));
    }

    #[test]
    fn logsumexp_shift_invariance(values in prop::collection::vec(-700.0..700.0f64, 1..10), c in -500.0..500.0f64) {
        let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
        let a = logsumexp(&values) + c;
        let b = logsumexp(&shifted);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        prop_assert!(b.is_finite());
    }

    #[test]
    fn log_probs_ignore_common_logit_shift(
        (d, v, seed, theta, _t, _b, _p) in instance(), c in -5.0..5.0f64
    ) {
        let u = universe(d, v, seed);
        let p = Policy::new("p", theta);
        let x = &u.prompts[0];
        let logits = p.logits(x).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let lse = logsumexp(&shifted);
        for (y, lp) in p.log_probs(x).unwrap().iter().enumerate() {
            prop_assert!((lp - (shifted[y] - lse)).abs() <= 1e-12);
        }
        prop_assert!((dot(&p.theta, &x.features.row(0)) - logits[0]).abs() <= 1e-9 * (1.0 + logits[0].abs()));
    }
}

#[test]
fn large_logits_stay_finite() {
    let u = universe(4, 5, 9);
    let p = Policy::new("p", vec![800.0, -800.0, 400.0, 0.0]);
    for x in &u.prompts {
        assert!(p.log_probs(x).unwrap().iter().all(|l| l.is_finite()));
        assert!(p.exact_entropy(x).unwrap().is_finite());
    }
}
