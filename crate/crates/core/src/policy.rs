//! Linear softmax policy: `π_θ(y|x) ∝ exp⟨θ, φ(x, y)⟩`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::logsumexp;
use crate::universe::PromptRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub label: String,
    #[serde(rename = "d")]
    pub feature_dim: usize,
    pub theta: Vec<f64>,
}

impl Policy {
    pub fn new(label: impl Into<String>, theta: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            feature_dim: theta.len(),
            theta,
        }
    }

    pub fn zeros(label: impl Into<String>, d: usize) -> Self {
        Self::new(label, vec![0.0; d])
    }

    pub fn relabel(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.is_finite())
    }

    fn check_dims(&self, x: &PromptRecord) -> Result<()> {
        if self.theta.len() != self.feature_dim || x.features.dim() != self.feature_dim {
            return Err(Error::contract(format!(
                "policy '{}' has d={} (theta len {}), prompt {} has d={}",
                self.label,
                self.feature_dim,
                self.theta.len(),
                x.prompt_id,
                x.features.dim()
            )));
        }
        Ok(())
    }

    fn check_response(x: &PromptRecord, y: usize) -> Result<()> {
        if y >= x.features.num_responses() {
            return Err(Error::contract(format!(
                "response {y} out of range for prompt {} (V={})",
                x.prompt_id,
                x.features.num_responses()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, x: &PromptRecord) -> Result<Vec<f64>> {
        self.check_dims(x)?;
        Ok((0..x.features.num_responses())
            .map(|y| x.features.dot_row(y, &self.theta))
            .collect())
    }

    /// All `log π(y|x)`, normalised with the max-subtracted logsumexp.
    pub fn log_probs(&self, x: &PromptRecord) -> Result<Vec<f64>> {
        let logits = self.logits(x)?;
        let lse = logsumexp(&logits);
        Ok(logits.into_iter().map(|l| l - lse).collect())
    }

    pub fn probs(&self, x: &PromptRecord) -> Result<Vec<f64>> {
        Ok(self.log_probs(x)?.into_iter().map(f64::exp).collect())
    }

    pub fn log_prob(&self, x: &PromptRecord, y: usize) -> Result<f64> {
        Self::check_response(x, y)?;
        Ok(self.log_probs(x)?[y])
    }

    /// Draws one response by inverse CDF in index order; consumes exactly
    /// one uniform from `rng`. Returns the response and its log-prob.
    pub fn sample_response<R: Rng + ?Sized>(&self, x: &PromptRecord, rng: &mut R) -> Result<(usize, f64)> {
        let log_probs = self.log_probs(x)?;
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut chosen = log_probs.len() - 1;
        for (y, lp) in log_probs.iter().enumerate() {
            cumulative += lp.exp();
            if u < cumulative {
                chosen = y;
                break;
            }
        }
        Ok((chosen, log_probs[chosen]))
    }

    /// `∇_θ log π(y|x) = φ(x,y) − Σ_y' π(y'|x) φ(x,y')`.
    pub fn grad_log_prob(&self, x: &PromptRecord, y: usize) -> Result<Vec<f64>> {
        Self::check_response(x, y)?;
        let probs = self.probs(x)?;
        let mut grad = x.features.row(y);
        for (yp, p) in probs.iter().enumerate() {
            x.features.add_row_scaled(yp, -p, &mut grad);
        }
        Ok(grad)
    }

    pub fn exact_entropy(&self, x: &PromptRecord) -> Result<f64> {
        let log_probs = self.log_probs(x)?;
        let h: f64 = log_probs
            .iter()
            .filter(|lp| lp.is_finite())
            .map(|lp| -lp.exp() * lp)
            .sum();
        Ok(h.max(0.0))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Policy = serde_json::from_str(text)?;
        if p.theta.len() != p.feature_dim {
            return Err(Error::contract(format!(
                "checkpoint '{}' declares d={} but has {} weights",
                p.label,
                p.feature_dim,
                p.theta.len()
            )));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::stream;
    use crate::universe::{Features, Role};

    fn one_hot_prompt(v: usize) -> PromptRecord {
        PromptRecord {
            prompt_id: 0,
            role: Role::Train,
            features: Features::OneHot {
                one_hot_base: 0,
                responses: v,
                dim: v,
            },
            true_reward: vec![0.0; v],
            correct_response: None,
        }
    }

    #[test]
    fn zero_theta_is_uniform() {
        let x = one_hot_prompt(4);
        let p = Policy::zeros("sft", 4);
        assert_eq!(p.logits(&x).unwrap(), vec![0.0; 4]);
        for y in 0..4 {
            assert!((p.log_prob(&x, y).unwrap() + 4f64.ln()).abs() < 1e-15);
        }
        assert!((p.exact_entropy(&x).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn one_hot_logits_select_coordinates() {
        let x = one_hot_prompt(2);
        let p = Policy::new("p", vec![0.7, -0.1]);
        assert_eq!(p.logits(&x).unwrap(), vec![0.7, -0.1]);
        // logsumexp(0.7, -0.1) = 1.0711006659477777 (40-digit oracle)
        assert!((p.log_prob(&x, 0).unwrap() + 0.371_100_665_947_777_7).abs() < 1e-12);
        // entropy of (0.689974, 0.310026)
        assert!((p.exact_entropy(&x).unwrap() - 0.619_121_081_045_687_8).abs() < 1e-12);
    }

    #[test]
    fn errors_on_bad_inputs() {
        let x = one_hot_prompt(2);
        let p = Policy::zeros("p", 3);
        assert!(matches!(p.logits(&x), Err(Error::Contract(_))));
        let p = Policy::zeros("p", 2);
        assert!(matches!(p.log_prob(&x, 2), Err(Error::Contract(_))));
        assert!(matches!(p.grad_log_prob(&x, 5), Err(Error::Contract(_))));
    }

    #[test]
    fn uniform_gradient_and_point_mass() {
        let x = one_hot_prompt(2);
        let p = Policy::zeros("p", 2);
        assert_eq!(p.grad_log_prob(&x, 0).unwrap(), vec![0.5, -0.5]);
        let spike = Policy::new("p", vec![1e6, 0.0]);
        let g = spike.grad_log_prob(&x, 0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(spike.exact_entropy(&x).unwrap(), 0.0);
        let mut rng = stream(3, "t");
        for _ in 0..100 {
            assert_eq!(spike.sample_response(&x, &mut rng).unwrap().0, 0);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let x = one_hot_prompt(5);
        let p = Policy::new("p", vec![0.3, -0.2, 0.9, 0.0, 0.1]);
        let draw = |seed| {
            let mut rng = stream(seed, "gen");
            (0..50)
                .map(|_| p.sample_response(&x, &mut rng).unwrap().0)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(8), draw(8));
    }

    #[test]
    fn checkpoint_roundtrip_keeps_schema() {
        let p = Policy::new("sft", vec![0.25, -1.5]);
        let json = p.to_json().unwrap();
        assert_eq!(json, r#"{"label":"sft","d":2,"theta":[0.25,-1.5]}"#);
        assert_eq!(Policy::from_json(&json).unwrap(), p);
        assert!(Policy::from_json(r#"{"label":"x","d":3,"theta":[1.0]}"#).is_err());
    }
}
