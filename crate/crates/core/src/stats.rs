//! Summary statistics and Welch's unequal-variance t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum WelchOutcome {
    Ok {
        t: f64,
        df: f64,
        p_value: f64,
    },
    /// Too few samples, or zero variance on both sides.
    Degenerate,
}

impl WelchOutcome {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            WelchOutcome::Ok { p_value, .. } => Some(*p_value),
            WelchOutcome::Degenerate => None,
        }
    }
}

/// Two-sided Welch test of equal means.
pub fn welch_test(a: &[f64], b: &[f64]) -> WelchOutcome {
    if a.len() < 2 || b.len() < 2 {
        return WelchOutcome::Degenerate;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_std(a).powi(2) / na, sample_std(b).powi(2) / nb);
    let se2 = va + vb;
    if se2 <= 0.0 {
        return WelchOutcome::Degenerate;
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let p_value = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    WelchOutcome::Ok { t, df, p_value }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_oracle() {
        let v = [0.60, 0.62, 0.64];
        assert!((mean(&v) - 0.62).abs() < 1e-15);
        assert!((sample_std(&v) - 0.02).abs() < 1e-12);
        assert_eq!(sample_std(&[0.5]), 0.0);
        assert_eq!(sample_std(&[0.3, 0.3, 0.3]), 0.0);
    }

    #[test]
    fn welch_against_reference_values() {
        // scipy.stats.ttest_ind(a, b, equal_var=False)
        let a = [
            27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4,
        ];
        let b = [
            27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4,
        ];
        match welch_test(&a, &b) {
            WelchOutcome::Ok { t, df, p_value } => {
                assert!((t + 2.455_356_398_286_006).abs() < 1e-9, "{t}");
                assert!((df - 24.988_529_290_231_416).abs() < 1e-6, "{df}");
                assert!((p_value - 0.021_378_001_462_867).abs() < 1e-7, "{p_value}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(welch_test(&[1.0, 1.0], &[1.0, 1.0]), WelchOutcome::Degenerate);
        assert_eq!(welch_test(&[1.0], &[1.0, 2.0]), WelchOutcome::Degenerate);
    }
}
