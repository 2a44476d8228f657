//! The two accuracy metrics and the evaluation report.

use crate::certify::CertificationResult;
use crate::error::{Error, Result};

/// Fraction of predictions matching the labels.
pub fn conventional_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / predictions.len() as f64)
}

/// Fraction of examples that are both correctly labeled and certified
/// robust at attack size mu_a. Always at most the conventional accuracy.
pub fn certified_accuracy(
    results: &[CertificationResult],
    labels: &[usize],
    mu_a: f64,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    if results.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} certifications vs {} labels",
            results.len(),
            labels.len()
        )));
    }
    let hits = results
        .iter()
        .zip(labels)
        .filter(|(r, &l)| r.label == l && r.is_robust_at(mu_a))
        .count();
    Ok(hits as f64 / results.len() as f64)
}

/// Evaluation summary written by `attack-eval`.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub conventional_acc: f64,
    pub certified_acc: f64,
    /// (attack name, accuracy under that attack at the configured radius)
    pub per_attack: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out.push_str(&format!("conventional_acc,{}\n", self.conventional_acc));
        out.push_str(&format!("certified_acc,{}\n", self.certified_acc));
        for (name, acc) in &self.per_attack {
            out.push_str(&format!("attack_acc_{name},{acc}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result_with(label: usize, radius: f64) -> CertificationResult {
        CertificationResult {
            label,
            e_hat: vec![0.5, 0.5],
            e_lb: vec![0.4, 0.4],
            e_ub: vec![0.6, 0.6],
            eps_r_star: 0.1,
            radius,
            eta: 0.95,
        }
    }

    #[test]
    fn conventional_cases() {
        assert_eq!(conventional_accuracy(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(conventional_accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(conventional_accuracy(&[0, 1, 1, 0], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert!(conventional_accuracy(&[], &[]).is_err());
        assert!(conventional_accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn certified_cases_and_subset_property() {
        let results = vec![result_with(0, 0.3), result_with(1, 0.1), result_with(0, 0.3)];
        let labels = vec![0, 1, 1];
        let mu_a = 0.2;
        let cert = certified_accuracy(&results, &labels, mu_a).unwrap();
        // only the first example is correct AND certified at 0.2
        assert!((cert - 1.0 / 3.0).abs() < 1e-12);
        let preds: Vec<usize> = results.iter().map(|r| r.label).collect();
        let conv = conventional_accuracy(&preds, &labels).unwrap();
        assert!(cert <= conv);

        assert_eq!(certified_accuracy(&results, &labels, 1.0).unwrap(), 0.0);
        assert_eq!(
            certified_accuracy(&results[..2], &labels[..2], 0.05).unwrap(),
            1.0
        );
    }
}
