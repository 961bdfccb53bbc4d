use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Binary confusion counts with label 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Metric(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            match (p != 0, l != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// Recall of label 1.
    pub fn recall_1(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// Recall of label 0.
    pub fn recall_0(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp) as f64
    }

    pub fn uar(&self) -> Result<f64> {
        if self.tp + self.fn_ == 0 || self.tn + self.fp == 0 {
            return Err(Error::Metric("UAR needs both classes among the labels".into()));
        }
        Ok(0.5 * (self.recall_0() + self.recall_1()))
    }
}

/// Unweighted average recall: the mean of the two per-class recalls.
pub fn uar(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    Confusion::from_predictions(predictions, labels)?.uar()
}

/// Result of a two-sided paired t-test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_diff: f64,
}

/// Two-sided paired t-test of `a − b`. Identical samples give `t = 0`,
/// `p = 1`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Metric(format!(
            "paired t-test needs two equal-length vectors of at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            p,
            df,
            mean_diff: mean,
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|e| Error::Metric(format!("t distribution: {e}")))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        df,
        mean_diff: mean,
    })
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recalls_point_eight_and_point_six() {
        // Label 1: 4 of 5 recalled; label 0: 3 of 5 recalled.
        let labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let preds = [1, 1, 1, 1, 0, 0, 0, 0, 1, 1];
        assert!((uar(&preds, &labels).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(uar(&labels, &labels).unwrap(), 1.0);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(uar(&[1, 0], &[1, 1]), Err(Error::Metric(_))));
    }

    #[test]
    fn t_test_against_self() {
        let a = [0.8, 0.7, 0.9, 0.85];
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn t_test_known_value() {
        // d = [1, 2, 3, 4]: mean 2.5, sd 1.2910, t = 3.8730, df 3.
        let a = [2.0, 4.0, 6.0, 8.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.t - 3.872983346207417).abs() < 1e-12);
        assert!((r.p - 0.030466).abs() < 1e-5, "{}", r.p);
    }
}
