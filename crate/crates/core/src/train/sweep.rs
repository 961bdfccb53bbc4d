use serde::{Deserialize, Serialize};

use super::cv::{run_cv, CvOptions, CvResult};
use crate::data::{SequenceSample, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// Window ranges swept by default, in seconds.
pub const DEFAULT_RANGES_S: [f64; 6] = [0.5, 1.0, 3.0, 5.0, 10.0, 20.0];

/// Cross-validated UAR of one variant at one window range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub variant: Variant,
    /// Window range (or fixed window size) in steps.
    pub r: usize,
    pub s: usize,
    pub mean: f64,
    pub std: f64,
    pub uars: Vec<f64>,
}

impl SweepCell {
    pub fn from_cv(cv: &CvResult, config: &ModelConfig) -> Self {
        let (mean, std) = cv.summary();
        Self {
            variant: config.variant,
            r: config.r,
            s: config.s,
            mean,
            std,
            uars: cv.test_uars(),
        }
    }

    pub fn range_s(&self) -> f64 {
        self.r as f64 / SAMPLE_RATE_HZ
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cells_of(&self, variant: Variant) -> impl Iterator<Item = &SweepCell> {
        self.cells.iter().filter(move |c| c.variant == variant)
    }

    /// Largest minus smallest mean UAR of `variant` across ranges.
    pub fn spread(&self, variant: Variant) -> Option<f64> {
        let means: Vec<f64> = self.cells_of(variant).map(|c| c.mean).collect();
        if means.is_empty() {
            return None;
        }
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        Some(max - min)
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = self.cells.iter().map(|c| c.variant).collect();
        v.dedup();
        v
    }
}

/// Step of a window of range `r`: half the range, as in the default
/// `r = 30, s = 15`.
pub fn step_for(r: usize) -> usize {
    (r / 2).max(1)
}

/// Cross-validates each variant at each window range (in steps), with the
/// step tied to the range by [`step_for`].
pub fn sweep_windows(
    samples: &[SequenceSample],
    base: &ModelConfig,
    variants: &[Variant],
    ranges: &[usize],
    options: &CvOptions,
) -> Result<SweepReport> {
    if ranges.is_empty() {
        return Err(Error::Config("at least one window range is required".into()));
    }
    if let Some(v) = variants
        .iter()
        .find(|v| !matches!(v, Variant::Swan | Variant::SwanNoSelfatt | Variant::WindowedLinear))
    {
        return Err(Error::Config(format!("variant {v} has no window range to sweep")));
    }
    let mut report = SweepReport::default();
    for &variant in variants {
        for &r in ranges {
            let config = ModelConfig {
                variant,
                r,
                s: step_for(r),
                ..base.clone()
            };
            let cv = run_cv(samples, &config, options)?;
            report.cells.push(SweepCell::from_cv(&cv, &config));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(variant: Variant, r: usize, mean: f64) -> SweepCell {
        SweepCell {
            variant,
            r,
            s: step_for(r),
            mean,
            std: 0.0,
            uars: vec![mean],
        }
    }

    #[test]
    fn spread_is_max_minus_min() {
        let report = SweepReport {
            cells: vec![
                cell(Variant::Swan, 10, 0.9),
                cell(Variant::Swan, 30, 0.95),
                cell(Variant::Swan, 50, 0.92),
                cell(Variant::WindowedLinear, 10, 0.7),
            ],
        };
        assert!((report.spread(Variant::Swan).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(report.spread(Variant::WindowedLinear), Some(0.0));
        assert_eq!(report.spread(Variant::Transformer), None);
    }

    #[test]
    fn steps_follow_ranges() {
        assert_eq!(step_for(30), 15);
        assert_eq!(step_for(5), 2);
        assert_eq!(step_for(1), 1);
    }
}
