//! Brute-force energy detector used to check the synthetic task is solvable.

use std::borrow::Borrow;

use super::generator::SIGNATURE_CHANNELS;
use super::sample::SequenceSample;
use crate::error::Result;
use crate::train::uar;

/// Window length (steps) of the energy detector.
pub const ORACLE_WINDOW: usize = 20;

/// Maximum over windows of the mean energy of the mean-centred signature
/// channels.
pub fn energy_scores<S: Borrow<SequenceSample>>(samples: &[S]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            let series = &s.borrow().series;
            let len = series.len();
            let energy: Vec<f64> = {
                let means: Vec<f64> = SIGNATURE_CHANNELS
                    .iter()
                    .map(|&(c, _)| series.column(c).sum::<f64>() / len as f64)
                    .collect();
                series
                    .rows()
                    .map(|r| {
                        SIGNATURE_CHANNELS
                            .iter()
                            .zip(&means)
                            .map(|(&(c, _), m)| (r[c] - m).powi(2))
                            .sum()
                    })
                    .collect()
            };
            let w = ORACLE_WINDOW.min(len);
            let mut sum: f64 = energy[..w].iter().sum();
            let mut best = sum;
            for t in w..len {
                sum += energy[t] - energy[t - w];
                best = best.max(sum);
            }
            best / w as f64
        })
        .collect()
}

/// UAR of the energy detector at its best threshold: scores above the
/// threshold predict label 0 (the event-carrying class).
pub fn energy_detector_uar<S: Borrow<SequenceSample>>(samples: &[S]) -> Result<f64> {
    let scores = energy_scores(samples);
    let labels: Vec<u8> = samples.iter().map(|s| s.borrow().label).collect();
    let mut thresholds = scores.clone();
    thresholds.sort_by(f64::total_cmp);
    let mut best = 0.0f64;
    for &t in &thresholds {
        let pred: Vec<u8> = scores.iter().map(|&v| u8::from(v < t)).collect();
        best = best.max(uar(&pred, &labels)?);
    }
    Ok(best)
}
