use serde::{Deserialize, Serialize};

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::model::Model;

/// Default smoothing width in steps (0.5 s at 10 Hz).
pub const DEFAULT_SIGMA: f64 = 5.0;

/// Per-step attention of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub segment_id: String,
    pub probability: f64,
    /// Unsmoothed per-step aggregate over the real steps.
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub window_weights: Vec<f64>,
    pub event: Option<(usize, usize)>,
}

impl AttentionExport {
    /// Fraction of smoothed attention mass inside the planted interval.
    pub fn event_mass(&self) -> Option<f64> {
        self.event.map(|(a, b)| interval_mass(&self.smoothed, a, b))
    }

    /// Event mass divided by the interval's share of the sequence; 1 means
    /// no preference for the interval.
    pub fn event_ratio(&self) -> Option<f64> {
        let (a, b) = self.event?;
        let share = (b - a) as f64 / self.smoothed.len() as f64;
        self.event_mass().map(|m| m / share)
    }
}

/// Share of the total of `series` that falls in `start..end`.
pub fn interval_mass(series: &[f64], start: usize, end: usize) -> f64 {
    let total: f64 = series.iter().sum();
    let end = end.min(series.len());
    let inside: f64 = series[start.min(end)..end].iter().sum();
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// Gaussian smoothing truncated at 3σ. Each step spreads its value over
/// the in-range steps of its kernel, renormalized so the total is
/// preserved. `sigma == 0` returns the input unchanged.
pub fn gaussian_smooth(series: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(series.to_vec());
    }
    let reach = (3.0 * sigma).floor() as usize;
    let kernel: Vec<f64> = (0..=reach)
        .map(|d| (-0.5 * (d as f64 / sigma).powi(2)).exp())
        .collect();
    let n = series.len();
    let mut out = vec![0.0; n];
    for (t, &v) in series.iter().enumerate() {
        let lo = t.saturating_sub(reach);
        let hi = (t + reach).min(n.saturating_sub(1));
        let norm: f64 = (lo..=hi).map(|u| kernel[u.abs_diff(t)]).sum();
        for u in lo..=hi {
            out[u] += v * kernel[u.abs_diff(t)] / norm;
        }
    }
    Ok(out)
}

/// Per-step attention: `Σ_i |w_i| · A[i, t]` over windows `i`, then
/// Gaussian smoothing with `sigma` steps.
pub fn export_attention(model: &Model, sample: &SequenceSample, sigma: f64) -> Result<AttentionExport> {
    if !model.variant().has_window_attention() {
        return Err(Error::Capability(format!(
            "variant {} has no window attention to export",
            model.variant()
        )));
    }
    let (probability, trace) = model.predict_with_trace(sample)?;
    let trace = trace.ok_or_else(|| {
        Error::Capability(format!("variant {} produced no trace", model.variant()))
    })?;
    let len = trace.valid_len;
    let mut raw = vec![0.0; len];
    for (row, w) in trace.attention.iter().zip(&trace.window_weights) {
        for (r, a) in raw.iter_mut().zip(row) {
            *r += w.abs() * a;
        }
    }
    let smoothed = gaussian_smooth(&raw, sigma)?;
    Ok(AttentionExport {
        segment_id: sample.segment_id.clone(),
        probability,
        raw,
        smoothed,
        window_weights: trace.window_weights,
        event: sample.event,
    })
}
