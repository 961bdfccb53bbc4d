use std::collections::BTreeMap;

use super::sample::{Series, DISCRETE_CHANNELS, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

/// Downsamples `series` recorded at `rate_hz` to 10 Hz.
///
/// Input step `k` falls in bin `floor(k · 10 / rate_hz)`. Continuous
/// channels take the bin mean; the flag and category channels take the
/// bin's most frequent value (smallest value on ties).
pub fn resample(series: &Series, rate_hz: f64) -> Result<Series> {
    if !(rate_hz.is_finite() && rate_hz >= SAMPLE_RATE_HZ) {
        return Err(Error::Input(format!(
            "unsupported upsampling: rate {rate_hz} Hz is below {SAMPLE_RATE_HZ} Hz"
        )));
    }
    let width = series.width();
    if series.is_empty() {
        return Series::new(width, Vec::new());
    }
    let ratio = SAMPLE_RATE_HZ / rate_hz;
    let bin_of = |k: usize| (k as f64 * ratio).floor() as usize;
    let bins = bin_of(series.len() - 1) + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for k in 0..series.len() {
        members[bin_of(k)].push(k);
    }
    let mut data = Vec::with_capacity(bins * width);
    for steps in &members {
        for c in 0..width {
            let values = steps.iter().map(|&k| series.row(k)[c]);
            let v = if steps.is_empty() {
                0.0
            } else if DISCRETE_CHANNELS.contains(&c) {
                let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
                for v in values {
                    counts.entry(order_key(v)).or_insert((v, 0)).1 += 1;
                }
                let best = counts.values().map(|&(_, n)| n).max().unwrap_or(0);
                counts
                    .values()
                    .find(|&&(_, n)| n == best)
                    .map_or(0.0, |&(v, _)| v)
            } else {
                values.sum::<f64>() / steps.len() as f64
            };
            data.push(v);
        }
    }
    Series::new(width, data)
}

/// Monotone map from `f64` to `u64` so the map iterates in value order.
fn order_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_channel_at(c: usize, values: &[f64]) -> Series {
        let mut data = vec![0.0; values.len() * 10];
        for (k, v) in values.iter().enumerate() {
            data[k * 10 + c] = *v;
        }
        Series::new(10, data).unwrap()
    }

    #[test]
    fn mean_for_continuous_mode_for_flags() {
        let s = resample(&one_channel_at(0, &[1.0, 2.0, 3.0]), 30.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.row(0)[0], 2.0);
        let s = resample(&one_channel_at(4, &[0.0, 1.0, 1.0]), 30.0).unwrap();
        assert_eq!(s.row(0)[4], 1.0);
    }

    #[test]
    fn mode_ties_pick_smallest() {
        let s = resample(&one_channel_at(9, &[0.4, -0.2]), 20.0).unwrap();
        assert_eq!(s.row(0)[9], -0.2);
    }

    #[test]
    fn constant_series_stays_constant() {
        let s = Series::new(10, vec![3.5; 90 * 10]).unwrap();
        let r = resample(&s, 30.0).unwrap();
        assert_eq!(r.len(), 30);
        assert!(r.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn ten_hz_is_identity_and_below_is_rejected() {
        let s = one_channel_at(2, &[1.0, -4.0, 2.5]);
        assert_eq!(resample(&s, 10.0).unwrap(), s);
        assert!(matches!(resample(&s, 5.0), Err(Error::Input(_))));
    }
}
