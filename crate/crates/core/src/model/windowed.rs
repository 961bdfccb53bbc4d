//! Fixed-window pooled-statistics features for the linear baseline.

use crate::attention::WindowSpec;
use crate::data::Series;

/// Statistics computed per window and channel.
pub const STATS: [&str; 4] = ["mean", "std", "min", "max"];

/// Mean over windows of per-window (mean, std, min, max) for every channel.
///
/// Windows of `size` steps start every `step` steps and are clipped at the
/// end of the series; output layout is `[stat][channel]`.
pub fn pooled_window_features(series: &Series, size: usize, step: usize) -> Vec<f64> {
    let width = series.width();
    let len = series.len();
    let mut out = vec![0.0; STATS.len() * width];
    if len == 0 {
        return out;
    }
    let spec = WindowSpec {
        range: size.max(1),
        step: step.max(1),
        self_range: 0,
    };
    let windows = spec.num_windows(len);
    for w in 0..windows {
        let span = spec.window(w, len);
        let n = span.len() as f64;
        for c in 0..width {
            let (mut sum, mut sq) = (0.0, 0.0);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for t in span.clone() {
                let v = series.row(t)[c];
                sum += v;
                sq += v * v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            out[c] += mean;
            out[width + c] += var.sqrt();
            out[2 * width + c] += lo;
            out[3 * width + c] += hi;
        }
    }
    out.iter_mut().for_each(|v| *v /= windows as f64);
    out
}
