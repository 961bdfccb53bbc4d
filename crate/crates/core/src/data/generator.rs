use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sample::{Series, SequenceSample, CHANNELS, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

/// Channels carrying the planted signature, with the sign of the bump.
pub const SIGNATURE_CHANNELS: [(usize, f64); 5] = [(0, -1.0), (1, 1.0), (2, 1.0), (7, 1.0), (8, 1.0)];

/// Gaze channels whose noise is amplified during an event.
const DISPERSION_CHANNELS: [usize; 2] = [5, 6];
const VOICE: usize = 4;
const GAZE_OBJECT: usize = 9;
const GAZE_CATEGORIES: usize = 5;
const VIDEOS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub subjects: usize,
    pub per_subject: usize,
    /// Fraction of samples labeled 0 (insufficient trust).
    pub minority: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Event duration range in seconds.
    pub event_min_s: f64,
    pub event_max_s: f64,
    /// Peak height of the planted bump, in noise standard deviations.
    pub amplitude: f64,
    /// Stationary standard deviation of the background noise.
    pub noise: f64,
    /// AR(1) coefficient of the background noise.
    pub smoothness: f64,
    /// Standard deviation of per-subject channel offsets.
    pub subject_spread: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            subjects: 44,
            per_subject: 38,
            minority: 0.14,
            min_len: 160,
            max_len: 1120,
            event_min_s: 2.0,
            event_max_s: 5.0,
            amplitude: 2.5,
            noise: 1.0,
            smoothness: 0.8,
            subject_spread: 0.5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn total(&self) -> usize {
        self.subjects * self.per_subject
    }

    pub fn minority_count(&self) -> usize {
        (self.total() as f64 * self.minority).round() as usize
    }

    fn event_steps(&self) -> (usize, usize) {
        let lo = (self.event_min_s * SAMPLE_RATE_HZ).round() as usize;
        let hi = (self.event_max_s * SAMPLE_RATE_HZ).round() as usize;
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.subjects == 0 {
            return bad("subjects", "must be at least 1".into());
        }
        if self.per_subject == 0 {
            return bad("per_subject", "must be at least 1".into());
        }
        if !(self.minority > 0.0 && self.minority < 1.0) {
            return bad(
                "minority",
                format!("must lie strictly between 0 and 1, got {}", self.minority),
            );
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(
                "min_len",
                format!("need 1 <= min_len <= max_len, got {}..{}", self.min_len, self.max_len),
            );
        }
        let (lo, hi) = self.event_steps();
        if !(self.event_min_s > 0.0) || lo == 0 || lo > hi {
            return bad(
                "event_min_s",
                format!(
                    "event durations {}..{} s must be positive and ordered",
                    self.event_min_s, self.event_max_s
                ),
            );
        }
        // Events keep one duration of margin on each side.
        if 3 * hi > self.min_len {
            return bad(
                "event_max_s",
                format!(
                    "{hi}-step events with one-duration margins do not fit in {} steps",
                    self.min_len
                ),
            );
        }
        let finite = [
            ("amplitude", self.amplitude),
            ("noise", self.noise),
            ("subject_spread", self.subject_spread),
        ];
        if let Some((f, v)) = finite.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return bad(f, format!("must be finite and non-negative, got {v}"));
        }
        if !(0.0..1.0).contains(&self.smoothness) {
            return bad(
                "smoothness",
                format!("must lie in [0, 1), got {}", self.smoothness),
            );
        }
        Ok(())
    }
}

/// Hann bump of the given length, peaking at 1.
fn bump(len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| {
            let x = (t as f64 + 0.5) / len as f64;
            (std::f64::consts::PI * x).sin().powi(2)
        })
        .collect()
}

struct Subject {
    id: String,
    offsets: Vec<f64>,
    order: Vec<usize>,
}

/// Generates the synthetic planted-event dataset described by `config`.
///
/// Label 0 samples each get one event; label 1 samples get none. The result
/// depends only on `config`.
pub fn generate(config: &GeneratorConfig) -> Result<Vec<SequenceSample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = CHANNELS.len();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let subjects: Vec<Subject> = (0..config.subjects)
        .map(|i| {
            let offsets = (0..width)
                .map(|c| {
                    if c == VOICE || c == GAZE_OBJECT {
                        0.0
                    } else {
                        config.subject_spread * std_normal.sample(&mut rng)
                    }
                })
                .collect();
            let mut order: Vec<usize> = (0..VIDEOS).collect();
            order.shuffle(&mut rng);
            Subject {
                id: format!("S{i:02}"),
                offsets,
                order,
            }
        })
        .collect();

    let total = config.total();
    let mut labels = vec![1u8; total];
    labels[..config.minority_count()].fill(0);
    labels.shuffle(&mut rng);

    let (ev_lo, ev_hi) = config.event_steps();
    let phi = config.smoothness;
    let innovation = config.noise * (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(total);
    for (n, &label) in labels.iter().enumerate() {
        let subject = &subjects[n / config.per_subject];
        let k = n % config.per_subject;
        let video = subject.order[k % VIDEOS];
        let len = rng.random_range(config.min_len..=config.max_len);

        let mut data = vec![0.0; len * width];
        let mut state: Vec<f64> = (0..width)
            .map(|_| config.noise * std_normal.sample(&mut rng))
            .collect();
        for t in 0..len {
            for c in 0..width {
                if t > 0 {
                    state[c] = phi * state[c] + innovation * std_normal.sample(&mut rng);
                }
                data[t * width + c] = subject.offsets[c] + state[c];
            }
        }
        // Voice prompts: short on-segments independent of the label.
        let mut t = 0;
        for v in data.iter_mut().skip(VOICE).step_by(width) {
            *v = 0.0;
        }
        while t < len {
            t += rng.random_range(40..200);
            let on = rng.random_range(10..30);
            for s in t..(t + on).min(len) {
                data[s * width + VOICE] = 1.0;
            }
            t += on;
        }
        // Gaze object: piecewise constant category codes in [0, 1).
        let mut t = 0;
        while t < len {
            let code = rng.random_range(0..GAZE_CATEGORIES) as f64 / GAZE_CATEGORIES as f64;
            let dwell = rng.random_range(5..60);
            for s in t..(t + dwell).min(len) {
                data[s * width + GAZE_OBJECT] = code;
            }
            t += dwell;
        }

        let event = if label == 0 {
            let dur = rng.random_range(ev_lo..=ev_hi);
            let start = rng.random_range(dur..=len - 2 * dur);
            let shape = bump(dur);
            for (i, b) in shape.iter().enumerate() {
                let row = (start + i) * width;
                for &(c, sign) in &SIGNATURE_CHANNELS {
                    data[row + c] += sign * config.amplitude * config.noise * b;
                }
                for &c in &DISPERSION_CHANNELS {
                    data[row + c] +=
                        config.amplitude * config.noise * b * std_normal.sample(&mut rng);
                }
            }
            Some((start, start + dur))
        } else {
            None
        };

        out.push(SequenceSample {
            subject_id: subject.id.clone(),
            video_id: format!("V{video:02}"),
            segment_id: format!("{}-{k:03}", subject.id),
            series: Series::new(width, data)?,
            metadata: vec![
                (video % 2) as f64,
                ((video / 2) % 2) as f64,
                (video / 4) as f64 / 2.0,
                ((k % VIDEOS) + 1) as f64 / VIDEOS as f64,
            ],
            label,
            event,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            subjects: 6,
            per_subject: 5,
            min_len: 160,
            max_len: 300,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn default_counts() {
        let c = GeneratorConfig::default();
        assert_eq!(c.total(), 1672);
        assert_eq!(c.minority_count(), 234);
    }

    #[test]
    fn deterministic_and_labeled() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        let minority = a.iter().filter(|s| s.label == 0).count();
        assert_eq!(minority, (30.0f64 * 0.14).round() as usize);
        for s in &a {
            assert!((160..=300).contains(&s.len()));
            match (s.label, s.event) {
                (0, Some((start, end))) => {
                    let dur = end - start;
                    assert!((20..=50).contains(&dur));
                    assert!(start >= dur && end + dur <= s.len());
                }
                (1, None) => {}
                other => panic!("label/event mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            GeneratorConfig {
                minority: 1.5,
                ..small()
            },
            GeneratorConfig {
                subjects: 0,
                ..small()
            },
            GeneratorConfig {
                min_len: 100,
                ..small()
            },
        ];
        for c in bad {
            assert!(matches!(generate(&c), Err(Error::Config(_))), "{c:?}");
        }
    }
}
