use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signal columns at 10 Hz, in file and model order.
pub const CHANNELS: [&str; 10] = [
    "velocity",
    "angular_velocity",
    "steering_angle",
    "engine_volume",
    "proactive_voice",
    "gaze_x",
    "gaze_y",
    "pupil_left",
    "pupil_right",
    "gaze_object",
];

/// Metadata fields, in file and model order.
pub const METADATA: [&str; 4] = ["mobility", "aggressive", "proactive", "watch_order"];

/// Columns holding flags or category codes rather than continuous values.
pub const DISCRETE_CHANNELS: [usize; 2] = [4, 9];

pub const SAMPLE_RATE_HZ: f64 = 10.0;

/// Row-major `len × width` matrix of time steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    width: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(width: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || data.len() % width != 0 {
            return Err(Error::Input(format!(
                "{} values cannot form rows of width {width}",
                data.len()
            )));
        }
        Ok(Self { width, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(CHANNELS.len(), Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(Error::Input(format!(
                "row {i} has {} values, expected {width}",
                r.len()
            )));
        }
        Self::new(width, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.width)
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(c).step_by(self.width).copied()
    }
}

/// One labeled segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub subject_id: String,
    pub video_id: String,
    pub segment_id: String,
    pub series: Series,
    pub metadata: Vec<f64>,
    /// 1 = sufficient trust, 0 = insufficient trust.
    pub label: u8,
    /// Planted event as half-open `[start, end)` steps (synthetic data only).
    pub event: Option<(usize, usize)>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }
}
