//! Dataset directory format.
//!
//! A dataset is a directory holding `manifest.csv` plus one series file per
//! sample. The manifest has a header row and these columns:
//!
//! ```text
//! segment_id,subject_id,video_id,label,length,rate_hz,
//! mobility,aggressive,proactive,watch_order,event_start,event_end,series_file
//! ```
//!
//! `event_start`/`event_end` are empty when no event is annotated; the
//! interval is half-open in steps. `series_file` is relative to the
//! manifest's directory. A series file has no header and one row per step
//! with the ten channels of [`CHANNELS`](super::CHANNELS) in order; its row
//! count must equal `length`.

use std::fs;
use std::path::{Path, PathBuf};

use super::resample::resample;
use super::sample::{Series, SequenceSample, CHANNELS, METADATA, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 13] = [
    "segment_id",
    "subject_id",
    "video_id",
    "label",
    "length",
    "rate_hz",
    "mobility",
    "aggressive",
    "proactive",
    "watch_order",
    "event_start",
    "event_end",
    "series_file",
];

/// Longest sequence accepted on load, in 10 Hz steps.
const MAX_STEPS: usize = 1500;

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Resample series recorded above 10 Hz instead of rejecting them.
    pub resample: bool,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Writes `samples` as a dataset directory at `dir`, creating it if needed.
pub fn save(samples: &[SequenceSample], dir: &Path) -> Result<()> {
    let series_dir = dir.join("series");
    fs::create_dir_all(&series_dir).map_err(|e| Error::io(&series_dir, e))?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| csv_err(&manifest, e))?;
    w.write_record(MANIFEST_HEADER)
        .map_err(|e| csv_err(&manifest, e))?;
    for s in samples {
        let rel = format!("series/{}.csv", s.segment_id);
        let (start, end) = s
            .event
            .map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        let mut row = vec![
            s.segment_id.clone(),
            s.subject_id.clone(),
            s.video_id.clone(),
            s.label.to_string(),
            s.len().to_string(),
            SAMPLE_RATE_HZ.to_string(),
        ];
        row.extend(s.metadata.iter().map(f64::to_string));
        row.extend([start, end, rel.clone()]);
        w.write_record(&row).map_err(|e| csv_err(&manifest, e))?;

        let path = dir.join(&rel);
        let mut text = String::with_capacity(s.series.data().len() * 20);
        for r in s.series.rows() {
            for (i, v) in r.iter().enumerate() {
                if i > 0 {
                    text.push(',');
                }
                text.push_str(&v.to_string());
            }
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))
}

/// Loads a dataset from a directory or a manifest path, rejecting series
/// not recorded at 10 Hz.
pub fn load(path: &Path) -> Result<Vec<SequenceSample>> {
    load_with(path, LoadOptions::default())
}

pub fn load_with(path: &Path, options: LoadOptions) -> Result<Vec<SequenceSample>> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| csv_err(&manifest, e))?.clone();
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::Parse {
            file: manifest.clone(),
            line: 1,
            msg: format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(&manifest, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let perr = |msg: String| Error::Parse {
            file: manifest.clone(),
            line,
            msg,
        };
        if record.len() != MANIFEST_HEADER.len() {
            return Err(perr(format!(
                "expected {} fields, found {}",
                MANIFEST_HEADER.len(),
                record.len()
            )));
        }
        let field = |i: usize| record[i].trim();
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| perr(format!("{}: `{}` is not a number", MANIFEST_HEADER[i], field(i))))
        };
        let int = |i: usize| -> Result<usize> {
            field(i).parse::<usize>().map_err(|_| {
                perr(format!("{}: `{}` is not a count", MANIFEST_HEADER[i], field(i)))
            })
        };
        let segment_id = field(0).to_string();
        let label = match field(3) {
            "0" => 0,
            "1" => 1,
            other => return Err(perr(format!("label: `{other}` is not 0 or 1"))),
        };
        let length = int(4)?;
        let rate = num(5)?;
        let metadata = (6..6 + METADATA.len())
            .map(num)
            .collect::<Result<Vec<_>>>()?;
        let mut event = match (field(10), field(11)) {
            ("", "") => None,
            _ => {
                let (a, b) = (int(10)?, int(11)?);
                if a >= b {
                    return Err(perr(format!("event interval {a}..{b} is empty")));
                }
                Some((a, b))
            }
        };
        let series_path = base.join(field(12));
        let mut series = read_series(&series_path, &segment_id)?;
        if series.len() != length {
            return Err(perr(format!(
                "record {segment_id}: length {length} but series file has {} rows",
                series.len()
            )));
        }
        if rate != SAMPLE_RATE_HZ {
            if !options.resample {
                return Err(perr(format!(
                    "record {segment_id}: recorded at {rate} Hz, expected {SAMPLE_RATE_HZ} Hz (enable resampling to convert)"
                )));
            }
            series = resample(&series, rate)?;
            let scale = SAMPLE_RATE_HZ / rate;
            event = event.map(|(a, b)| {
                let a = (a as f64 * scale).floor() as usize;
                (a, ((b as f64 * scale).ceil() as usize).max(a + 1))
            });
        }
        if series.len() > MAX_STEPS {
            return Err(Error::Input(format!(
                "record {segment_id}: {} steps exceeds the maximum of {MAX_STEPS}",
                series.len()
            )));
        }
        if let Some((_, end)) = event {
            if end > series.len() {
                return Err(perr(format!(
                    "record {segment_id}: event ends at {end}, past {} steps",
                    series.len()
                )));
            }
        }
        out.push(SequenceSample {
            subject_id: field(1).to_string(),
            video_id: field(2).to_string(),
            segment_id,
            series,
            metadata,
            label,
            event,
        });
    }
    Ok(out)
}

fn read_series(path: &PathBuf, segment_id: &str) -> Result<Series> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let width = CHANNELS.len();
    let mut data = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for cell in line.split(',') {
            let v = cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                file: path.clone(),
                line: i + 1,
                msg: format!("record {segment_id}: `{}` is not a number", cell.trim()),
            })?;
            data.push(v);
        }
        if data.len() - before != width {
            return Err(Error::Parse {
                file: path.clone(),
                line: i + 1,
                msg: format!(
                    "record {segment_id}: row has {} values, expected {width}",
                    data.len() - before
                ),
            });
        }
    }
    Series::new(width, data)
}
