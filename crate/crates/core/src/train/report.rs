use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::cv::RunReport;
use super::metrics::{mean_std, TTest};
use super::sweep::SweepReport;
use crate::error::{Error, Result};

pub const RUNS_HEADER: [&str; 15] = [
    "variant",
    "fold",
    "seed",
    "r",
    "s",
    "r_self",
    "test_uar",
    "tp",
    "fp",
    "tn",
    "fn",
    "params",
    "selected_epoch",
    "epochs",
    "wall_time_s",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.to_path_buf(),
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}

/// One row per run, sorted by (fold, seed).
pub fn write_runs_csv(path: &Path, reports: &[&RunReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(RUNS_HEADER).map_err(|e| csv_err(path, e))?;
    let mut sorted = reports.to_vec();
    sorted.sort_by_key(|r| r.key());
    for r in sorted {
        let c = &r.config;
        w.write_record([
            r.variant.to_string(),
            r.fold.to_string(),
            r.seed.to_string(),
            c.r.to_string(),
            c.s.to_string(),
            c.r_self.to_string(),
            r.test_uar.to_string(),
            r.confusion.tp.to_string(),
            r.confusion.fp.to_string(),
            r.confusion.tn.to_string(),
            r.confusion.fn_.to_string(),
            r.params.to_string(),
            r.history.selected_epoch.to_string(),
            c.epochs.to_string(),
            format!("{:.3}", r.wall_time_s),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `(fold, seed, test_uar)` rows from a table written by
/// [`write_runs_csv`], sorted by (fold, seed).
pub fn read_run_uars(path: &Path) -> Result<Vec<(usize, u64, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line: 1,
            msg: format!("missing column `{name}`"),
        })
    };
    let (fold, seed, uar) = (col("fold")?, col("seed")?, col("test_uar")?);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse {
            file: path.to_path_buf(),
            line,
            msg: format!("invalid {what}"),
        };
        out.push((
            rec[fold].parse().map_err(|_| bad("fold"))?,
            rec[seed].parse().map_err(|_| bad("seed"))?,
            rec[uar].parse().map_err(|_| bad("test_uar"))?,
        ));
    }
    out.sort_by_key(|&(f, s, _)| (f, s));
    Ok(out)
}

/// Human-readable summary of a set of runs, with an optional paired
/// comparison against another table.
pub fn write_summary(
    path: &Path,
    reports: &[&RunReport],
    comparison: Option<(&str, &TTest)>,
) -> Result<String> {
    let uars: Vec<f64> = reports.iter().map(|r| r.test_uar).collect();
    let (mean, std) = mean_std(&uars);
    let mut s = String::new();
    if let Some(first) = reports.first() {
        let c = &first.config;
        let _ = writeln!(s, "variant: {}", first.variant);
        let _ = writeln!(s, "window range r = {}, step s = {}, r_self = {}", c.r, c.s, c.r_self);
        let _ = writeln!(s, "parameters: {}", first.params);
    }
    let _ = writeln!(s, "runs: {}", reports.len());
    let _ = writeln!(s, "test UAR: {mean:.4} +/- {std:.4}");
    let (min, max) = uars
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &u| (a.min(u), b.max(u)));
    if !uars.is_empty() {
        let _ = writeln!(s, "test UAR range: {min:.4} .. {max:.4}");
    }
    if let Some((other, t)) = comparison {
        let verdict = if t.p < 0.05 { "significant" } else { "not significant" };
        let _ = writeln!(
            s,
            "paired t-test vs {other}: mean difference {:.4}, t = {:.4}, df = {}, p = {:.4} ({verdict} at 0.05)",
            t.mean_diff, t.t, t.df, t.p
        );
    }
    fs::write(path, &s).map_err(|e| Error::io(path, e))?;
    Ok(s)
}

/// Full sweep table: one row per (variant, range).
pub fn write_sweep_csv(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["variant", "r", "s", "range_s", "mean_uar", "std_uar", "runs"])
        .map_err(|e| csv_err(path, e))?;
    for c in &report.cells {
        w.write_record([
            c.variant.to_string(),
            c.r.to_string(),
            c.s.to_string(),
            c.range_s().to_string(),
            c.mean.to_string(),
            c.std.to_string(),
            c.uars.len().to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plot data: one series per variant of range (seconds) against mean UAR
/// with its standard deviation.
pub fn write_sweep_plot(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["series", "range_s", "mean_uar", "std_uar"])
        .map_err(|e| csv_err(path, e))?;
    for c in &report.cells {
        w.write_record([
            c.variant.to_string(),
            c.range_s().to_string(),
            c.mean.to_string(),
            c.std.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
