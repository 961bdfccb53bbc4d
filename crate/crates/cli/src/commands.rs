use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use swan_core::data::{self, GeneratorConfig, LoadOptions, SequenceSample};
use swan_core::model::{load_checkpoint, save_checkpoint, ModelConfig, Variant};
use swan_core::train::{
    self, evaluate, export_attention, paired_t_test, read_run_uars, run_cv_units, step_for,
    sweep_windows, write_runs_csv, write_summary, write_sweep_csv, write_sweep_plot, CvOptions,
    RunReport,
};
use swan_core::Error;

use crate::settings::{parse_seeds, Settings};

/// Generator fields and the flags that set them.
const GEN_FLAGS: [(&str, &str); 10] = [
    ("per_subject", "per-subject"),
    ("subjects", "subjects"),
    ("minority", "minority"),
    ("min_len", "min-len"),
    ("event_min_s", "event-min"),
    ("event_max_s", "event-max"),
    ("amplitude", "amplitude"),
    ("noise", "noise"),
    ("smoothness", "smoothness"),
    ("subject_spread", "subject-spread"),
];

fn flag_error(e: Error) -> anyhow::Error {
    if let Error::Config(msg) = &e {
        for (field, flag) in GEN_FLAGS {
            if let Some(rest) = msg.strip_prefix(&format!("{field}: ")) {
                return anyhow!("--{flag}: {rest}");
            }
        }
    }
    e.into()
}

fn load_dataset(s: &Settings) -> Result<Vec<SequenceSample>> {
    let path = s.path("data")?;
    if !path.exists() {
        bail!("dataset not found: {}", path.display());
    }
    let samples = data::load_with(
        &path,
        LoadOptions {
            resample: s.get("resample")?,
        },
    )?;
    if samples.is_empty() {
        bail!("dataset {} has no samples", path.display());
    }
    Ok(samples)
}

fn model_config(s: &Settings, variant: Variant, r: usize, step: usize) -> Result<ModelConfig> {
    let config = ModelConfig {
        variant,
        d_model: s.get("d-model")?,
        heads: s.get("heads")?,
        r_self: s.get("r-self")?,
        r,
        s: step,
        max_len: s.get("max-len")?,
        metadata_dim: data::METADATA.len(),
        epochs: s.get("epochs")?,
        lr: s.get("lr")?,
        batch_size: s.get("batch-size")?,
        seed: 0,
        layers: s.get("layers")?,
        positional_encoding: s.get("positional-encoding")?,
    };
    config.validate()?;
    Ok(config)
}

fn cv_options(s: &Settings) -> Result<CvOptions> {
    Ok(CvOptions {
        folds: s.get("folds")?,
        seeds: parse_seeds(s.str("seeds")?)?,
        split_seed: s.get("split-seed")?,
        jobs: s.get("jobs")?,
    })
}

pub fn gen_data(s: &Settings) -> Result<()> {
    let out = s.path("out")?;
    let config = GeneratorConfig {
        subjects: s.get("subjects")?,
        per_subject: s.get("per-subject")?,
        minority: s.get("minority")?,
        min_len: s.get("min-len")?,
        max_len: s.get("max-len")?,
        event_min_s: s.get("event-min")?,
        event_max_s: s.get("event-max")?,
        amplitude: s.get("amplitude")?,
        noise: s.get("noise")?,
        smoothness: s.get("smoothness")?,
        subject_spread: s.get("subject-spread")?,
        seed: s.get("seed")?,
    };
    config.validate().map_err(flag_error)?;
    s.echo("gen-data", &out)?;
    let samples = data::generate(&config).map_err(flag_error)?;
    data::save(&samples, &out)?;
    let [zeros, ones] = data::class_counts(&samples);
    println!(
        "generated {} samples from {} subjects into {}",
        samples.len(),
        config.subjects,
        out.display()
    );
    println!(
        "label 0 (insufficient trust): {zeros}, label 1: {ones}, minority ratio {:.4}",
        zeros as f64 / samples.len() as f64
    );
    Ok(())
}

fn paired_comparison(reports: &[&RunReport], other: &Path) -> Result<train::TTest> {
    let theirs = read_run_uars(other)?;
    let mut ours: Vec<(usize, u64, f64)> = reports
        .iter()
        .map(|r| (r.fold, r.seed, r.test_uar))
        .collect();
    ours.sort_by_key(|&(f, s, _)| (f, s));
    let keys = |v: &[(usize, u64, f64)]| v.iter().map(|&(f, s, _)| (f, s)).collect::<Vec<_>>();
    if keys(&ours) != keys(&theirs) {
        bail!(
            "--compare: {} has runs {:?}, this invocation has {:?}",
            other.display(),
            keys(&theirs),
            keys(&ours)
        );
    }
    let a: Vec<f64> = ours.iter().map(|r| r.2).collect();
    let b: Vec<f64> = theirs.iter().map(|r| r.2).collect();
    Ok(paired_t_test(&a, &b)?)
}

pub fn train(s: &Settings) -> Result<()> {
    let out = s.path("out")?;
    let variant: Variant = s.get("variant")?;
    let config = model_config(s, variant, s.get("r")?, s.get("s")?)?;
    let options = cv_options(s)?;
    let compare = s.opt_str("compare").map(Path::new);
    if let Some(c) = compare {
        if !c.exists() {
            bail!("--compare: {} not found", c.display());
        }
    }
    let samples = load_dataset(s)?;
    s.echo("train", &out)?;

    let (_, results) = run_cv_units(&samples, &config, &options)?;
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => failures.push(e),
        }
    }
    let reports: Vec<&RunReport> = runs.iter().map(|r| &r.report).collect();
    write_runs_csv(&out.join("runs.csv"), &reports)?;
    let json = serde_json::to_string_pretty(&reports).context("cannot encode run reports")?;
    fs::write(out.join("reports.json"), json).context("cannot write reports.json")?;

    // Best run by its own validation UAR; test scores play no part.
    let best = runs.iter().max_by(|a, b| {
        let v = |r: &&swan_core::train::RunOutput| {
            r.report.history.val_uar[r.report.history.selected_epoch - 1]
        };
        v(a).total_cmp(&v(b)).then(b.report.key().cmp(&a.report.key()))
    });
    if let Some(best) = best {
        save_checkpoint(&best.model, &out.join("checkpoint.json"))?;
    }
    let comparison = match compare {
        Some(c) if failures.is_empty() => Some((c, paired_comparison(&reports, c)?)),
        _ => None,
    };
    let summary = write_summary(
        &out.join("summary.txt"),
        &reports,
        comparison
            .as_ref()
            .map(|(p, t)| (p.to_str().unwrap_or("comparison"), t)),
    )?;
    print!("{summary}");
    if let Some(best) = best {
        println!(
            "checkpoint: fold {} seed {} -> {}",
            best.report.fold,
            best.report.seed,
            out.join("checkpoint.json").display()
        );
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("failed: {f}");
        }
        bail!("{} of {} runs failed", failures.len(), failures.len() + runs.len());
    }
    Ok(())
}

pub fn sweep(s: &Settings) -> Result<()> {
    let out = s.path("out")?;
    let seconds: Vec<f64> = s.list("ranges")?;
    if seconds.is_empty() {
        bail!("--ranges: need at least one range");
    }
    if let Some(bad) = seconds.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        bail!("--ranges: {bad} is not a positive number of seconds");
    }
    let ranges: Vec<usize> = seconds
        .iter()
        .map(|x| ((x * data::SAMPLE_RATE_HZ).round() as usize).max(1))
        .collect();
    let variants: Vec<Variant> = s.list("variants")?;
    let base = model_config(s, Variant::Swan, ranges[0], step_for(ranges[0]))?;
    let options = cv_options(s)?;
    let samples = load_dataset(s)?;
    s.echo("sweep", &out)?;
    let report = sweep_windows(&samples, &base, &variants, &ranges, &options)?;
    write_sweep_csv(&out.join("sweep.csv"), &report)?;
    write_sweep_plot(&out.join("sweep_plot.csv"), &report)?;
    let mut text = String::new();
    for c in &report.cells {
        let _ = writeln!(
            text,
            "{:<16} r = {:>4} steps ({:>5} s)  UAR {:.4} +/- {:.4}  ({} runs)",
            c.variant.as_str(),
            c.r,
            c.range_s(),
            c.mean,
            c.std,
            c.uars.len()
        );
    }
    for v in report.variants() {
        let _ = writeln!(
            text,
            "{} spread (max - min mean UAR): {:.4}",
            v,
            report.spread(v).unwrap_or(0.0)
        );
    }
    fs::write(out.join("summary.txt"), &text).context("cannot write summary.txt")?;
    print!("{text}");
    Ok(())
}

pub fn attend(s: &Settings) -> Result<()> {
    let out = s.path("out")?;
    let checkpoint = s.path("checkpoint")?;
    if !checkpoint.exists() {
        bail!("checkpoint not found: {}", checkpoint.display());
    }
    let sigma: f64 = s.get("sigma")?;
    let model = load_checkpoint(&checkpoint)?;
    let samples = load_dataset(s)?;
    let selected: Vec<&SequenceSample> = match s.opt_str("ids") {
        Some(ids) => ids
            .split(',')
            .map(str::trim)
            .filter(|i| !i.is_empty())
            .map(|id| {
                samples.iter().find(|x| x.segment_id == id).ok_or_else(|| {
                    let shown: Vec<&str> =
                        samples.iter().take(20).map(|x| x.segment_id.as_str()).collect();
                    anyhow!(
                        "sample `{id}` not found; available ids ({} total): {}{}",
                        samples.len(),
                        shown.join(", "),
                        if samples.len() > 20 { ", ..." } else { "" }
                    )
                })
            })
            .collect::<Result<_>>()?,
        None => samples.iter().filter(|x| x.event.is_some()).collect(),
    };
    if selected.is_empty() {
        bail!("no samples selected (pass --ids or use a dataset with annotated events)");
    }
    s.echo("attend", &out)?;
    let dir = out.join("attention");
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut index = String::from("segment_id,label,probability,length,event_start,event_end,event_mass,mass_ratio\n");
    let mut ratios = Vec::new();
    for sample in selected {
        let ex = export_attention(&model, sample, sigma)?;
        let mut series = String::from("step,weight\n");
        for (t, w) in ex.smoothed.iter().enumerate() {
            let _ = writeln!(series, "{t},{w}");
        }
        let path = dir.join(format!("{}.csv", ex.segment_id));
        fs::write(&path, series).with_context(|| format!("cannot write {}", path.display()))?;
        let (start, end) = ex
            .event
            .map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        let mass = ex.event_mass().map_or(String::new(), |m| m.to_string());
        let ratio = ex.event_ratio();
        ratios.extend(ratio);
        let _ = writeln!(
            index,
            "{},{},{},{},{start},{end},{mass},{}",
            ex.segment_id,
            sample.label,
            ex.probability,
            ex.smoothed.len(),
            ratio.map_or(String::new(), |r| r.to_string())
        );
    }
    fs::write(dir.join("index.csv"), index).context("cannot write attention/index.csv")?;
    println!("wrote {} attention series to {}", dir.read_dir().map_or(0, |d| d.count()) - 1, dir.display());
    if !ratios.is_empty() {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        println!(
            "attention-mass-in-interval ratio: {mean:.3} (mean over {} annotated samples; 1.0 = uniform)",
            ratios.len()
        );
    }
    Ok(())
}

pub fn eval(s: &Settings) -> Result<()> {
    let out = s.path("out")?;
    let checkpoint = s.path("checkpoint")?;
    if !checkpoint.exists() {
        bail!("checkpoint not found: {}", checkpoint.display());
    }
    let model = load_checkpoint(&checkpoint)?;
    let samples = load_dataset(s)?;
    s.echo("eval", &out)?;
    let refs: Vec<&SequenceSample> = samples.iter().collect();
    let e = evaluate(&model, &refs)?;
    let mut table = String::from("segment_id,subject_id,label,probability,prediction\n");
    for (x, (p, y)) in samples.iter().zip(e.probabilities.iter().zip(&e.predictions)) {
        let _ = writeln!(table, "{},{},{},{p},{y}", x.segment_id, x.subject_id, x.label);
    }
    fs::write(out.join("predictions.csv"), table).context("cannot write predictions.csv")?;
    let c = e.confusion;
    let text = format!(
        "variant: {}\nsamples: {}\nUAR: {:.4}\nrecall label 0: {:.4}\nrecall label 1: {:.4}\nTP {} FP {} TN {} FN {}\n",
        model.variant(),
        samples.len(),
        e.uar,
        c.recall_0(),
        c.recall_1(),
        c.tp,
        c.fp,
        c.tn,
        c.fn_
    );
    fs::write(out.join("eval.txt"), &text).context("cannot write eval.txt")?;
    print!("{text}");
    Ok(())
}
