use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::loop_::{evaluate, train_observed, TrainHistory};
use super::metrics::{mean_std, Confusion};
use crate::data::{split_subjects, upsample_minority, FoldSplit, SequenceSample};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};

/// Cross-validation protocol settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seeds: Vec<u64>,
    /// Seed of the subject-to-fold assignment, shared by all run seeds so
    /// runs of different variants pair up.
    pub split_seed: u64,
    /// Worker threads; each run is single-threaded.
    pub jobs: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            seeds: (0..5).collect(),
            split_seed: 0,
            jobs: 1,
        }
    }
}

/// Outcome of one (fold, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub fold: usize,
    pub seed: u64,
    pub config: ModelConfig,
    pub history: TrainHistory,
    pub test_uar: f64,
    pub confusion: Confusion,
    pub params: usize,
    pub wall_time_s: f64,
    pub test_ids: Vec<String>,
}

impl RunReport {
    /// Run key used for ordering and pairing.
    pub fn key(&self) -> (usize, u64) {
        (self.fold, self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// Parameters of the selected epoch.
    pub model: Model,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub split: FoldSplit,
    /// Sorted by (fold, seed).
    pub runs: Vec<RunOutput>,
}

impl CvResult {
    pub fn reports(&self) -> impl Iterator<Item = &RunReport> {
        self.runs.iter().map(|r| &r.report)
    }

    pub fn test_uars(&self) -> Vec<f64> {
        self.reports().map(|r| r.test_uar).collect()
    }

    /// Mean and sample standard deviation of the test UARs.
    pub fn summary(&self) -> (f64, f64) {
        mean_std(&self.test_uars())
    }
}

/// Trains and tests one run: fold `fold` is the test fold, `fold + 1` the
/// validation fold; training data is upsampled with `seed`.
pub fn run_one(
    samples: &[SequenceSample],
    split: &FoldSplit,
    fold: usize,
    config: &ModelConfig,
) -> Result<RunOutput> {
    let start = Instant::now();
    let part = split.partition(samples, fold)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
    let (train_raw, val, test) = (pick(&part.train), pick(&part.val), pick(&part.test));
    let train_set = upsample_minority(&train_raw, config.seed)?;
    let mut model = Model::new(config.clone())?;

    let held_out: HashSet<&str> = split.folds[fold].iter().map(String::as_str).collect();
    let mut leaked = 0usize;
    let history = train_observed(&mut model, &train_set, &val, &mut |s| {
        leaked += usize::from(held_out.contains(s.subject_id.as_str()));
    })?;
    if leaked > 0 {
        return Err(Error::Data(format!(
            "{leaked} test-fold samples were visible during training"
        )));
    }
    let eval = evaluate(&model, &test)?;
    Ok(RunOutput {
        report: RunReport {
            variant: config.variant,
            fold,
            seed: config.seed,
            config: config.clone(),
            history,
            test_uar: eval.uar,
            confusion: eval.confusion,
            params: model.count_params(),
            wall_time_s: start.elapsed().as_secs_f64(),
            test_ids: test.iter().map(|s| s.segment_id.clone()).collect(),
        },
        model,
    })
}

/// Runs `f` over `units` on `jobs` threads and returns results in unit
/// order.
pub(crate) fn parallel_map<U: Sync, T: Send>(
    units: &[U],
    jobs: usize,
    f: impl Fn(&U) -> T + Sync,
) -> Vec<T> {
    let jobs = jobs.clamp(1, units.len().max(1));
    if jobs == 1 {
        return units.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..units.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= units.len() {
                    break;
                }
                let out = f(&units[i]);
                slots.lock().expect("no panics while holding the lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|s| s.expect("every unit ran"))
        .collect()
}

/// Runs every (fold, seed) unit and keeps each unit's outcome, so callers
/// can report all failing keys. Outcomes are sorted by (fold, seed).
pub fn run_cv_units(
    samples: &[SequenceSample],
    config: &ModelConfig,
    options: &CvOptions,
) -> Result<(FoldSplit, Vec<Result<RunOutput>>)> {
    if options.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    config.validate()?;
    let split = split_subjects(samples, options.folds, options.split_seed)?;
    let mut seeds = options.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let units: Vec<(usize, u64)> = (0..options.folds)
        .flat_map(|f| seeds.iter().map(move |&s| (f, s)))
        .collect();
    let results = parallel_map(&units, options.jobs, |&(fold, seed)| {
        let cfg = ModelConfig {
            seed,
            ..config.clone()
        };
        run_one(samples, &split, fold, &cfg).map_err(|e| Error::Run {
            fold,
            seed,
            source: Box::new(e),
        })
    });
    Ok((split, results))
}

/// Subject-independent cross-validation: one run per (fold, seed). The
/// first failing run (by key) is returned, annotated with its fold and seed.
pub fn run_cv(samples: &[SequenceSample], config: &ModelConfig, options: &CvOptions) -> Result<CvResult> {
    let (split, results) = run_cv_units(samples, config, options)?;
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CvResult { split, runs })
}
