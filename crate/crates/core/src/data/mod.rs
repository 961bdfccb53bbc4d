//! Sample schema, synthetic generator, dataset files and partitioning.

mod generator;
mod io;
mod oracle;
mod resample;
mod sample;
mod split;

pub use generator::{generate, GeneratorConfig, SIGNATURE_CHANNELS};
pub use io::{load, load_with, save, LoadOptions, MANIFEST_FILE, MANIFEST_HEADER};
pub use oracle::{energy_detector_uar, energy_scores, ORACLE_WINDOW};
pub use resample::resample;
pub use sample::{
    Series, SequenceSample, CHANNELS, DISCRETE_CHANNELS, METADATA, SAMPLE_RATE_HZ,
};
pub use split::{split_subjects, upsample_minority, FoldSplit, Partition};

/// Number of samples carrying each label, as `[label 0, label 1]`.
pub fn class_counts<S: std::borrow::Borrow<SequenceSample>>(samples: &[S]) -> [usize; 2] {
    let mut counts = [0; 2];
    for s in samples {
        counts[usize::from(s.borrow().label != 0)] += 1;
    }
    counts
}
