//! Data and evaluation protocol properties.

mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swan_core::data::{
    class_counts, energy_detector_uar, generate, resample, split_subjects, upsample_minority,
    GeneratorConfig, SequenceSample, Series, DISCRETE_CHANNELS,
};
use swan_core::model::{ModelConfig, Variant};
use swan_core::train::{run_cv, run_one, uar, CvOptions};

use common::random_sample;

fn toy_dataset(subjects: usize, per: usize, minority_every: usize) -> Vec<SequenceSample> {
    let mut out = Vec::new();
    for s in 0..subjects {
        for j in 0..per {
            let mut x = random_sample(8, 10, 4, 1, (s * per + j) as u64);
            x.subject_id = format!("S{s:02}");
            x.segment_id = format!("S{s:02}-{j:03}");
            x.label = u8::from((s * per + j) % minority_every != 0);
            out.push(x);
        }
    }
    out
}

fn recall_oracle(pred: &[u8], labels: &[u8]) -> Option<f64> {
    let mut hit = [0usize; 2];
    let mut total = [0usize; 2];
    for (&p, &y) in pred.iter().zip(labels) {
        total[y as usize] += 1;
        hit[y as usize] += usize::from(p == y);
    }
    (total[0] > 0 && total[1] > 0)
        .then(|| (hit[0] as f64 / total[0] as f64 + hit[1] as f64 / total[1] as f64) / 2.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_never_share_subjects(
        subjects in 5usize..40,
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(subjects >= k);
        let data = toy_dataset(subjects, 2, 3);
        let split = split_subjects(&data, k, seed).unwrap();
        let mut seen = HashSet::new();
        for fold in &split.folds {
            for s in fold {
                prop_assert!(seen.insert(s.clone()), "{} in two folds", s);
            }
        }
        prop_assert_eq!(seen.len(), subjects);
        let sizes: Vec<usize> = split.folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for i in 0..k {
            let p = split.partition(&data, i).unwrap();
            let subj = |idx: &[usize]| -> HashSet<String> {
                idx.iter().map(|&j| data[j].subject_id.clone()).collect()
            };
            let (tr, va, te) = (subj(&p.train), subj(&p.val), subj(&p.test));
            prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
            prop_assert_eq!(p.train.len() + p.val.len() + p.test.len(), data.len());
        }
    }

    #[test]
    fn upsampling_balances_exactly(
        labels in prop::collection::vec(0u8..2, 2..200),
        seed in any::<u64>(),
    ) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let data: Vec<SequenceSample> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let mut s = random_sample(3, 10, 4, y, i as u64);
                s.segment_id = format!("X-{i}");
                s
            })
            .collect();
        let up = upsample_minority(&data, seed).unwrap();
        let [zeros, ones] = class_counts(&up);
        prop_assert_eq!(zeros, ones);
        prop_assert_eq!(&up[..data.len()], &data[..]);
        let ids: HashSet<&str> = data.iter().map(|s| s.segment_id.as_str()).collect();
        prop_assert!(up.iter().all(|s| ids.contains(s.segment_id.as_str())));
    }

    #[test]
    fn uar_matches_per_class_recall(
        pairs in prop::collection::vec((0u8..2, 0u8..2), 1..300),
    ) {
        let (pred, labels): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        match (uar(&pred, &labels).ok(), recall_oracle(&pred, &labels)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (None, None) => {}
            (a, b) => prop_assert!(false, "library {:?} vs oracle {:?}", a, b),
        }
    }

    #[test]
    fn resampling_conserves_continuous_means(
        factor in 2usize..6,
        bins in 1usize..60,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..factor * bins)
            .map(|_| {
                (0..10)
                    .map(|c| {
                        if DISCRETE_CHANNELS.contains(&c) {
                            f64::from(rng.random_range(0u8..3))
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let series = Series::from_rows(&rows).unwrap();
        let out = resample(&series, 10.0 * factor as f64).unwrap();
        prop_assert_eq!(out.len(), bins);
        for c in (0..10).filter(|c| !DISCRETE_CHANNELS.contains(c)) {
            let before: f64 = series.column(c).sum::<f64>() / series.len() as f64;
            let after: f64 = out.column(c).sum::<f64>() / out.len() as f64;
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}

#[test]
fn random_predictions_score_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let labels: Vec<u8> = (0..10_000).map(|i| (i % 2) as u8).collect();
    for _ in 0..20 {
        let pred: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        let u = uar(&pred, &labels).unwrap();
        assert!((u - 0.5).abs() < 0.02, "{u}");
    }
}

#[test]
fn validation_and_test_keep_raw_class_ratios() {
    let data = generate(&GeneratorConfig {
        subjects: 10,
        per_subject: 12,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let split = split_subjects(&data, 5, 0).unwrap();
    let p = split.partition(&data, 2).unwrap();
    let counts = |idx: &[usize]| class_counts(&idx.iter().map(|&i| &data[i]).collect::<Vec<_>>());
    let cfg = ModelConfig {
        epochs: 1,
        ..ModelConfig::with_variant(Variant::WindowedLinear)
    };
    let out = run_one(&data, &split, 2, &cfg).unwrap();
    assert_eq!(out.report.test_ids.len(), p.test.len());
    let c = out.report.confusion;
    assert_eq!([c.tn + c.fp, c.tp + c.fn_], counts(&p.test));
}

#[test]
fn run_refuses_a_leaking_split() {
    let data = generate(&GeneratorConfig {
        subjects: 10,
        per_subject: 12,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let mut split = split_subjects(&data, 5, 0).unwrap();
    // Duplicate a training subject into the test fold.
    let intruder = split.folds[3][0].clone();
    split.folds[0].push(intruder);
    let cfg = ModelConfig {
        epochs: 1,
        ..ModelConfig::with_variant(Variant::WindowedLinear)
    };
    let err = run_one(&data, &split, 0, &cfg).unwrap_err().to_string();
    assert!(err.contains("visible during training"), "{err}");
}

#[test]
fn amplitude_zero_carries_no_signal() {
    let data = generate(&GeneratorConfig {
        amplitude: 0.0,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let oracle = energy_detector_uar(&data).unwrap();
    assert!(oracle < 0.6, "oracle {oracle}");
    let cfg = ModelConfig {
        epochs: 3,
        ..ModelConfig::with_variant(Variant::WindowedLinear)
    };
    let cv = run_cv(
        &data,
        &cfg,
        &CvOptions {
            seeds: vec![0, 1, 2],
            ..CvOptions::default()
        },
    )
    .unwrap();
    let (mean, _) = cv.summary();
    assert!((0.4..=0.6).contains(&mean), "mean test UAR {mean}");
}
