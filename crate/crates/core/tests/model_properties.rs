//! Model-level invariants: padding, locality, permutation behaviour of the
//! ablations, attention normalization and determinism.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swan_core::attention::{build_self_mask, self_attention, MultiHeadLayout};
use swan_core::data::{generate, split_subjects, GeneratorConfig, Series, SequenceSample};
use swan_core::model::{Model, ModelConfig, Variant};
use swan_core::tensor::{AttentionMask, ParamStore, Tape, Tensor};
use swan_core::train::{train, TrainHistory};

use common::random_sample;

fn model(variant: Variant, tweak: impl FnOnce(&mut ModelConfig)) -> Model {
    let mut cfg = ModelConfig {
        variant,
        max_len: 200,
        ..ModelConfig::default()
    };
    tweak(&mut cfg);
    let mut m = Model::new(cfg).expect("valid config");
    let fit: Vec<SequenceSample> = (0..4).map(|i| random_sample(60 + i * 7, 10, 4, 1, i as u64)).collect();
    m.prepare(&fit).expect("prepare");
    m
}

fn window_rows(m: &Model, sample: &SequenceSample) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = m.params().bind(&mut tape);
    let out = m.forward(&mut tape, &bound, sample, None).expect("forward");
    let att = out.window_attention.expect("windowing variant");
    let d = tape.shape(att)[1];
    tape.value(att).chunks(d).map(<[f64]>::to_vec).collect()
}

fn permuted(sample: &SequenceSample, perm: &[usize]) -> SequenceSample {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| sample.series.row(i).to_vec()).collect();
    SequenceSample {
        series: Series::from_rows(&rows).expect("rectangular"),
        ..sample.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn padding_leaves_every_variant_unchanged(
        len in 20usize..120,
        extra in 1usize..80,
        seed in 0u64..1000,
        v in 0usize..Variant::ALL.len(),
    ) {
        let m = model(Variant::ALL[v], |_| {});
        let s = random_sample(len, 10, 4, 1, seed);
        let plain = m.predict(&s).unwrap();
        let padded = m.predict_padded(&s, Some(len + extra)).unwrap();
        prop_assert!((plain - padded).abs() < 1e-10, "{} vs {}", plain, padded);
        prop_assert!(plain > 0.0 && plain < 1.0);
    }

    #[test]
    fn self_attention_is_local(
        len in 2usize..30,
        r_self in 0usize..6,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let layout = MultiHeadLayout::register(&mut store, "sa", 4, 2, &mut rng).unwrap();
        let x: Vec<f64> = (0..len * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let j = rng.random_range(0..len);
        let mut y = x.clone();
        y[j * 4 + 1] += 0.7;
        let run = |data: Vec<f64>| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let xv = tape.leaf(&Tensor::matrix(len, 4, data).unwrap());
            let mask = build_self_mask(len, r_self);
            let pad = AttentionMask::key_padding(len, len);
            let out = self_attention(&mut tape, xv, &layout.bind(&bound), &mask, &pad).unwrap();
            tape.value(out).to_vec()
        };
        let (a, b) = (run(x), run(y));
        for i in 0..len {
            let changed = (0..4).any(|c| (a[i * 4 + c] - b[i * 4 + c]).abs() >= 1e-12);
            if i.abs_diff(j) > r_self {
                prop_assert!(!changed, "row {} moved after perturbing step {}", i, j);
            }
        }
    }

    #[test]
    fn windows_without_self_attention_only_see_their_range(
        len in 30usize..150,
        seed in 0u64..1000,
    ) {
        let m = model(Variant::SwanNoSelfatt, |_| {});
        let s = random_sample(len, 10, 4, 1, seed);
        let j = (seed as usize * 7919) % len;
        let mut t = s.clone();
        for c in 0..10 {
            t.series.data_mut()[j * 10 + c] += 0.9;
        }
        let spec = m.config().window_spec().unwrap();
        let (a, b) = (window_rows(&m, &s), window_rows(&m, &t));
        for (i, (ra, rb)) in a.iter().zip(&b).enumerate() {
            let inside = spec.window(i, len).contains(&j);
            let changed = ra.iter().zip(rb).any(|(x, y)| (x - y).abs() >= 1e-12);
            prop_assert!(inside || !changed, "window {} moved, step {} outside", i, j);
        }
    }

    #[test]
    fn alive_window_attention_rows_sum_to_one(len in 1usize..150, seed in 0u64..1000) {
        let m = model(Variant::Swan, |_| {});
        let s = random_sample(len, 10, 4, 0, seed);
        let (_, trace) = m.predict_with_trace(&s).unwrap();
        let trace = trace.expect("swan has window attention");
        for row in &trace.attention {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "row sums to {}", total);
        }
    }

    #[test]
    fn mean_pooling_ablation_ignores_step_order(len in 2usize..40, seed in 0u64..1000) {
        let m = model(Variant::SwanNoWinatt, |c| {
            c.positional_encoding = false;
            c.r_self = 64;
        });
        let s = random_sample(len, 10, 4, 1, seed);
        let mut perm: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for i in (1..len).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let a = m.predict(&s).unwrap();
        let b = m.predict(&permuted(&s, &perm)).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }
}

#[test]
fn full_swan_depends_on_step_order() {
    let m = model(Variant::Swan, |c| {
        c.positional_encoding = false;
        c.r_self = 64;
    });
    let s = random_sample(40, 10, 4, 1, 5);
    let perm: Vec<usize> = (0..40).rev().collect();
    let a = m.predict(&s).unwrap();
    let b = m.predict(&permuted(&s, &perm)).unwrap();
    assert!((a - b).abs() > 1e-9, "reversal left the output at {a}");
}

#[test]
fn transformer_outsizes_swan() {
    let swan = model(Variant::Swan, |_| {}).count_params();
    let tf = model(Variant::Transformer, |_| {}).count_params();
    assert!(tf > swan, "{tf} <= {swan}");
}

#[test]
fn seeded_training_is_repeatable() {
    let data = generate(&GeneratorConfig {
        subjects: 10,
        per_subject: 10,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let split = split_subjects(&data, 3, 0).unwrap();
    let part = split.partition(&data, 0).unwrap();
    let pick = |idx: &[usize]| idx.iter().map(|&i| &data[i]).collect::<Vec<_>>();
    let run = || -> (TrainHistory, Vec<u64>) {
        let mut m = Model::new(ModelConfig {
            epochs: 2,
            seed: 11,
            ..ModelConfig::default()
        })
        .unwrap();
        let h = train(&mut m, &pick(&part.train), &pick(&part.val)).unwrap();
        let bits = m
            .params()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect();
        (h, bits)
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(p1, p2);
    assert_eq!(
        h1.train_loss.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
        h2.train_loss.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
    );
}
