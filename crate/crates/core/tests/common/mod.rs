//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swan_core::data::{Series, SequenceSample};

pub type Mat = Vec<Vec<f64>>;

pub fn random_mat(rng: &mut impl Rng, rows: usize, cols: usize) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// A sample with uniform random channels and metadata.
pub fn random_sample(len: usize, width: usize, meta: usize, label: u8, seed: u64) -> SequenceSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = random_mat(&mut rng, len, width);
    SequenceSample {
        subject_id: "S00".into(),
        video_id: "V00".into(),
        segment_id: format!("S00-{seed:03}"),
        series: Series::from_rows(&rows).expect("rectangular rows"),
        metadata: (0..meta).map(|_| rng.random_range(0.0..1.0)).collect(),
        label,
        event: None,
    }
}

/// Dependency-free reference computations, written with plain nested loops.
pub mod direct {
    use super::Mat;

    pub struct Projections {
        pub w_q: Mat,
        pub b_q: Vec<f64>,
        pub w_k: Mat,
        pub b_k: Vec<f64>,
        pub w_v: Mat,
        pub b_v: Vec<f64>,
        pub w_o: Mat,
        pub b_o: Vec<f64>,
    }

    /// `x·W + b` with `W` stored as `in × out`.
    pub fn affine(x: &Mat, w: &Mat, b: &[f64]) -> Mat {
        x.iter()
            .map(|row| {
                (0..b.len())
                    .map(|o| b[o] + (0..row.len()).map(|i| row[i] * w[i][o]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Multi-head scaled dot-product attention of `queries` over
    /// `keys_values`, then the output projection. Every query sees every key.
    pub fn attention(queries: &Mat, keys_values: &Mat, p: &Projections, heads: usize) -> Mat {
        let q = affine(queries, &p.w_q, &p.b_q);
        let k = affine(keys_values, &p.w_k, &p.b_k);
        let v = affine(keys_values, &p.w_v, &p.b_v);
        let d = p.b_q.len();
        let dh = d / heads;
        let mut concat = vec![vec![0.0; d]; q.len()];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for (i, qi) in q.iter().enumerate() {
                let scores: Vec<f64> = k
                    .iter()
                    .map(|kj| {
                        cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    for c in cols.clone() {
                        concat[i][c] += e / z * v[j][c];
                    }
                }
            }
        }
        affine(&concat, &p.w_o, &p.b_o)
    }

    /// Per-dimension maximum over all rows, as a single row.
    pub fn column_max(x: &Mat) -> Mat {
        let d = x[0].len();
        vec![(0..d)
            .map(|c| x.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max))
            .collect()]
    }
}
