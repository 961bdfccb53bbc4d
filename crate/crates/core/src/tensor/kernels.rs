//! Dense matrix kernels for the tape.
//!
//! Sequence activations are tall and thin (`L × D` with `D` around 10), so
//! for tall operands the kernels work on transposed copies: every inner loop
//! then runs along the sequence, which is long and contiguous.

/// Row count from which the transposed strategy is used.
const TALL: usize = 16;

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for (i, row) in a.chunks_exact(cols.max(1)).enumerate().take(rows) {
        for (j, &x) in row.iter().enumerate() {
            t[j * rows + i] = x;
        }
    }
    t
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out (m×n) += a (m×k) · b (k×n)`.
pub(crate) fn matmul_acc(out: &mut [f64], a: &[f64], m: usize, k: usize, b: &[f64], n: usize) {
    if m >= TALL {
        let at = transpose(a, m, k);
        let mut ct = Vec::with_capacity(n * m);
        for j in 0..n {
            let start = ct.len();
            let b0 = b[j];
            ct.extend(at[..m].iter().map(|x| b0 * x));
            let col = &mut ct[start..];
            for p in 1..k {
                axpy(col, b[p * n + j], &at[p * m..(p + 1) * m]);
            }
        }
        for (j, col) in ct.chunks_exact(m).enumerate() {
            for (i, &x) in col.iter().enumerate() {
                out[i * n + j] += x;
            }
        }
        return;
    }
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(orow, a[i * k + p], &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out (m×k) += g (m×n) · bᵀ` where `b` is `k×n`.
pub(crate) fn matmul_bt_acc(out: &mut [f64], g: &[f64], m: usize, n: usize, b: &[f64], k: usize) {
    if m >= TALL {
        let gt = transpose(g, m, n);
        let mut ot = Vec::with_capacity(k * m);
        for p in 0..k {
            let start = ot.len();
            let b0 = b[p * n];
            ot.extend(gt[..m].iter().map(|x| b0 * x));
            let col = &mut ot[start..];
            for j in 1..n {
                axpy(col, b[p * n + j], &gt[j * m..(j + 1) * m]);
            }
        }
        for (p, col) in ot.chunks_exact(m).enumerate() {
            for (i, &x) in col.iter().enumerate() {
                out[i * k + p] += x;
            }
        }
        return;
    }
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(gi, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `out (k×n) += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub(crate) fn matmul_at_acc(out: &mut [f64], a: &[f64], m: usize, k: usize, g: &[f64], n: usize) {
    if m >= TALL {
        let at = transpose(a, m, k);
        let gt = transpose(g, m, n);
        for p in 0..k {
            let ap = &at[p * m..(p + 1) * m];
            for j in 0..n {
                out[p * n + j] += dot(ap, &gt[j * m..(j + 1) * m]);
            }
        }
        return;
    }
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(&mut out[p * n..(p + 1) * n], a[i * k + p], gi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn fill(len: usize, seed: u64) -> Vec<f64> {
        (0..len)
            .map(|i| (((i as u64 + 1) * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn kernels_agree_with_naive_products() {
        for &(m, k, n) in &[(3, 4, 5), (40, 10, 10), (17, 3, 1), (1, 7, 2)] {
            let a = fill(m * k, 1);
            let b = fill(k * n, 2);
            let g = fill(m * n, 3);
            let mut c = vec![0.0; m * n];
            matmul_acc(&mut c, &a, m, k, &b, n);
            let want = naive(&a, m, k, &b, n);
            assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

            let bt = transpose(&b, k, n);
            let mut d = vec![0.0; m * k];
            matmul_bt_acc(&mut d, &g, m, n, &b, k);
            let want = naive(&g, m, n, &bt, k);
            assert!(d.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

            let at = transpose(&a, m, k);
            let mut e = vec![0.0; k * n];
            matmul_at_acc(&mut e, &a, m, k, &g, n);
            let want = naive(&at, k, m, &g, n);
            assert!(e.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }
}
