use std::ops::Range;

use crate::error::{Error, Result};

/// Boolean `rows × cols` matrix of permitted (query, key) pairs.
///
/// Stored as sorted half-open runs of `true` columns per row, so the banded
/// and windowed masks used by the attention layers cost O(rows) memory
/// instead of O(rows · cols).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    runs: Vec<(usize, usize)>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut runs = Vec::new();
        offsets.push(0);
        for i in 0..rows {
            let mut start = None;
            for j in 0..cols {
                match (f(i, j), start) {
                    (true, None) => start = Some(j),
                    (false, Some(s)) => {
                        runs.push((s, j));
                        start = None;
                    }
                    _ => {}
                }
            }
            if let Some(s) = start {
                runs.push((s, cols));
            }
            offsets.push(runs.len());
        }
        Self {
            rows,
            cols,
            offsets,
            runs,
        }
    }

    /// One contiguous run per row, clipped to `0..cols`; empty ranges give empty rows.
    pub fn from_row_ranges(
        rows: usize,
        cols: usize,
        mut range: impl FnMut(usize) -> Range<usize>,
    ) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut runs = Vec::with_capacity(rows);
        offsets.push(0);
        for i in 0..rows {
            let r = range(i);
            let (s, e) = (r.start.min(cols), r.end.min(cols));
            if s < e {
                runs.push((s, e));
            }
            offsets.push(runs.len());
        }
        Self {
            rows,
            cols,
            offsets,
            runs,
        }
    }

    pub fn from_dense(bits: &[Vec<bool>]) -> Result<Self> {
        let cols = bits.first().map_or(0, Vec::len);
        if let Some(bad) = bits.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("mask", &[cols], &[bad.len()]));
        }
        Ok(Self::from_fn(bits.len(), cols, |i, j| bits[i][j]))
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self::from_row_ranges(rows, cols, |_| 0..cols)
    }

    /// `1 × len` mask marking the first `valid` steps as real.
    pub fn key_padding(len: usize, valid: usize) -> Self {
        Self::from_row_ranges(1, len, |_| 0..valid)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_runs(&self, row: usize) -> &[(usize, usize)] {
        &self.runs[self.offsets[row]..self.offsets[row + 1]]
    }

    /// Number of permitted keys in `row`.
    pub fn row_count(&self, row: usize) -> usize {
        self.row_runs(row).iter().map(|(s, e)| e - s).sum()
    }

    pub fn row_is_empty(&self, row: usize) -> bool {
        self.offsets[row] == self.offsets[row + 1]
    }

    pub fn row_keys(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_runs(row).iter().flat_map(|&(s, e)| s..e)
    }

    pub fn nnz(&self) -> usize {
        self.runs.iter().map(|(s, e)| e - s).sum()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.row_runs(row).iter().any(|&(s, e)| s <= col && col < e)
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| self.row_keys(i).all(|j| self.get(j, i)))
    }

    /// Element-wise conjunction of two masks of identical shape.
    pub fn and(&self, other: &AttentionMask) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(
                "mask and",
                &[self.rows, self.cols],
                &[other.rows, other.cols],
            ));
        }
        Ok(self.combine_rows(|i| other.row_runs(i)))
    }

    /// Conjunction of every row with the single row of a `1 × cols` key mask.
    pub fn restrict_keys(&self, keys: &AttentionMask) -> Result<Self> {
        if keys.rows != 1 || keys.cols != self.cols {
            return Err(Error::shape(
                "restrict_keys",
                &[self.rows, self.cols],
                &[keys.rows, keys.cols],
            ));
        }
        let key_runs = keys.row_runs(0);
        Ok(self.combine_rows(|_| key_runs))
    }

    fn combine_rows<'a>(&self, other: impl Fn(usize) -> &'a [(usize, usize)]) -> Self {
        let mut offsets = Vec::with_capacity(self.rows + 1);
        let mut runs = Vec::with_capacity(self.runs.len());
        offsets.push(0);
        for i in 0..self.rows {
            let (a, b) = (self.row_runs(i), other(i));
            let (mut x, mut y) = (0, 0);
            while x < a.len() && y < b.len() {
                let s = a[x].0.max(b[y].0);
                let e = a[x].1.min(b[y].1);
                if s < e {
                    runs.push((s, e));
                }
                if a[x].1 < b[y].1 {
                    x += 1;
                } else {
                    y += 1;
                }
            }
            offsets.push(runs.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            offsets,
            runs,
        }
    }
}
