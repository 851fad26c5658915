//! Compressed sparse rows and a banded LU direct solver with partial
//! pivoting and iterative refinement.
//!
//! Systems assembled on a row-major masked grid have bandwidth of a few grid
//! rows, so the band factorization stays cheap at desk-scale resolutions.

use crate::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const MAX_REFINEMENTS: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix from `(row, col, value)` triplets; duplicates are summed
    /// in input order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        // stable sort keeps summation order deterministic
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n = {n}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for r in 0..self.n {
            for (c, _) in self.row(r) {
                if c < r {
                    kl = kl.max(r - c);
                } else {
                    ku = ku.max(c - r);
                }
            }
        }
        (kl, ku)
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        (0..self.n).all(|r| {
            self.row(r)
                .all(|(c, _)| self.row(c).any(|(j, _)| j == r))
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Band LU factors in row-major band storage: row `i` holds columns
/// `i - kl ..= i + ku + kl` (the extra `kl` absorbs pivoting fill).
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for r in 0..n {
            for (c, v) in a.row(r) {
                let k = lu.idx(r, c);
                lu.data[k] = v;
            }
        }
        let threshold = 1e-14 * a.max_abs();
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.idx(k, k)].abs();
            for r in k + 1..=last_row {
                let v = lu.data[lu.idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= threshold {
                return Err(Error::SingularMatrix { row: k });
            }
            lu.pivots[k] = p;
            let last_col = (k + ku + kl).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let (x, y) = (lu.idx(k, c), lu.idx(p, c));
                    lu.data.swap(x, y);
                }
            }
            let pivot = lu.data[lu.idx(k, k)];
            let span = last_col - k;
            for r in k + 1..=last_row {
                let rk = lu.idx(r, k);
                let l = lu.data[rk] / pivot;
                lu.data[rk] = l;
                if l == 0.0 || span == 0 {
                    continue;
                }
                let src = lu.idx(k, k + 1);
                let dst = lu.idx(r, k + 1);
                let (head, tail) = lu.data.split_at_mut(dst);
                let src_row = &head[src..src + span];
                for (d, s) in tail[..span].iter_mut().zip(src_row) {
                    *d -= l * s;
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.ku + self.kl);
        r * self.width + (c + self.kl - r)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + self.kl).min(n - 1) {
                    b[r] -= self.data[self.idx(r, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + self.ku + self.kl).min(n - 1);
            let base = self.idx(k, k);
            let row = &self.data[base..base + (last_col - k) + 1];
            let mut s = b[k];
            for (off, v) in row.iter().enumerate().skip(1) {
                s -= v * b[k + off];
            }
            b[k] = s / row[0];
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    /// `‖Ax − b‖₂ / ‖b‖₂`, or the absolute residual when `b = 0`.
    pub residual: f64,
    pub refinements: usize,
}

/// Factored operator reused across right-hand sides.
#[derive(Clone, Debug)]
pub struct LinearSolver {
    matrix: CsrMatrix,
    lu: BandedLu,
    tolerance: f64,
}

impl LinearSolver {
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        Self::with_tolerance(matrix, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(matrix: CsrMatrix, tolerance: f64) -> Result<Self> {
        if matrix.dim() == 0 {
            return Err(Error::NoUnknowns);
        }
        let lu = BandedLu::factor(&matrix)?;
        Ok(Self {
            matrix,
            lu,
            tolerance,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Direct solve followed by iterative refinement until the residual
    /// meets the tolerance.
    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
        let bnorm = norm2(b);
        let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
        let mut x = b.to_vec();
        self.lu.solve_in_place(&mut x);
        let mut stats = SolveStats::default();
        loop {
            let ax = self.matrix.mul_vec(&x);
            let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            stats.residual = norm2(&r) / scale;
            if stats.residual <= self.tolerance {
                return Ok((x, stats));
            }
            if stats.refinements == MAX_REFINEMENTS || !stats.residual.is_finite() {
                return Err(Error::LinearSolve {
                    residual: stats.residual,
                    iterations: stats.refinements,
                });
            }
            self.lu.solve_in_place(&mut r);
            x.iter_mut().zip(&r).for_each(|(xi, di)| *xi += di);
            stats.refinements += 1;
        }
    }
}

/// One-shot factor and solve.
pub fn solve(matrix: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
    LinearSolver::new(matrix.clone())?.solve(b)
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
