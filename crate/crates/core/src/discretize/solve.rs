//! Direct and iterative solvers for the assembled systems.

use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Systems up to this many rows are factored; larger ones go to CG.
pub const CHOLESKY_MAX_ROWS: usize = 200_000;
const RELATIVE_RESIDUAL: f64 = 1e-12;
const REFINEMENT_SWEEPS: usize = 3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

/// Envelope (profile) Cholesky factor `A = L Lᵀ` of a symmetric matrix.
///
/// Row `i` of `L` is stored densely from its first nonzero column up to the
/// diagonal. There is no reordering, so fill is confined to the envelope of
/// the natural node numbering.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    /// Factors using the lower triangle of `a`. Fails when a pivot is not positive.
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let first: Vec<usize> = (0..n)
            .map(|i| a.row(i).map(|(c, _)| c).filter(|&c| c <= i).min().unwrap_or(i))
            .collect();
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            for (c, v) in a.row(i).filter(|&(c, _)| c <= i) {
                data[start[i] + c - first[i]] = v;
            }
        }
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let lo = fi.max(first[j]);
                let (head, tail) = data.split_at_mut(start[i]);
                let row_j = &head[start[j] + lo - first[j]..start[j] + j - first[j]];
                let row_i = &tail[..i - fi + 1];
                let s = row_i[j - fi] - dot(&row_i[lo - fi..j - fi], row_j);
                let ljj = head[start[j] + j - first[j]];
                tail[j - fi] = s / ljj;
            }
            let row_i = &data[start[i]..start[i + 1]];
            let d = row_i[i - fi] - dot(&row_i[..i - fi], &row_i[..i - fi]);
            if !(d > 0.0) {
                return Err(Error::Precondition(format!(
                    "matrix is not positive definite (pivot {d:e} at row {i})"
                )));
            }
            data[start[i] + i - fi] = d.sqrt();
        }
        Ok(Self { first, start, data })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.first.len();
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] = (y[i] - dot(&row[..i - fi], &y[fi..i])) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.start[i]..self.start[i + 1]];
            y[i] /= row[i - fi];
            let xi = y[i];
            for (yk, l) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yk -= l * xi;
            }
        }
        y
    }
}

/// Banded LU factorization with partial pivoting for general (nonsymmetric)
/// matrices with a narrow band.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    fn at(&self, row: usize, col: usize) -> usize {
        row * self.width + (col + self.lower - row)
    }

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let (mut lower, mut upper) = (0, 0);
        for r in 0..n {
            for (c, _) in a.row(r) {
                lower = lower.max(r.saturating_sub(c));
                upper = upper.max(c.saturating_sub(r));
            }
        }
        // Pivoting can push row entries up to `lower` further right.
        let reach = lower + upper;
        let width = lower + reach + 1;
        let mut lu = Self {
            n,
            lower,
            upper: reach,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
        };
        for r in 0..n {
            for (c, v) in a.row(r) {
                let idx = lu.at(r, c);
                lu.data[idx] = v;
            }
        }
        for i in 0..n {
            let last_row = (i + lower).min(n - 1);
            let last_col = (i + reach).min(n - 1);
            let mut p = i;
            let mut best = lu.data[lu.at(i, i)].abs();
            for r in i + 1..=last_row {
                let v = lu.data[lu.at(r, i)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Precondition(format!("matrix is singular at column {i}")));
            }
            lu.pivots[i] = p;
            if p != i {
                for c in i..=last_col {
                    let (x, y) = (lu.at(i, c), lu.at(p, c));
                    lu.data.swap(x, y);
                }
            }
            let pivot = lu.data[lu.at(i, i)];
            for r in i + 1..=last_row {
                let ir = lu.at(r, i);
                let l = lu.data[ir] / pivot;
                lu.data[ir] = l;
                if l != 0.0 {
                    for c in i + 1..=last_col {
                        let (src, dst) = (lu.at(i, c), lu.at(r, c));
                        lu.data[dst] -= l * lu.data[src];
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            x.swap(i, self.pivots[i]);
            let xi = x[i];
            for r in i + 1..=(i + self.lower).min(n.saturating_sub(1)) {
                x[r] -= self.data[self.at(r, i)] * xi;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in i + 1..=(i + self.upper).min(n - 1) {
                s -= self.data[self.at(i, c)] * x[c];
            }
            x[i] = s / self.data[self.at(i, i)];
        }
        x
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let b_norm = norm2(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver {
                iterations: it,
                residual: norm2(&r) / b_norm,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if norm2(&r) <= 0.5 * tol * b_norm {
            let true_res = norm2(&residual(a, &x, b)) / b_norm;
            if true_res <= tol {
                return Ok(x);
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: norm2(&residual(a, &x, b)) / b_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdBackend {
    /// Cholesky up to [`CHOLESKY_MAX_ROWS`] rows, CG beyond.
    Auto,
    Cholesky,
    ConjugateGradient,
}

/// Solves `A x = b` for symmetric positive definite `A` to relative residual 1e-12.
pub fn solve_spd(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    solve_spd_with(a, b, SpdBackend::Auto)
}

pub fn solve_spd_with(a: &CsrMatrix, b: &[f64], backend: SpdBackend) -> Result<Vec<f64>> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::Precondition(format!(
            "right-hand side has length {} for a {n}x{n} matrix",
            b.len()
        )));
    }
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let use_cholesky = match backend {
        SpdBackend::Auto => n <= CHOLESKY_MAX_ROWS,
        SpdBackend::Cholesky => true,
        SpdBackend::ConjugateGradient => false,
    };
    if use_cholesky {
        match SkylineCholesky::factor(a) {
            Ok(chol) => {
                let mut x = chol.solve(b);
                for _ in 0..REFINEMENT_SWEEPS {
                    let r = residual(a, &x, b);
                    if norm2(&r) <= RELATIVE_RESIDUAL * b_norm {
                        return Ok(x);
                    }
                    let dx = chol.solve(&r);
                    x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
                }
                let res = norm2(&residual(a, &x, b)) / b_norm;
                if res <= RELATIVE_RESIDUAL {
                    return Ok(x);
                }
                return Err(Error::Solver {
                    iterations: REFINEMENT_SWEEPS,
                    residual: res,
                });
            }
            Err(e) if backend == SpdBackend::Cholesky => return Err(e),
            Err(_) => {}
        }
    }
    conjugate_gradient(a, b, RELATIVE_RESIDUAL, 10 * n.max(1))
}
