use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Square matrix in compressed-row layout with sorted, duplicate-free columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    spd_hint: bool,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|&&(r, c, _)| r >= n || c >= n) {
            return Err(Error::Precondition(format!(
                "triplet ({r}, {c}) outside a {n}x{n} matrix"
            )));
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            values,
            spd_hint: false,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            values: vec![1.0; n],
            spd_hint: true,
        }
    }

    pub fn with_spd_hint(mut self, spd: bool) -> Self {
        self.spd_hint = spd;
        self
    }

    pub fn spd_hint(&self) -> bool {
        self.spd_hint
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    /// True when every stored entry sits on the diagonal.
    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, _)| c == r))
    }

    /// Largest `|r - c|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, _)| r.abs_diff(c)))
            .max()
            .unwrap_or(0)
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (r, yr) in y.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            *yr = self.cols[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `a·self + b·other` on the union sparsity pattern.
    pub fn linear_combination(&self, a: f64, other: &CsrMatrix, b: f64) -> Result<CsrMatrix> {
        if self.n != other.n {
            return Err(Error::Precondition(format!(
                "cannot combine {}x{} and {}x{} matrices",
                self.n, self.n, other.n, other.n
            )));
        }
        let triplets = (0..self.n)
            .flat_map(|r| {
                self.row(r)
                    .map(move |(c, v)| (r, c, a * v))
                    .chain(other.row(r).map(move |(c, v)| (r, c, b * v)))
            })
            .collect();
        CsrMatrix::from_triplets(self.n, triplets)
    }

    /// Values of `other` laid out on this matrix's pattern. Fails when
    /// `other` has an entry outside the pattern.
    pub fn align_values(&self, other: &CsrMatrix) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.nnz()];
        for r in 0..self.n {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            for (c, v) in other.row(r) {
                let pos = self.cols[span.clone()].binary_search(&c).map_err(|_| {
                    Error::Precondition(format!("entry ({r}, {c}) outside the target pattern"))
                })?;
                out[span.start + pos] = v;
            }
        }
        Ok(out)
    }

    /// Largest `|a_rc - a_cr|`, relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        (0..self.n)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .map(|(r, c, v)| (v - self.get(c, r)).abs())
            .fold(0.0, f64::max)
            / scale
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry() <= tol
    }

    /// One `row col value` line per stored entry, 17 significant digits.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                writeln!(out, "{r} {c} {v:.16e}")?;
            }
        }
        Ok(())
    }

    pub fn save_triplets(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = std::fs::File::create(path).map_err(io)?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_triplets(&mut buf).map_err(io)?;
        buf.flush().map_err(io)
    }

    /// Parses the format written by [`CsrMatrix::write_triplets`].
    pub fn read_triplets(n: usize, text: &str) -> Result<Self> {
        let triplets = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let mut it = line.split_whitespace();
                let bad = || Error::Config(format!("malformed triplet line `{line}`"));
                let r = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                let c = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                let v = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                Ok((r, c, v))
            })
            .collect::<Result<Vec<_>>>()?;
        CsrMatrix::from_triplets(n, triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            vec![(0, 0, 2.0), (1, 0, -1.0), (0, 1, -1.0), (1, 1, 2.0), (2, 2, 1.0), (1, 1, 0.5)],
        )
        .unwrap()
    }

    #[test]
    fn duplicates_are_summed() {
        let a = sample();
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.get(1, 1), 2.5);
        assert_eq!(a.get(2, 0), 0.0);
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![1.0, 1.5, 1.0]);
        assert_eq!(a.bandwidth(), 1);
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn out_of_bounds_triplet() {
        assert!(CsrMatrix::from_triplets(2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn combination_and_alignment() {
        let a = sample();
        let i = CsrMatrix::identity(3);
        let c = a.linear_combination(2.0, &i, 3.0).unwrap();
        assert_eq!(c.get(0, 0), 7.0);
        assert_eq!(c.get(0, 1), -2.0);
        let aligned = c.align_values(&i).unwrap();
        assert_eq!(aligned.iter().sum::<f64>(), 3.0);
        assert!(i.align_values(&a).is_err());
    }

    #[test]
    fn triplet_text_round_trip() {
        let a = sample().linear_combination(1.0 / 3.0, &CsrMatrix::identity(3), 0.1).unwrap();
        let mut buf = Vec::new();
        a.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().starts_with("0 0 "));
        assert_eq!(CsrMatrix::read_triplets(3, &text).unwrap(), a);
    }
}
