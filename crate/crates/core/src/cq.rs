//! Convolution-quadrature weights generated by the k-step BDF formulas.
//!
//! The BDF-k generating polynomial is `δ(ξ) = Σ_{i=1}^{k} (1/i)(1-ξ)^i`. The
//! fractional quadrature weights `ω_j` are the Taylor coefficients of `δ(ξ)^α`;
//! the `τ^{-α}` scaling is left to the time stepper.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Highest BDF order that is zero-stable.
pub const MAX_ORDER: usize = 6;

/// `lcm(1, ..., 6)`; every coefficient of `δ` is an integer over this.
const COMMON_DENOMINATOR: i64 = 60;

fn check_order(k: usize) -> Result<()> {
    if (1..=MAX_ORDER).contains(&k) {
        Ok(())
    } else {
        Err(Error::range("k", k as f64, "BDF order must lie in 1..=6"))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::range("alpha", alpha, "fractional order must lie in (0, 1]"))
    }
}

fn binomial(n: i64, r: i64) -> i64 {
    (0..r).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Coefficients of the BDF-k generating polynomial in powers of `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BdfDelta {
    k: usize,
    coeffs: Vec<f64>,
}

impl BdfDelta {
    pub fn order(&self) -> usize {
        self.k
    }

    /// `c_0, ..., c_k`.
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `δ(ξ)` at a complex point.
    pub fn eval(&self, xi: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * xi + c)
    }
}

/// Expands `Σ_{i=1}^{k} (1/i)(1-ξ)^i` exactly over the common denominator 60.
pub fn bdf_delta_coeffs(k: usize) -> Result<BdfDelta> {
    check_order(k)?;
    let k_i = k as i64;
    let coeffs = (0..=k_i)
        .map(|j| {
            let numerator: i64 = (j.max(1)..=k_i)
                .map(|i| binomial(i, j) * (COMMON_DENOMINATOR / i))
                .sum();
            let sign = if j % 2 == 0 { 1 } else { -1 };
            (sign * numerator) as f64 / COMMON_DENOMINATOR as f64
        })
        .collect();
    Ok(BdfDelta { k, coeffs })
}

/// Dimensionless weights `ω_0, ..., ω_N` of the BDF-k quadrature of order `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct CqWeights {
    k: usize,
    alpha: f64,
    weights: Vec<f64>,
}

impl CqWeights {
    pub fn order(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }
}

impl std::ops::Index<usize> for CqWeights {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.weights[j]
    }
}

/// Power-series coefficients of `δ(ξ)^α` by the Miller recurrence
///
/// `ω_n = (1/(n c_0)) Σ_{j=1}^{min(n,k)} ((α+1) j - n) c_j ω_{n-j}`, `ω_0 = c_0^α`.
///
/// The cost is `O(k n_max)`.
pub fn cq_weights(k: usize, alpha: f64, n_max: usize) -> Result<CqWeights> {
    check_alpha(alpha)?;
    let delta = bdf_delta_coeffs(k)?;
    let c = delta.coeffs();
    let mut w = Vec::with_capacity(n_max + 1);
    w.push(c[0].powf(alpha));
    for n in 1..=n_max {
        let nf = n as f64;
        let acc: f64 = (1..=n.min(k))
            .map(|j| ((alpha + 1.0) * j as f64 - nf) * c[j] * w[n - j])
            .sum();
        w.push(acc / (nf * c[0]));
    }
    Ok(CqWeights {
        k,
        alpha,
        weights: w,
    })
}

/// Same weights through Cauchy's integral formula on `|ξ| = ρ`, evaluated with an FFT.
///
/// Uses `8 (n_max + 1)` samples and `ρ^L = 1e-16`, so aliasing stays below
/// `1e-16` while the `ρ^{-n}` roundoff amplification stays below 100.
pub fn cq_weights_fft(k: usize, alpha: f64, n_max: usize) -> Result<CqWeights> {
    check_alpha(alpha)?;
    let delta = bdf_delta_coeffs(k)?;
    let len = 8 * (n_max + 1);
    let rho = 10f64.powf(-16.0 / len as f64);
    let mut samples: Vec<Complex64> = (0..len)
        .map(|m| {
            let xi = Complex64::from_polar(rho, 2.0 * std::f64::consts::PI * m as f64 / len as f64);
            delta.eval(xi).powf(alpha)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut samples);
    let scale = 1.0 / len as f64;
    let weights = samples
        .iter()
        .take(n_max + 1)
        .enumerate()
        .map(|(j, s)| s.re * scale * rho.powi(-(j as i32)))
        .collect();
    Ok(CqWeights {
        k,
        alpha,
        weights,
    })
}

/// Starting-step correction coefficients `a_1, ..., a_{k-1}` for BDF-k.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionSet {
    k: usize,
    coeffs: Vec<f64>,
}

impl CorrectionSet {
    pub fn order(&self) -> usize {
        self.k
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `a_n` for `1 <= n <= k-1`, zero otherwise.
    pub fn at_step(&self, n: usize) -> f64 {
        if n >= 1 && n < self.k {
            self.coeffs[n - 1]
        } else {
            0.0
        }
    }
}

const CORRECTIONS: [&[(i64, i64)]; MAX_ORDER] = [
    &[],
    &[(1, 2)],
    &[(11, 12), (-5, 12)],
    &[(31, 24), (-7, 6), (3, 8)],
    &[(1181, 720), (-177, 80), (341, 240), (-251, 720)],
    &[
        (2837, 1440),
        (-2543, 720),
        (17, 5),
        (-1201, 720),
        (95, 288),
    ],
];

/// Rational starting-step coefficients for BDF-k; empty for k = 1.
pub fn correction_rationals(k: usize) -> Result<&'static [(i64, i64)]> {
    check_order(k)?;
    Ok(CORRECTIONS[k - 1])
}

pub fn correction_coeffs(k: usize) -> Result<CorrectionSet> {
    let coeffs = correction_rationals(k)?
        .iter()
        .map(|&(p, q)| p as f64 / q as f64)
        .collect();
    Ok(CorrectionSet { k, coeffs })
}
