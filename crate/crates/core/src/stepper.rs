//! Fully implicit BDF-k convolution-quadrature time stepping with starting-step
//! correction.
//!
//! Step `n` solves, for the nodal vector `u_n`,
//!
//! ```text
//! τ^{-α} Mass [ω_0 (u_n - u_0) + H_n] + Stiffness u_n - Mass f(u_n)
//!     - a_n (-Stiffness u_0 + Mass f(u_0)) = 0,
//! H_n = Σ_{i=1}^{n-1} ω_i (u_{n-i} - u_0),
//! ```
//!
//! where `a_n` is nonzero only for `1 <= n <= k-1` in corrected mode. Each
//! step is a nonlinear elliptic system solved by Newton's method.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::cq::{correction_coeffs, cq_weights, CorrectionSet, CqWeights, MAX_ORDER};
use crate::discretize::{BandedLu, CsrMatrix, OperatorPair, SkylineCholesky};
use crate::error::{Error, Result};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct StepperConfig {
    k: usize,
    alpha: f64,
    steps: usize,
    final_time: f64,
    corrected: bool,
    newton_tol: f64,
    newton_max_iter: usize,
}

impl StepperConfig {
    /// Corrected BDF-`k` with `steps` uniform steps on `[0, final_time]`.
    pub fn new(k: usize, alpha: f64, steps: usize, final_time: f64) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&k) {
            return Err(Error::range("k", k as f64, "BDF order must lie in 1..=6"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::range("alpha", alpha, "fractional order must lie in (0, 1]"));
        }
        if steps < k {
            return Err(Error::range(
                "N",
                steps as f64,
                "need at least k steps so every corrected step exists",
            ));
        }
        if !(final_time > 0.0 && final_time.is_finite()) {
            return Err(Error::range("T", final_time, "final time must be positive"));
        }
        Ok(Self {
            k,
            alpha,
            steps,
            final_time,
            corrected: true,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
        })
    }

    pub fn with_correction(mut self, corrected: bool) -> Self {
        self.corrected = corrected;
        self
    }

    pub fn with_newton_tol(mut self, tol: f64) -> Self {
        self.newton_tol = tol;
        self
    }

    pub fn with_newton_max_iter(mut self, max_iter: usize) -> Self {
        self.newton_max_iter = max_iter;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn corrected(&self) -> bool {
        self.corrected
    }

    pub fn newton_tol(&self) -> f64 {
        self.newton_tol
    }

    pub fn newton_max_iter(&self) -> usize {
        self.newton_max_iter
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.steps as f64
    }

    /// `t_n = n τ`, with `t_N` pinned to the final time.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.final_time
        } else {
            n as f64 * self.tau()
        }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Nodal nonlinearity `f` together with its exact derivative.
#[derive(Clone)]
pub struct SemilinearRhs {
    f: ScalarFn,
    f_prime: ScalarFn,
    constant_slope: Option<f64>,
}

impl fmt::Debug for SemilinearRhs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemilinearRhs")
            .field("constant_slope", &self.constant_slope)
            .finish_non_exhaustive()
    }
}

impl SemilinearRhs {
    pub fn new<F, D>(f: F, f_prime: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            f_prime: Arc::new(f_prime),
            constant_slope: None,
        }
    }

    /// `f(u) = slope·u`. The Newton matrix is then the same at every step
    /// and is factored once per run.
    pub fn linear(slope: f64) -> Self {
        Self {
            f: Arc::new(move |u| slope * u),
            f_prime: Arc::new(move |_| slope),
            constant_slope: Some(slope),
        }
    }

    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    pub fn eval(&self, u: f64) -> f64 {
        (self.f)(u)
    }

    pub fn derivative(&self, u: f64) -> f64 {
        (self.f_prime)(u)
    }

    pub fn constant_slope(&self) -> Option<f64> {
        self.constant_slope
    }

    /// Largest gap between `f'` and a central difference of `f` over `samples`.
    pub fn derivative_mismatch(&self, eps: f64, samples: &[f64]) -> f64 {
        samples
            .iter()
            .map(|&s| ((self.eval(s + eps) - self.eval(s - eps)) / (2.0 * eps) - self.derivative(s)).abs())
            .fold(0.0, f64::max)
    }
}

/// Output of a run: the time grid, stored snapshots and Newton statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: BTreeMap<usize, Vec<f64>>,
    /// Residual evaluations per step, for steps `1..=N`.
    pub newton_iters: Vec<usize>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        let (_, u) = self.snapshots.last_key_value().expect("final snapshot is always stored");
        u
    }

    pub fn snapshot(&self, n: usize) -> Option<&[f64]> {
        self.snapshots.get(&n).map(Vec::as_slice)
    }

    pub fn mean_newton_iters(&self) -> f64 {
        if self.newton_iters.is_empty() {
            return 0.0;
        }
        self.newton_iters.iter().sum::<usize>() as f64 / self.newton_iters.len() as f64
    }

    pub fn max_newton_iters(&self) -> usize {
        self.newton_iters.iter().copied().max().unwrap_or(0)
    }
}

/// `H_n = Σ_{i=1}^{n} ω_i (u_{n-i} - u_0)`, where `past` holds `u_1 .. u_{n-1}`.
pub fn history_term(weights: &CqWeights, past: &[Vec<f64>], u0: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Precondition("history is defined for n >= 1".into()));
    }
    if past.len() != n - 1 {
        return Err(Error::Precondition(format!(
            "step {n} needs {} past states, got {}",
            n - 1,
            past.len()
        )));
    }
    if weights.len() < n {
        return Err(Error::Precondition(format!(
            "step {n} needs {n} weights, got {}",
            weights.len()
        )));
    }
    if let Some(bad) = past.iter().find(|u| u.len() != u0.len()) {
        return Err(Error::Precondition(format!(
            "state of length {} does not match initial data of length {}",
            bad.len(),
            u0.len()
        )));
    }
    let dofs = u0.len();
    let mut diffs = Vec::with_capacity(dofs * past.len());
    for u in past {
        diffs.extend(u.iter().zip(u0).map(|(a, b)| a - b));
    }
    let mut out = vec![0.0; dofs];
    accumulate_history(weights.as_slice(), &diffs, dofs, n, &mut out);
    Ok(out)
}

/// Writes `Σ_{i=1}^{n-1} ω_i d_{n-i}` into `out`, with `d_j` stored at
/// `diffs[(j-1)·dofs ..]`.
fn accumulate_history(weights: &[f64], diffs: &[f64], dofs: usize, n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 1..n {
        let w = weights[i];
        let d = &diffs[(n - i - 1) * dofs..(n - i) * dofs];
        for (o, di) in out.iter_mut().zip(d) {
            *o += w * di;
        }
    }
}

enum Factor {
    Cholesky(SkylineCholesky),
    Lu(BandedLu),
}

impl Factor {
    /// Cholesky when the matrix is known symmetric and it succeeds, banded LU otherwise.
    fn new(matrix: &CsrMatrix, symmetric: bool) -> Result<Self> {
        if symmetric {
            if let Ok(chol) = SkylineCholesky::factor(matrix) {
                return Ok(Factor::Cholesky(chol));
            }
        }
        BandedLu::factor(matrix).map(Factor::Lu)
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            Factor::Cholesky(c) => c.solve(b),
            Factor::Lu(lu) => lu.solve(b),
        }
    }
}

/// Time-stepping state for one run.
pub struct Stepper<'a> {
    config: StepperConfig,
    ops: &'a OperatorPair,
    rhs: &'a SemilinearRhs,
    weights: Vec<f64>,
    corrections: CorrectionSet,
    /// `τ^{-α}`
    scale: f64,
    /// `τ^{-α} ω_0 Mass + Stiffness`
    system: CsrMatrix,
    /// `Mass` laid out on the pattern of `system`.
    mass_on_system: Vec<f64>,
    system_diag: Vec<f64>,
    symmetric_jacobian: bool,
    frozen: Option<Factor>,
    u0: Vec<f64>,
    /// `-Stiffness u_0 + Mass f(u_0)`
    start_defect: Vec<f64>,
    diffs: Vec<f64>,
    current: Vec<f64>,
    n: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(
        config: StepperConfig,
        ops: &'a OperatorPair,
        rhs: &'a SemilinearRhs,
        u0: &[f64],
    ) -> Result<Self> {
        let dofs = ops.dim();
        if u0.len() != dofs {
            return Err(Error::Precondition(format!(
                "initial data has length {} but the operators act on {dofs} nodes",
                u0.len()
            )));
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("initial data is not finite".into()));
        }
        let weights = cq_weights(config.k, config.alpha, config.steps)?.into_vec();
        let corrections = if config.corrected {
            correction_coeffs(config.k)?
        } else {
            correction_coeffs(1)?
        };
        let scale = config.tau().powf(-config.alpha);
        let system = ops
            .mass()
            .linear_combination(scale * weights[0], ops.stiffness(), 1.0)?;
        let mass_on_system = system.align_values(ops.mass())?;
        let system_diag = system.diagonal();
        let symmetric_jacobian = ops.mass().is_diagonal() && ops.stiffness().is_symmetric(1e-13);
        let frozen = match rhs.constant_slope() {
            Some(slope) => {
                let mut jac = system.clone();
                for (v, m) in jac.values_mut().iter_mut().zip(&mass_on_system) {
                    *v -= slope * m;
                }
                let symmetric = ops.mass().is_symmetric(1e-13) && ops.stiffness().is_symmetric(1e-13);
                Some(Factor::new(&jac, symmetric)?)
            }
            None => None,
        };
        let f_u0: Vec<f64> = u0.iter().map(|&v| rhs.eval(v)).collect();
        let mass_f = ops.mass().mul_vec(&f_u0);
        let stiff_u0 = ops.stiffness().mul_vec(u0);
        let start_defect = mass_f.iter().zip(&stiff_u0).map(|(m, s)| m - s).collect();
        Ok(Self {
            diffs: Vec::with_capacity(dofs * config.steps),
            config,
            ops,
            rhs,
            weights,
            corrections,
            scale,
            system,
            mass_on_system,
            system_diag,
            symmetric_jacobian,
            frozen,
            u0: u0.to_vec(),
            start_defect,
            current: u0.to_vec(),
            n: 0,
        })
    }

    pub fn config(&self) -> &StepperConfig {
        &self.config
    }

    /// Index of the last completed step.
    pub fn index(&self) -> usize {
        self.n
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }

    /// Advances to `u_{n+1}`; returns the number of residual evaluations used.
    pub fn step(&mut self) -> Result<usize> {
        let n = self.n + 1;
        if n > self.config.steps {
            return Err(Error::Precondition(format!(
                "all {} steps are already done",
                self.config.steps
            )));
        }
        let dofs = self.u0.len();
        let mut history = vec![0.0; dofs];
        accumulate_history(&self.weights, &self.diffs, dofs, n, &mut history);

        // constant part: Mass (τ^{-α} H_n - τ^{-α} ω_0 u_0) - a_n (start defect)
        let shifted: Vec<f64> = history
            .iter()
            .zip(&self.u0)
            .map(|(h, u)| self.scale * (h - self.weights[0] * u))
            .collect();
        let mut constant = self.ops.mass().mul_vec(&shifted);
        let a_n = self.corrections.at_step(n);
        if a_n != 0.0 {
            for (c, d) in constant.iter_mut().zip(&self.start_defect) {
                *c -= a_n * d;
            }
        }

        let mut u = self.current.clone();
        let (iterations, _) = self.newton(n, &mut u, &constant)?;
        self.diffs.extend(u.iter().zip(&self.u0).map(|(a, b)| a - b));
        self.current = u;
        self.n = n;
        Ok(iterations)
    }

    fn residual(&self, u: &[f64], constant: &[f64]) -> Vec<f64> {
        let fu: Vec<f64> = u.iter().map(|&v| self.rhs.eval(v)).collect();
        let mut r = self.system.mul_vec(u);
        let mf = self.ops.mass().mul_vec(&fu);
        for ((ri, mfi), ci) in r.iter_mut().zip(&mf).zip(constant) {
            *ri += ci - mfi;
        }
        r
    }

    /// Residual in units of `u`: each row divided by the diagonal of `system`.
    fn scaled_norm(&self, r: &[f64]) -> f64 {
        r.iter()
            .zip(&self.system_diag)
            .map(|(ri, d)| (ri / d).abs())
            .fold(0.0, f64::max)
    }

    /// Stops once the Newton update is below `newton_tol` relative to
    /// `max(1, |u|∞)`; the update is applied before returning.
    fn newton(&self, n: usize, u: &mut [f64], constant: &[f64]) -> Result<(usize, f64)> {
        let tol = self.config.newton_tol;
        let mut last = f64::INFINITY;
        for iter in 1..=self.config.newton_max_iter {
            let r = self.residual(u, constant);
            last = self.scaled_norm(&r);
            if !last.is_finite() {
                break;
            }
            if last == 0.0 {
                return Ok((iter, last));
            }
            let delta = match &self.frozen {
                Some(factor) => factor.solve(&r),
                None => self.jacobian_factor(u)?.solve(&r),
            };
            let mut step = 0.0f64;
            let mut size = 1.0f64;
            for (ui, di) in u.iter_mut().zip(delta) {
                *ui -= di;
                step = step.max(di.abs());
                size = size.max(ui.abs());
            }
            if step <= tol * size {
                return Ok((iter, last));
            }
        }
        Err(Error::Step {
            step: n,
            iterations: self.config.newton_max_iter,
            residual: last,
        })
    }

    /// `J(u) = τ^{-α} ω_0 Mass + Stiffness - Mass diag(f'(u))`.
    fn jacobian_factor(&self, u: &[f64]) -> Result<Factor> {
        let mut jac = self.system.clone();
        let cols = self.system.col_indices();
        let slopes: Vec<f64> = u.iter().map(|&v| self.rhs.derivative(v)).collect();
        for ((v, m), &c) in jac.values_mut().iter_mut().zip(&self.mass_on_system).zip(cols) {
            *v -= m * slopes[c];
        }
        Factor::new(&jac, self.symmetric_jacobian)
    }
}

/// Runs all `N` steps, storing the states at `snapshot_at` and always at `N`.
pub fn run(
    config: &StepperConfig,
    ops: &OperatorPair,
    rhs: &SemilinearRhs,
    u0: &[f64],
    snapshot_at: &[usize],
) -> Result<Trajectory> {
    let steps = config.steps;
    let mut wanted: BTreeSet<usize> = snapshot_at.iter().copied().filter(|&n| n <= steps).collect();
    wanted.insert(steps);
    let mut snapshots = BTreeMap::new();
    if wanted.contains(&0) {
        snapshots.insert(0, u0.to_vec());
    }
    let mut stepper = Stepper::new(config.clone(), ops, rhs, u0)?;
    let mut newton_iters = Vec::with_capacity(steps);
    for n in 1..=steps {
        newton_iters.push(stepper.step()?);
        if wanted.contains(&n) {
            snapshots.insert(n, stepper.current().to_vec());
        }
    }
    Ok(Trajectory {
        times: (0..=steps).map(|n| config.time(n)).collect(),
        snapshots,
        newton_iters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_fd, assemble_fem, Mesh};
    use std::f64::consts::PI;

    fn scalar_ops(lam: f64) -> OperatorPair {
        let stiff = CsrMatrix::from_triplets(1, vec![(0, 0, lam)]).unwrap();
        OperatorPair::new(CsrMatrix::identity(1), stiff, 1.0).unwrap()
    }

    fn allen_cahn() -> SemilinearRhs {
        SemilinearRhs::new(|u| 4.0 * (u - u * u * u), |u| 4.0 - 12.0 * u * u)
    }

    #[test]
    fn config_validation() {
        assert!(StepperConfig::new(0, 0.5, 10, 1.0).is_err());
        assert!(StepperConfig::new(3, 0.5, 2, 1.0).is_err());
        assert!(StepperConfig::new(3, 0.0, 10, 1.0).is_err());
        assert!(StepperConfig::new(3, 0.5, 10, 0.0).is_err());
        let c = StepperConfig::new(3, 0.5, 3, 1.0).unwrap();
        assert_eq!(c.time(3), 1.0);
        assert!((c.tau() * 3.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn history_examples() {
        let w = cq_weights(1, 0.5, 4).unwrap();
        let u0 = vec![1.0, 2.0];
        assert_eq!(history_term(&w, &[], &u0, 1).unwrap(), vec![0.0, 0.0]);
        let u1 = vec![1.5, 1.0];
        let h2 = history_term(&w, &[u1], &u0, 2).unwrap();
        assert_eq!(h2, vec![-0.5 * 0.5, -0.5 * -1.0]);
        let flat = vec![u0.clone(), u0.clone(), u0.clone()];
        assert_eq!(history_term(&w, &flat, &u0, 4).unwrap(), vec![0.0, 0.0]);
        assert!(history_term(&w, &[vec![1.0]], &u0, 2).is_err());
        assert!(history_term(&w, &[], &u0, 2).is_err());
    }

    #[test]
    fn scalar_backward_euler_step() {
        let (lam, alpha, tau) = (3.0, 0.4, 0.25);
        let ops = scalar_ops(lam);
        let rhs = SemilinearRhs::zero();
        let cfg = StepperConfig::new(1, alpha, 1, tau).unwrap();
        let traj = run(&cfg, &ops, &rhs, &[2.0], &[]).unwrap();
        let want = 2.0 / (1.0 + tau.powf(alpha) * lam);
        assert!((traj.final_state()[0] - want).abs() < 1e-14);
    }

    #[test]
    fn zero_stays_zero() {
        let mesh = Mesh::new(1, 16).unwrap();
        let ops = assemble_fd(&mesh, 0.1).unwrap();
        for rhs in [SemilinearRhs::zero(), allen_cahn()] {
            let cfg = StepperConfig::new(3, 0.6, 20, 1.0).unwrap();
            let traj = run(&cfg, &ops, &rhs, &vec![0.0; 15], &[]).unwrap();
            assert!(traj.final_state().iter().all(|&v| v == 0.0));
            assert!(traj.newton_iters.iter().all(|&it| it == 1));
        }
    }

    #[test]
    fn step_failure_reports_index() {
        let ops = scalar_ops(1.0);
        let rhs = allen_cahn();
        let cfg = StepperConfig::new(2, 0.5, 4, 1.0).unwrap().with_newton_max_iter(1);
        match run(&cfg, &ops, &rhs, &[0.5], &[]) {
            Err(Error::Step { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected step failure, got {other:?}"),
        }
    }

    #[test]
    fn snapshots_include_start_and_end() {
        let mesh = Mesh::new(1, 8).unwrap();
        let ops = assemble_fd(&mesh, 1.0).unwrap();
        let u0 = mesh.interpolate(|x| (PI * x[0]).sin());
        let cfg = StepperConfig::new(2, 0.5, 10, 1.0).unwrap();
        let traj = run(&cfg, &ops, &SemilinearRhs::zero(), &u0, &[0, 4, 99]).unwrap();
        assert_eq!(traj.snapshots.keys().copied().collect::<Vec<_>>(), vec![0, 4, 10]);
        assert_eq!(traj.snapshot(0).unwrap(), u0.as_slice());
        assert_eq!(traj.times.len(), 11);
        assert_eq!(traj.newton_iters.len(), 10);
    }

    #[test]
    fn sine_mode_stays_modal() {
        let mesh = Mesh::new(1, 32).unwrap();
        let ops = assemble_fd(&mesh, 1.0).unwrap();
        let v = mesh.interpolate(|x| (2.0 * PI * x[0]).sin());
        let cfg = StepperConfig::new(4, 0.5, 40, 1.0).unwrap();
        let traj = run(&cfg, &ops, &SemilinearRhs::zero(), &v, &[]).unwrap();
        let u = traj.final_state();
        let amp = u[7] / v[7];
        for (a, b) in u.iter().zip(&v) {
            assert!((a - amp * b).abs() < 1e-11);
        }
    }

    #[test]
    fn fem_nonlinear_run_uses_few_newton_iterations() {
        let mesh = Mesh::new(2, 8).unwrap();
        let ops = assemble_fem(&mesh, 0.1).unwrap();
        let u0 = mesh.interpolate(|p| 4.0 * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]));
        let cfg = StepperConfig::new(3, 0.5, 25, 1.0).unwrap();
        let traj = run(&cfg, &ops, &allen_cahn(), &u0, &[]).unwrap();
        assert!(traj.max_newton_iters() <= 6);
        assert!(traj.final_state().iter().all(|v| v.abs() <= 1.01));
    }

    #[test]
    fn k1_correction_flag_is_inert() {
        let mesh = Mesh::new(1, 10).unwrap();
        let ops = assemble_fd(&mesh, 0.1).unwrap();
        let u0 = mesh.interpolate(|x| 4.0 * x[0] * (1.0 - x[0]));
        let cfg = StepperConfig::new(1, 0.3, 12, 1.0).unwrap();
        let a = run(&cfg, &ops, &allen_cahn(), &u0, &[]).unwrap();
        let b = run(&cfg.clone().with_correction(false), &ops, &allen_cahn(), &u0, &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn derivative_check() {
        let samples: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
        assert!(allen_cahn().derivative_mismatch(1e-6, &samples) <= 1e-6);
        let wrong = SemilinearRhs::new(|u| u * u, |u| u);
        assert!(wrong.derivative_mismatch(1e-6, &samples) > 1e-6);
    }
}
