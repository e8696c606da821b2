//! Built-in problem instances.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::discretize::{Backend, Mesh};
use crate::error::{Error, Result};
use crate::special::linear_mode_solution;
use crate::stepper::SemilinearRhs;

pub const PROBLEM_NAMES: [&str; 3] = ["allen-cahn-2d", "allen-cahn-1d", "linear-mode-1d"];

type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Exact semidiscrete solution for `u_0 = sin(mπx)` and `f ≡ 0`.
///
/// Uses the eigenvalue of the discrete operator, so the comparison measures
/// time-discretization error only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModeOracle {
    pub alpha: f64,
    pub kappa: f64,
    pub mode: usize,
}

impl LinearModeOracle {
    pub fn eigenvalue(&self, backend: Backend, mesh: &Mesh) -> Result<f64> {
        backend.sine_mode_eigenvalue(mesh, self.kappa, self.mode)
    }

    pub fn amplitude(&self, backend: Backend, mesh: &Mesh, t: f64) -> Result<f64> {
        linear_mode_solution(self.alpha, self.eigenvalue(backend, mesh)?, t)
    }

    /// Nodal solution at time `t`.
    pub fn nodal(&self, backend: Backend, mesh: &Mesh, t: f64) -> Result<Vec<f64>> {
        let amp = self.amplitude(backend, mesh, t)?;
        let m = self.mode as f64;
        Ok(mesh.interpolate(|x| amp * (m * PI * x[0]).sin()))
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub alpha: f64,
    pub kappa: f64,
    pub rhs: SemilinearRhs,
    pub u0: PointFn,
    pub final_time: f64,
    pub dim: usize,
    pub exact: Option<LinearModeOracle>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("kappa", &self.kappa)
            .field("final_time", &self.final_time)
            .field("dim", &self.dim)
            .field("exact", &self.exact)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        self.alpha = alpha;
        if let Some(oracle) = self.exact.as_mut() {
            oracle.alpha = alpha;
        }
        Ok(self)
    }

    /// True when `f ≡ 0`.
    pub fn is_linear(&self) -> bool {
        self.rhs.constant_slope() == Some(0.0)
    }

    pub fn initial_value(&self, x: &[f64]) -> f64 {
        (self.u0)(x)
    }

    pub fn initial_nodal(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.interpolate(|x| (self.u0)(x))
    }

    /// Largest `|u_0|` over the boundary vertices of `mesh`.
    pub fn boundary_defect(&self, mesh: &Mesh) -> f64 {
        mesh.boundary_nodes()
            .iter()
            .map(|p| (self.u0)(&p[..self.dim]).abs())
            .fold(0.0, f64::max)
    }

    pub fn default_backend(&self) -> Backend {
        if self.dim == 2 {
            Backend::Fem2d
        } else {
            Backend::Fd1d
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::range("alpha", alpha, "fractional order must lie in (0, 1)"))
    }
}

fn allen_cahn_rhs() -> SemilinearRhs {
    SemilinearRhs::new(|u| 4.0 * (u - u * u * u), |u| 4.0 - 12.0 * u * u)
}

/// `κ = 1/10`, `f(u) = 4(u - u³)`, `u_0 = 4x(1-x)y(1-y)` on the unit square.
pub fn allen_cahn_2d() -> ProblemSpec {
    ProblemSpec {
        name: "allen-cahn-2d".into(),
        alpha: 0.5,
        kappa: 0.1,
        rhs: allen_cahn_rhs(),
        u0: Arc::new(|p| 4.0 * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1])),
        final_time: 1.0,
        dim: 2,
        exact: None,
    }
}

/// One-dimensional analogue of [`allen_cahn_2d`] with `u_0 = 4x(1-x)`.
pub fn allen_cahn_1d() -> ProblemSpec {
    ProblemSpec {
        name: "allen-cahn-1d".into(),
        alpha: 0.5,
        kappa: 0.1,
        rhs: allen_cahn_rhs(),
        u0: Arc::new(|p| 4.0 * p[0] * (1.0 - p[0])),
        final_time: 1.0,
        dim: 1,
        exact: None,
    }
}

/// `f ≡ 0`, `κ = 1`, `u_0 = sin(mπx)`, with an exact oracle.
pub fn linear_mode_1d(alpha: f64, m: usize) -> Result<ProblemSpec> {
    check_alpha(alpha)?;
    if m == 0 {
        return Err(Error::range("m", 0.0, "mode index must be at least 1"));
    }
    let freq = m as f64 * PI;
    Ok(ProblemSpec {
        name: "linear-mode-1d".into(),
        alpha,
        kappa: 1.0,
        rhs: SemilinearRhs::zero(),
        u0: Arc::new(move |p| (freq * p[0]).sin()),
        final_time: 1.0,
        dim: 1,
        exact: Some(LinearModeOracle {
            alpha,
            kappa: 1.0,
            mode: m,
        }),
    })
}

/// Looks up a problem by its CLI name; linear-mode problems use mode 1.
pub fn by_name(name: &str) -> Result<ProblemSpec> {
    match name {
        "allen-cahn-2d" => Ok(allen_cahn_2d()),
        "allen-cahn-1d" => Ok(allen_cahn_1d()),
        "linear-mode-1d" => linear_mode_1d(0.5, 1),
        other => Err(Error::Config(format!(
            "unknown problem `{other}` (expected one of {})",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allen_cahn_data() {
        let p = allen_cahn_2d();
        assert_eq!(p.initial_value(&[0.5, 0.5]), 0.25);
        assert_eq!(p.boundary_defect(&Mesh::new(2, 10).unwrap()), 0.0);
        assert_eq!(p.rhs.eval(1.0), 0.0);
        assert_eq!(p.rhs.derivative(1.0), -8.0);
        let samples: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
        assert!(p.rhs.derivative_mismatch(1e-6, &samples) <= 1e-6);

        let q = allen_cahn_1d();
        assert_eq!(q.initial_value(&[0.5]), 1.0);
        assert_eq!(q.boundary_defect(&Mesh::new(1, 7).unwrap()), 0.0);
        assert!(!q.is_linear());
    }

    #[test]
    fn linear_mode_oracle() {
        let p = linear_mode_1d(0.5, 1).unwrap();
        let mesh = Mesh::new(1, 64).unwrap();
        let oracle = p.exact.unwrap();
        let lam = oracle.eigenvalue(Backend::Fd1d, &mesh).unwrap();
        let want = 4.0 * 64.0 * 64.0 * (PI / 128.0).sin().powi(2);
        assert!((lam - want).abs() < 1e-12);
        assert!((lam - 9.8677).abs() < 1e-4);

        let at_zero = oracle.nodal(Backend::Fd1d, &mesh, 0.0).unwrap();
        for (a, b) in at_zero.iter().zip(p.initial_nodal(&mesh)) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(p.is_linear());
        assert!(p.boundary_defect(&mesh) < 1e-15);

        let toy = linear_mode_solution(0.5, 1.0, 1.0).unwrap();
        assert!((toy - 0.427583576).abs() < 1e-9);
    }

    #[test]
    fn lookup_and_alpha_override() {
        for name in PROBLEM_NAMES {
            assert_eq!(by_name(name).unwrap().name, name);
        }
        assert!(matches!(by_name("heat"), Err(Error::Config(_))));
        let p = by_name("linear-mode-1d").unwrap().with_alpha(0.3).unwrap();
        assert_eq!(p.exact.unwrap().alpha, 0.3);
        assert!(allen_cahn_1d().with_alpha(1.0).is_err());
        assert!(linear_mode_1d(0.5, 0).is_err());
        assert_eq!(allen_cahn_2d().default_backend(), Backend::Fem2d);
    }
}
