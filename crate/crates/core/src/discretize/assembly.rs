use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Spatial discretization backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Three-point finite differences on the unit interval, identity mass.
    Fd1d,
    /// P1 elements on the unit interval.
    Fem1d,
    /// P1 elements on right triangles of the unit square.
    Fem2d,
}

impl Backend {
    pub fn dim(self) -> usize {
        match self {
            Backend::Fd1d | Backend::Fem1d => 1,
            Backend::Fem2d => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Fd1d => "fd1d",
            Backend::Fem1d => "fem1d",
            Backend::Fem2d => "fem2d",
        }
    }

    /// Eigenvalue of the discrete operator `M⁻¹S` for the sampled mode
    /// `sin(mπx)` (1D backends only).
    pub fn sine_mode_eigenvalue(self, mesh: &Mesh, kappa: f64, m: usize) -> Result<f64> {
        if mesh.dim() != 1 || self.dim() != 1 {
            return Err(Error::Unsupported(format!(
                "sine-mode eigenvalues are only available in 1D (backend {self})"
            )));
        }
        let h = mesh.h();
        let theta = m as f64 * std::f64::consts::PI * h;
        Ok(match self {
            Backend::Fd1d => 4.0 * kappa / (h * h) * (0.5 * theta).sin().powi(2),
            // 6κ(1 - cos θ) / (h²(2 + cos θ)), with 1 - cos θ = 2 sin²(θ/2).
            _ => 12.0 * kappa * (0.5 * theta).sin().powi(2) / (h * h * (2.0 + theta.cos())),
        })
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd1d" => Ok(Backend::Fd1d),
            "fem1d" => Ok(Backend::Fem1d),
            "fem2d" => Ok(Backend::Fem2d),
            other => Err(Error::Config(format!(
                "unknown backend `{other}` (expected fd1d, fem1d or fem2d)"
            ))),
        }
    }
}

/// Mass and stiffness matrices over the interior nodes.
///
/// The semidiscrete problem reads `Mass·u' + Stiffness·u = Mass·f(u)` with the
/// Caputo derivative in place of `u'`; `Stiffness` already carries `κ`.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    kappa: f64,
}

impl OperatorPair {
    pub fn new(mass: CsrMatrix, stiffness: CsrMatrix, kappa: f64) -> Result<Self> {
        if mass.dim() != stiffness.dim() {
            return Err(Error::Precondition(format!(
                "mass is {0}x{0} but stiffness is {1}x{1}",
                mass.dim(),
                stiffness.dim()
            )));
        }
        if !(kappa > 0.0) {
            return Err(Error::range("kappa", kappa, "diffusion coefficient must be positive"));
        }
        Ok(Self {
            mass,
            stiffness,
            kappa,
        })
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 {
        Ok(())
    } else {
        Err(Error::range("kappa", kappa, "diffusion coefficient must be positive"))
    }
}

pub fn assemble(backend: Backend, mesh: &Mesh, kappa: f64) -> Result<OperatorPair> {
    if backend.dim() != mesh.dim() {
        return Err(Error::Config(format!(
            "backend {backend} needs a {}D mesh, got {}D",
            backend.dim(),
            mesh.dim()
        )));
    }
    match backend {
        Backend::Fd1d => assemble_fd(mesh, kappa),
        Backend::Fem1d | Backend::Fem2d => assemble_fem(mesh, kappa),
    }
}

/// `κ/h²·tridiag(-1, 2, -1)` with the identity as mass matrix.
pub fn assemble_fd(mesh: &Mesh, kappa: f64) -> Result<OperatorPair> {
    if mesh.dim() != 1 {
        return Err(Error::Unsupported(
            "finite differences are only provided in 1D".into(),
        ));
    }
    check_kappa(kappa)?;
    let n = mesh.num_interior();
    let h = mesh.h();
    let scale = kappa / (h * h);
    let mut t = Vec::with_capacity(3 * n);
    for i in 0..n {
        t.push((i, i, 2.0 * scale));
        if i + 1 < n {
            t.push((i, i + 1, -scale));
            t.push((i + 1, i, -scale));
        }
    }
    let stiffness = CsrMatrix::from_triplets(n, t)?.with_spd_hint(true);
    OperatorPair::new(CsrMatrix::identity(n), stiffness, kappa)
}

/// Consistent P1 mass and `κ`-scaled stiffness matrices.
pub fn assemble_fem(mesh: &Mesh, kappa: f64) -> Result<OperatorPair> {
    check_kappa(kappa)?;
    let n = mesh.num_interior();
    let m = mesh.subdivisions();
    let h = mesh.h();
    let mut mass = Vec::new();
    let mut stiff = Vec::new();
    let mut scatter = |nodes: &[Option<usize>], local_m: &[f64], local_k: &[f64]| {
        let q = nodes.len();
        for a in 0..q {
            let Some(ra) = nodes[a] else { continue };
            for b in 0..q {
                let Some(rb) = nodes[b] else { continue };
                mass.push((ra, rb, local_m[a * q + b]));
                stiff.push((ra, rb, kappa * local_k[a * q + b]));
            }
        }
    };
    match mesh.dim() {
        1 => {
            let local_m = [h / 3.0, h / 6.0, h / 6.0, h / 3.0];
            let local_k = [1.0 / h, -1.0 / h, -1.0 / h, 1.0 / h];
            for i in 0..m {
                let nodes = [mesh.node_index(i, 0), mesh.node_index(i + 1, 0)];
                scatter(&nodes, &local_m, &local_k);
            }
        }
        _ => {
            let area = 0.5 * h * h;
            let local_m: Vec<f64> = (0..9)
                .map(|e| if e % 4 == 0 { area / 6.0 } else { area / 12.0 })
                .collect();
            for j in 0..m {
                for i in 0..m {
                    for tri in [
                        [(i, j), (i + 1, j), (i + 1, j + 1)],
                        [(i, j), (i + 1, j + 1), (i, j + 1)],
                    ] {
                        let local_k = p1_stiffness(tri);
                        let nodes = tri.map(|(a, b)| mesh.node_index(a, b));
                        scatter(&nodes, &local_m, &local_k);
                    }
                }
            }
        }
    }
    let mass = CsrMatrix::from_triplets(n, mass)?.with_spd_hint(true);
    let stiffness = CsrMatrix::from_triplets(n, stiff)?.with_spd_hint(true);
    OperatorPair::new(mass, stiffness, kappa)
}

/// Element stiffness `∫ ∇φ_a·∇φ_b` of a P1 triangle. In 2D it is invariant
/// under scaling, so it is evaluated on integer vertex coordinates, which
/// keeps the result exact for these meshes.
fn p1_stiffness(tri: [(usize, usize); 3]) -> [f64; 9] {
    let p = tri.map(|(a, b)| [a as f64, b as f64]);
    let edge = |a: usize| {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        [p[c][0] - p[b][0], p[c][1] - p[b][1]]
    };
    let twice_area = ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
        - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
        .abs();
    let mut k = [0.0; 9];
    for a in 0..3 {
        for b in 0..3 {
            let (ea, eb) = (edge(a), edge(b));
            k[a * 3 + b] = (ea[0] * eb[0] + ea[1] * eb[1]) / (2.0 * twice_area);
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::solve_spd;
    use crate::discretize::SkylineCholesky;
    use std::f64::consts::PI;

    fn dense(a: &CsrMatrix) -> Vec<Vec<f64>> {
        (0..a.dim()).map(|r| (0..a.dim()).map(|c| a.get(r, c)).collect()).collect()
    }

    #[test]
    fn fem_1d_two_elements() {
        let ops = assemble_fem(&Mesh::new(1, 2).unwrap(), 1.0).unwrap();
        assert_eq!(dense(ops.stiffness()), vec![vec![4.0]]);
        assert!((ops.mass().get(0, 0) - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn fem_1d_matches_direct_integration() {
        // Direct oracle: hat functions on a uniform grid, ∫φ_i'φ_j' and ∫φ_iφ_j
        // by 4-point Gauss quadrature on each element.
        let mesh = Mesh::new(1, 4).unwrap();
        let ops = assemble_fem(&mesh, 1.0).unwrap();
        let h = mesh.h();
        let hat = |i: usize, x: f64| (1.0 - ((x - (i + 1) as f64 * h) / h).abs()).max(0.0);
        let dhat = |i: usize, x: f64| {
            let xi = (i + 1) as f64 * h;
            if x > xi - h && x < xi {
                1.0 / h
            } else if x > xi && x < xi + h {
                -1.0 / h
            } else {
                0.0
            }
        };
        let gp = [
            (-0.8611363115940526, 0.3478548451374538),
            (-0.3399810435848563, 0.6521451548625461),
            (0.3399810435848563, 0.6521451548625461),
            (0.8611363115940526, 0.3478548451374538),
        ];
        for i in 0..3 {
            for j in 0..3 {
                let (mut k, mut m) = (0.0, 0.0);
                for e in 0..4 {
                    let mid = (e as f64 + 0.5) * h;
                    for (g, w) in gp {
                        let x = mid + 0.5 * h * g;
                        k += 0.5 * h * w * dhat(i, x) * dhat(j, x);
                        m += 0.5 * h * w * hat(i, x) * hat(j, x);
                    }
                }
                assert!((ops.stiffness().get(i, j) - k).abs() < 1e-12);
                assert!((ops.mass().get(i, j) - m).abs() < 1e-14);
            }
        }
        assert_eq!(ops.stiffness().get(1, 0), -4.0);
        assert_eq!(ops.stiffness().get(1, 1), 8.0);
    }

    #[test]
    fn fem_2d_single_node() {
        let ops = assemble_fem(&Mesh::new(2, 2).unwrap(), 1.0).unwrap();
        assert_eq!(dense(ops.stiffness()), vec![vec![4.0]]);
        let ops = assemble_fem(&Mesh::new(2, 2).unwrap(), 0.1).unwrap();
        assert!((ops.stiffness().get(0, 0) - 0.4).abs() < 1e-16);
    }

    #[test]
    fn fem_2d_five_point_pattern() {
        let mesh = Mesh::new(2, 6).unwrap();
        let ops = assemble_fem(&mesh, 1.0).unwrap();
        let c = mesh.node_index(3, 3).unwrap();
        assert_eq!(ops.stiffness().get(c, c), 4.0);
        assert_eq!(ops.stiffness().get(c, mesh.node_index(4, 3).unwrap()), -1.0);
        assert_eq!(ops.stiffness().get(c, mesh.node_index(4, 4).unwrap()), 0.0);
        let row_sum: f64 = ops.mass().row(c).map(|(_, v)| v).sum();
        assert!((row_sum - mesh.h().powi(2)).abs() < 1e-15);
    }

    #[test]
    fn mass_row_sums_on_interior_patches() {
        let mesh = Mesh::new(1, 8).unwrap();
        let ops = assemble_fem(&mesh, 1.0).unwrap();
        for r in 1..6 {
            let s: f64 = ops.mass().row(r).map(|(_, v)| v).sum();
            assert!((s - mesh.h()).abs() < 1e-15);
        }
    }

    #[test]
    fn matrices_are_symmetric_m_matrices_and_definite() {
        for (backend, dim) in [(Backend::Fd1d, 1), (Backend::Fem1d, 1), (Backend::Fem2d, 2)] {
            let mesh = Mesh::new(dim, 9).unwrap();
            let ops = assemble(backend, &mesh, 0.3).unwrap();
            for a in [ops.mass(), ops.stiffness()] {
                assert!(a.is_symmetric(1e-13));
                assert!(SkylineCholesky::factor(a).is_ok());
            }
            let s = ops.stiffness();
            for r in 0..s.dim() {
                assert!(s.row(r).all(|(c, v)| c == r || v <= 0.0));
            }
        }
    }

    #[test]
    fn fd_examples() {
        let ops = assemble_fd(&Mesh::new(1, 4).unwrap(), 1.0).unwrap();
        assert_eq!(ops.stiffness().get(1, 1), 32.0);
        assert_eq!(ops.stiffness().get(1, 2), -16.0);
        assert!(ops.mass().is_diagonal());
        let ops = assemble_fd(&Mesh::new(1, 2).unwrap(), 2.5).unwrap();
        assert_eq!(dense(ops.stiffness()), vec![vec![20.0]]);
        assert!(matches!(
            assemble_fd(&Mesh::new(2, 4).unwrap(), 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn fd_is_exact_on_quadratics() {
        for (m, kappa) in [(8, 1.0), (13, 0.25)] {
            let mesh = Mesh::new(1, m).unwrap();
            let ops = assemble_fd(&mesh, kappa).unwrap();
            let u = solve_spd(ops.stiffness(), &vec![1.0; mesh.num_interior()]).unwrap();
            for (r, ur) in u.iter().enumerate() {
                let x = mesh.coords(r)[0];
                assert!((ur - x * (1.0 - x) / (2.0 * kappa)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn smallest_fd_eigenvalue_tends_to_pi_squared() {
        let mesh = Mesh::new(1, 64).unwrap();
        let lam = Backend::Fd1d.sine_mode_eigenvalue(&mesh, 1.0, 1).unwrap();
        assert!((lam - PI * PI).abs() / (PI * PI) < 0.01);
        // the sampled sine really is an eigenvector
        let ops = assemble_fd(&mesh, 1.0).unwrap();
        let v = mesh.interpolate(|x| (PI * x[0]).sin());
        let sv = ops.stiffness().mul_vec(&v);
        for (a, b) in sv.iter().zip(&v) {
            assert!((a - lam * b).abs() < 1e-11);
        }
    }

    #[test]
    fn fem_sine_eigenvalue_is_exact() {
        let mesh = Mesh::new(1, 20).unwrap();
        let ops = assemble_fem(&mesh, 0.7).unwrap();
        for m in [1, 3] {
            let lam = Backend::Fem1d.sine_mode_eigenvalue(&mesh, 0.7, m).unwrap();
            let v = mesh.interpolate(|x| (m as f64 * PI * x[0]).sin());
            let sv = ops.stiffness().mul_vec(&v);
            let mv = ops.mass().mul_vec(&v);
            for (a, b) in sv.iter().zip(&mv) {
                assert!((a - lam * b).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn galerkin_consistency_is_second_order() {
        let defect = |m: usize| {
            let mesh = Mesh::new(1, m).unwrap();
            let ops = assemble_fem(&mesh, 1.0).unwrap();
            let v = mesh.interpolate(|x| (PI * x[0]).sin());
            let sv = ops.stiffness().mul_vec(&v);
            let mv = ops.mass().mul_vec(&v);
            // scale by 1/h to compare pointwise quantities
            sv.iter()
                .zip(&mv)
                .map(|(a, b)| (a - PI * PI * b).abs() / mesh.h())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (defect(16), defect(32));
        let rate = (coarse / fine).log2();
        assert!((rate - 2.0).abs() < 0.1, "rate {rate}");
    }
}
