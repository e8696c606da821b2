use fracstep::bench::observed_order;
use fracstep::discretize::{assemble, assemble_fd, Backend, CsrMatrix, Mesh, OperatorPair};
use fracstep::problems::{allen_cahn_1d, linear_mode_1d};
use fracstep::special::linear_mode_solution;
use fracstep::stepper::{run, SemilinearRhs, StepperConfig};
use proptest::prelude::*;

fn scalar_ops(lam: f64) -> OperatorPair {
    let stiff = CsrMatrix::from_triplets(1, vec![(0, 0, lam)]).unwrap();
    OperatorPair::new(CsrMatrix::identity(1), stiff, 1.0).unwrap()
}

fn scalar_error(k: usize, steps: usize, corrected: bool) -> f64 {
    let cfg = StepperConfig::new(k, 0.5, steps, 1.0).unwrap().with_correction(corrected);
    let traj = run(&cfg, &scalar_ops(1.0), &SemilinearRhs::zero(), &[1.0], &[]).unwrap();
    (traj.final_state()[0] - linear_mode_solution(0.5, 1.0, 1.0).unwrap()).abs()
}

#[test]
fn scalar_mode_halving_ratios() {
    let corrected = scalar_error(2, 64, true) / scalar_error(2, 128, true);
    assert!((corrected - 4.0).abs() < 0.4, "corrected ratio {corrected}");
    let plain = scalar_error(2, 64, false) / scalar_error(2, 128, false);
    assert!((plain - 2.0).abs() < 0.2, "uncorrected ratio {plain}");
}

#[test]
fn linear_order_matches_k_over_three_halvings() {
    let problem = linear_mode_1d(0.5, 1).unwrap();
    let mesh = Mesh::new(1, 64).unwrap();
    let ops = assemble(Backend::Fd1d, &mesh, problem.kappa).unwrap();
    let exact = problem.exact.unwrap().nodal(Backend::Fd1d, &mesh, 1.0).unwrap();
    let u0 = problem.initial_nodal(&mesh);
    for k in 1..=4 {
        let errors: Vec<f64> = [40, 80, 160, 320]
            .iter()
            .map(|&n| {
                let cfg = StepperConfig::new(k, 0.5, n, 1.0).unwrap();
                let u = run(&cfg, &ops, &problem.rhs, &u0, &[]).unwrap();
                u.final_state().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect();
        let rates = observed_order(&errors).unwrap();
        for r in &rates {
            assert!((r - k as f64).abs() <= 0.15, "k={k}: rates {rates:?}");
        }
        assert!(errors.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn fem_and_fd_errors_are_purely_temporal() {
    // the oracle uses the eigenvalue of each operator, so the PDE error
    // equals the error of the scalar recursion with that eigenvalue
    let problem = linear_mode_1d(0.7, 2).unwrap();
    for backend in [Backend::Fd1d, Backend::Fem1d] {
        for m in [16, 48] {
            let mesh = Mesh::new(1, m).unwrap();
            let ops = assemble(backend, &mesh, 1.0).unwrap();
            let oracle = problem.exact.unwrap();
            let lam = oracle.eigenvalue(backend, &mesh).unwrap();
            let cfg = StepperConfig::new(3, 0.7, 30, 1.0).unwrap();
            let pde = run(&cfg, &ops, &problem.rhs, &problem.initial_nodal(&mesh), &[]).unwrap();
            let exact = oracle.nodal(backend, &mesh, 1.0).unwrap();
            let pde_err = pde.final_state().iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scalar = run(&cfg, &scalar_ops(lam), &SemilinearRhs::zero(), &[1.0], &[]).unwrap();
            let amp = oracle.amplitude(backend, &mesh, 1.0).unwrap();
            let peak = problem.initial_nodal(&mesh).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let scalar_err = (scalar.final_state()[0] - amp).abs() * peak;
            assert!((pde_err - scalar_err).abs() < 1e-12, "{backend} M={m}: {pde_err} vs {scalar_err}");
        }
    }
}

#[test]
fn newton_iterations_stay_small_at_acceptance_scale() {
    let problem = allen_cahn_1d().with_alpha(0.3).unwrap();
    let mesh = Mesh::new(1, 200).unwrap();
    let ops = assemble_fd(&mesh, problem.kappa).unwrap();
    for k in [2, 6] {
        let cfg = StepperConfig::new(k, 0.3, 50, 1.0).unwrap();
        let traj = run(&cfg, &ops, &problem.rhs, &problem.initial_nodal(&mesh), &[]).unwrap();
        assert!(traj.max_newton_iters() <= 6, "k={k}: {}", traj.max_newton_iters());
        assert!(traj.final_state().iter().all(|v| v.abs() <= 1.01));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn linear_runs_superpose(c1 in -3.0f64..3.0, c2 in -3.0f64..3.0, k in 1usize..=6, alpha in 0.1f64..0.95) {
        let mesh = Mesh::new(1, 12).unwrap();
        let ops = assemble_fd(&mesh, 0.5).unwrap();
        let zero = SemilinearRhs::zero();
        let cfg = StepperConfig::new(k, alpha, 15, 1.0).unwrap();
        let a = mesh.interpolate(|x| x[0] * (1.0 - x[0]));
        let b = mesh.interpolate(|x| (5.0 * x[0]).sin() * x[0] * (1.0 - x[0]));
        let mixed: Vec<f64> = a.iter().zip(&b).map(|(x, y)| c1 * x + c2 * y).collect();
        let ua = run(&cfg, &ops, &zero, &a, &[]).unwrap();
        let ub = run(&cfg, &ops, &zero, &b, &[]).unwrap();
        let um = run(&cfg, &ops, &zero, &mixed, &[]).unwrap();
        for (m, (x, y)) in um.final_state().iter().zip(ua.final_state().iter().zip(ub.final_state())) {
            prop_assert!((m - (c1 * x + c2 * y)).abs() <= 1e-11);
        }
    }

    #[test]
    fn constant_slope_matches_general_newton(slope in -2.0f64..2.0, k in 1usize..=4) {
        let mesh = Mesh::new(1, 10).unwrap();
        let ops = assemble_fd(&mesh, 0.2).unwrap();
        let u0 = mesh.interpolate(|x| 4.0 * x[0] * (1.0 - x[0]));
        let cfg = StepperConfig::new(k, 0.6, 20, 1.0).unwrap();
        let frozen = run(&cfg, &ops, &SemilinearRhs::linear(slope), &u0, &[]).unwrap();
        let general = run(&cfg, &ops, &SemilinearRhs::new(move |u| slope * u, move |_| slope), &u0, &[]).unwrap();
        for (a, b) in frozen.final_state().iter().zip(general.final_state()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
