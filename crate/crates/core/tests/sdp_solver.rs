mod common;

use common::{closed_form_suite, relative_error};
use proptest::prelude::*;
use star_isac::numerics::{c64, CMatrix};
use star_isac::sdp::{check_solution, solve, AffineConstraint, ConicProblem, Sense, SolveStatus};

#[test]
fn closed_form_optima() {
    let suite = closed_form_suite();
    assert!(suite.len() >= 10);
    for case in suite {
        let s = solve(&case.problem, 1e-9, 100).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal, "{}: {}", case.name, s.diagnostics);
        let err = relative_error(s.objective_value, case.optimum);
        assert!(err < 1e-6, "{}: got {} want {} (rel {err:e})", case.name, s.objective_value, case.optimum);
        let chk = check_solution(&case.problem, &s);
        assert!(chk.max_relative_violation < 1e-6, "{}: {:?}", case.name, chk.relative_violations);
        assert!(chk.psd_margins.iter().all(|m| *m > -1e-8), "{}", case.name);
    }
}

fn hermitian(n: usize, vals: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    let mut it = vals.iter().copied();
    for i in 0..n {
        m[(i, i)] = c64(it.next().unwrap(), 0.0);
        for j in (i + 1)..n {
            let z = c64(it.next().unwrap(), it.next().unwrap());
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    m
}

fn random_problem(n: usize, vals: &[f64], budget: f64) -> ConicProblem {
    // max Tr(C X) s.t. Tr X <= budget, X_00 >= 0.1 budget / n
    let c = hermitian(n, vals);
    let mut e00 = CMatrix::zeros(n, n);
    e00[(0, 0)] = c64(1.0, 0.0);
    ConicProblem::new(vec![n], 0)
        .maximize_block(0, c)
        .with(AffineConstraint::new("budget", Sense::Le, budget).block(0, CMatrix::identity(n, n)))
        .with(AffineConstraint::new("floor", Sense::Ge, 0.1 * budget / n as f64).block(0, e00))
}

fn instance() -> impl Strategy<Value = (usize, Vec<f64>, f64)> {
    (2usize..5).prop_flat_map(|n| (Just(n), prop::collection::vec(-2.0f64..2.0, n * n), 0.5f64..3.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn real_embedding_agrees((n, vals, budget) in instance()) {
        let tol = 1e-7;
        let p = random_problem(n, &vals, budget);
        let s = solve(&p, tol, 100).unwrap();
        let r = solve(&p.real_embedding(), tol, 100).unwrap();
        prop_assert_eq!(s.status, SolveStatus::Optimal);
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        let scale = 1.0 + s.objective_value.abs();
        prop_assert!((s.objective_value - r.objective_value).abs() <= 10.0 * tol * scale,
            "complex {} real {}", s.objective_value, r.objective_value);
        let back = r.from_real_embedding();
        prop_assert!((p.objective_value(&back.block_values.iter().map(|b| b.as_matrix().clone()).collect::<Vec<_>>(), &[]) - s.objective_value).abs() <= 10.0 * tol * scale);
    }

    #[test]
    fn objective_scaling_covariance((n, vals, budget) in instance(), k in 0.1f64..10.0) {
        let tol = 1e-8;
        let p = random_problem(n, &vals, budget);
        let scaled = random_problem(n, &vals.iter().map(|v| v * k).collect::<Vec<_>>(), budget);
        let a = solve(&p, tol, 100).unwrap();
        let b = solve(&scaled, tol, 100).unwrap();
        prop_assert!((b.objective_value - k * a.objective_value).abs() <= 1e-6 * (1.0 + k * a.objective_value.abs()));
    }

    #[test]
    fn independent_check_confirms((n, vals, budget) in instance()) {
        let p = random_problem(n, &vals, budget);
        let s = solve(&p, 1e-8, 100).unwrap();
        let chk = check_solution(&p, &s);
        prop_assert!(chk.max_relative_violation < 1e-6);
        prop_assert!(chk.psd_margins.iter().all(|m| *m > -1e-7));
        prop_assert!(chk.dual_psd_margins.iter().all(|m| *m > -1e-6 * (1.0 + s.objective_value.abs())));
        prop_assert!(chk.relative_gap < 1e-6);
    }
}
