#![allow(dead_code)]

use star_isac::numerics::{c64, CMatrix, C64};
use star_isac::sdp::{AffineConstraint, ConicProblem, Sense};

pub struct ClosedForm {
    pub name: &'static str,
    pub problem: ConicProblem,
    pub optimum: f64,
}

fn mat2(a: f64, b: C64, c: f64) -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c64(a, 0.0), b, b.conj(), c64(c, 0.0)])
}

fn diag(d: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(d.len(), d.len());
    for (i, v) in d.iter().enumerate() {
        m[(i, i)] = c64(*v, 0.0);
    }
    m
}

fn unit(n: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(i, j)] = c64(1.0, 0.0);
    m
}

/// `Tr(M X) = Re X_ij` and `Tr(M X) = Im X_ij` selectors.
fn re_sel(n: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(i, j)] = c64(0.5, 0.0);
    m[(j, i)] = c64(0.5, 0.0);
    m
}

fn im_sel(n: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(i, j)] = c64(0.0, 0.5);
    m[(j, i)] = c64(0.0, -0.5);
    m
}

fn eig2(a: f64, b: C64, c: f64) -> (f64, f64) {
    let mid = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b.norm_sqr()).sqrt();
    (mid - rad, mid + rad)
}

fn trace_one(n: usize) -> AffineConstraint {
    AffineConstraint::new("trace", Sense::Eq, 1.0).block(0, CMatrix::identity(n, n))
}

/// Small SDPs with optima known in closed form.
pub fn closed_form_suite() -> Vec<ClosedForm> {
    let mut out = Vec::new();

    // min eigenvalue of a real diagonal matrix
    out.push(ClosedForm {
        name: "min_eig_diag3",
        problem: ConicProblem::new(vec![3], 0).maximize_block(0, -diag(&[3.0, 0.5, 2.0])).with(trace_one(3)),
        optimum: -0.5,
    });

    // min / max eigenvalue of a complex 2x2 Hermitian matrix
    let (a, b, c) = (2.0, c64(0.7, -1.1), -0.4);
    let (lo, hi) = eig2(a, b, c);
    out.push(ClosedForm {
        name: "min_eig_complex2",
        problem: ConicProblem::new(vec![2], 0).maximize_block(0, -mat2(a, b, c)).with(trace_one(2)),
        optimum: -lo,
    });
    out.push(ClosedForm {
        name: "max_eig_complex2",
        problem: ConicProblem::new(vec![2], 0).maximize_block(0, mat2(a, b, c)).with(trace_one(2)),
        optimum: hi,
    });

    // LP over a diagonal block: max c.x, sum x <= 2
    out.push(ClosedForm {
        name: "lp_diag_block",
        problem: ConicProblem::new(vec![3], 0)
            .maximize_block(0, diag(&[1.0, 4.0, 2.5]))
            .with(AffineConstraint::new("budget", Sense::Le, 2.0).block(0, CMatrix::identity(3, 3))),
        optimum: 8.0,
    });

    // scalar LP: max x + y, x + 2y <= 4, 3x + y <= 6, x, y >= 0 -> (1.6, 1.2)
    out.push(ClosedForm {
        name: "lp_scalars",
        problem: ConicProblem::new(vec![], 2)
            .maximize_scalar(0, 1.0)
            .maximize_scalar(1, 1.0)
            .with(AffineConstraint::new("c1", Sense::Le, 4.0).scalar(0, 1.0).scalar(1, 2.0))
            .with(AffineConstraint::new("c2", Sense::Le, 6.0).scalar(0, 3.0).scalar(1, 1.0))
            .with(AffineConstraint::new("x", Sense::Ge, 0.0).scalar(0, 1.0))
            .with(AffineConstraint::new("y", Sense::Ge, 0.0).scalar(1, 1.0)),
        optimum: 2.8,
    });

    // unit-diagonal problem with the all-ones cost: optimum n^2 at X = 11^T
    let n = 3;
    let ones = CMatrix::from_element(n, n, c64(1.0, 0.0));
    let mut p = ConicProblem::new(vec![n], 0).maximize_block(0, ones);
    for i in 0..n {
        p.push(AffineConstraint::new(format!("d{i}"), Sense::Eq, 1.0).block(0, unit(n, i, i)));
    }
    out.push(ClosedForm { name: "unit_diag_ones", problem: p, optimum: 9.0 });

    // max Re X_12 with X_11 = 1, X_22 = 4 -> sqrt(1*4)
    out.push(ClosedForm {
        name: "offdiag_bound",
        problem: ConicProblem::new(vec![2], 0)
            .maximize_block(0, re_sel(2, 0, 1))
            .with(AffineConstraint::new("d0", Sense::Eq, 1.0).block(0, unit(2, 0, 0)))
            .with(AffineConstraint::new("d1", Sense::Eq, 4.0).block(0, unit(2, 1, 1))),
        optimum: 2.0,
    });

    // complex phase in the cost: max Re(e^{-i th} X_12) with unit diagonal -> 1
    let th: f64 = 0.9;
    let cost = re_sel(2, 0, 1) * c64(th.cos(), 0.0) + im_sel(2, 0, 1) * c64(th.sin(), 0.0);
    out.push(ClosedForm {
        name: "complex_phase_offdiag",
        problem: ConicProblem::new(vec![2], 0)
            .maximize_block(0, cost)
            .with(AffineConstraint::new("d0", Sense::Eq, 1.0).block(0, unit(2, 0, 0)))
            .with(AffineConstraint::new("d1", Sense::Eq, 1.0).block(0, unit(2, 1, 1))),
        optimum: 1.0,
    });

    // LMI: max t s.t. A - tI = S >= 0 -> lambda_min(A)
    let (a, b, c) = (1.5, c64(-0.3, 0.8), 3.0);
    let (lo, _) = eig2(a, b, c);
    let am = mat2(a, b, c);
    let mut p = ConicProblem::new(vec![2], 1).maximize_scalar(0, 1.0);
    for i in 0..2 {
        p.push(AffineConstraint::new(format!("d{i}"), Sense::Eq, am[(i, i)].re).block(0, unit(2, i, i)).scalar(0, 1.0));
    }
    p.push(AffineConstraint::new("re01", Sense::Eq, am[(0, 1)].re).block(0, re_sel(2, 0, 1)));
    p.push(AffineConstraint::new("im01", Sense::Eq, am[(0, 1)].im).block(0, im_sel(2, 0, 1)));
    out.push(ClosedForm { name: "lmi_min_eig", problem: p, optimum: lo });

    // two blocks sharing a unit trace budget -> larger of the two top eigenvalues
    let c1 = mat2(1.0, c64(0.5, 0.5), 0.0);
    let c2 = diag(&[0.2, 1.9, -1.0]);
    let (_, hi1) = eig2(1.0, c64(0.5, 0.5), 0.0);
    out.push(ClosedForm {
        name: "two_block_budget",
        problem: ConicProblem::new(vec![2, 3], 0)
            .maximize_block(0, c1)
            .maximize_block(1, c2)
            .with(
                AffineConstraint::new("budget", Sense::Eq, 1.0)
                    .block(0, CMatrix::identity(2, 2))
                    .block(1, CMatrix::identity(3, 3)),
            ),
        optimum: hi1.max(1.9),
    });

    // min Tr X with X_12 = z fixed -> 2|z|
    let z = c64(0.6, -0.8);
    out.push(ClosedForm {
        name: "min_trace_fixed_offdiag",
        problem: ConicProblem::new(vec![2], 0)
            .maximize_block(0, -CMatrix::identity(2, 2))
            .with(AffineConstraint::new("re", Sense::Eq, z.re).block(0, re_sel(2, 0, 1)))
            .with(AffineConstraint::new("im", Sense::Eq, z.im).block(0, im_sel(2, 0, 1))),
        optimum: -2.0 * z.norm(),
    });

    // max-min: max R s.t. X_ii >= R, Tr X <= 1 -> 1/n
    let n = 3;
    let mut p = ConicProblem::new(vec![n], 1)
        .maximize_scalar(0, 1.0)
        .with(AffineConstraint::new("budget", Sense::Le, 1.0).block(0, CMatrix::identity(n, n)));
    for i in 0..n {
        p.push(AffineConstraint::new(format!("g{i}"), Sense::Ge, 0.0).block(0, unit(n, i, i)).scalar(0, -1.0));
    }
    out.push(ClosedForm { name: "max_min_diag", problem: p, optimum: 1.0 / 3.0 });

    // rank-one steering: max |a^H x|^2 over Tr X <= P -> P ||a||^2
    let a = [c64(1.0, 0.0), c64(0.0, 1.0), c64(-0.5, 0.5)];
    let av = star_isac::numerics::CVector::from_row_slice(&a);
    let aa = &av * av.adjoint();
    let norm2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    out.push(ClosedForm {
        name: "steering_power",
        problem: ConicProblem::new(vec![3], 0)
            .maximize_block(0, aa)
            .with(AffineConstraint::new("power", Sense::Le, 2.0).block(0, CMatrix::identity(3, 3))),
        optimum: 2.0 * norm2,
    });

    out
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

use rand::Rng;
use star_isac::metrics::BeamformerSet;
use star_isac::numerics::CVector;
use star_isac::scenario::{complex_gaussian, ChannelSet, StarCoefficients};

pub fn random_vector(n: usize, scale: f64, rng: &mut impl Rng) -> CVector {
    CVector::from_fn(n, |_, _| complex_gaussian(rng) * scale)
}

/// Unit-modulus steering, Gaussian channels, random energy split, random beams.
pub fn random_instance(n: usize, m: usize, k: usize, q: usize, rng: &mut impl Rng) -> (ChannelSet, StarCoefficients, BeamformerSet) {
    let g = CMatrix::from_fn(n, m, |_, _| complex_gaussian(rng));
    let h_users = (0..k).map(|_| random_vector(n, 1.0, rng)).collect();
    let a_targets = (0..q)
        .map(|_| CVector::from_fn(n, |_, _| C64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU)))
        .collect();
    let ch = ChannelSet { g, h_users, a_targets, user_positions: vec![[0.0; 3]; k] };
    let mut pr = CVector::zeros(n);
    let mut pt = CVector::zeros(n);
    for i in 0..n {
        let beta: f64 = rng.random();
        pr[i] = C64::from_polar(beta.sqrt(), rng.random::<f64>() * std::f64::consts::TAU);
        pt[i] = C64::from_polar((1.0 - beta).sqrt(), rng.random::<f64>() * std::f64::consts::TAU);
    }
    let star = StarCoefficients::new(pr, pt).unwrap();
    let w = (0..k).map(|_| random_vector(m, 0.5, rng)).collect();
    let d = (0..q).map(|_| random_vector(m, 0.5, rng)).collect();
    (ch, star, BeamformerSet::from_vectors(w, d))
}
