//! Block semidefinite programs over complex Hermitian matrices and an
//! embedded primal-dual interior-point solver.
//!
//! A [`ConicProblem`] maximizes a linear functional of some Hermitian PSD
//! blocks and free real scalars subject to affine `=`, `<=`, `>=`
//! constraints. Internally the problem is equilibrated, inequalities get
//! nonnegative slacks, and the resulting standard-form program
//!
//! ```text
//!   min  <C, X> + c_f' x_f      s.t.  A(X) + A_f x_f = b,   X in K
//! ```
//!
//! is solved with an infeasible-start Mehrotra predictor-corrector using the
//! HKM search direction. Free scalars enter the Newton system through a
//! saddle-point block `[[M, A_f], [A_f', 0]]` instead of being split.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{
    c64, frobenius, from_real_embedding, herm_part, hermitian_deviation, hermitian_eig, re_trace_product,
    real_embedding, CMatrix, HermitianMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Eq,
    Le,
    Ge,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Eq => "=",
            Sense::Le => "<=",
            Sense::Ge => ">=",
        }
    }
}

/// `sum_j Re Tr(A_j X_j) + sum_s a_s x_s  (sense)  rhs`.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub label: String,
    pub block_terms: Vec<(usize, CMatrix)>,
    pub scalar_terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl AffineConstraint {
    pub fn new(label: impl Into<String>, sense: Sense, rhs: f64) -> Self {
        Self {
            label: label.into(),
            block_terms: Vec::new(),
            scalar_terms: Vec::new(),
            sense,
            rhs,
        }
    }

    pub fn block(mut self, block: usize, coeff: CMatrix) -> Self {
        self.block_terms.push((block, coeff));
        self
    }

    pub fn scalar(mut self, index: usize, coeff: f64) -> Self {
        self.scalar_terms.push((index, coeff));
        self
    }

    /// Left-hand side value and the sum of absolute term magnitudes.
    fn evaluate(&self, blocks: &[CMatrix], scalars: &[f64]) -> (f64, f64) {
        let mut lhs = 0.0;
        let mut mag = 0.0;
        for (j, a) in &self.block_terms {
            let v = re_trace_product(a, &blocks[*j]);
            lhs += v;
            mag += v.abs();
        }
        for (s, a) in &self.scalar_terms {
            let v = a * scalars[*s];
            lhs += v;
            mag += v.abs();
        }
        (lhs, mag)
    }

    /// Nonnegative violation of the constraint at the given point.
    fn violation(&self, lhs: f64) -> f64 {
        match self.sense {
            Sense::Eq => (lhs - self.rhs).abs(),
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
        }
    }
}

/// Linear functional to maximize.
#[derive(Debug, Clone, Default)]
pub struct LinearObjective {
    pub block_terms: Vec<(usize, CMatrix)>,
    pub scalar_terms: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub blocks: Vec<usize>,
    pub free_scalars: usize,
    pub objective: LinearObjective,
    pub constraints: Vec<AffineConstraint>,
}

impl ConicProblem {
    pub fn new(blocks: Vec<usize>, free_scalars: usize) -> Self {
        Self {
            blocks,
            free_scalars,
            objective: LinearObjective::default(),
            constraints: Vec::new(),
        }
    }

    pub fn maximize_scalar(mut self, index: usize, coeff: f64) -> Self {
        self.objective.scalar_terms.push((index, coeff));
        self
    }

    pub fn maximize_block(mut self, block: usize, coeff: CMatrix) -> Self {
        self.objective.block_terms.push((block, coeff));
        self
    }

    pub fn push(&mut self, c: AffineConstraint) {
        self.constraints.push(c);
    }

    pub fn with(mut self, c: AffineConstraint) -> Self {
        self.constraints.push(c);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.iter().any(|&n| n == 0) {
            return Err(Error::invalid("PSD blocks must have positive dimension"));
        }
        let check_terms = |what: &str, bt: &[(usize, CMatrix)], st: &[(usize, f64)]| -> Result<()> {
            for (j, a) in bt {
                let n = *self
                    .blocks
                    .get(*j)
                    .ok_or_else(|| Error::invalid(format!("{what}: block index {j} out of range")))?;
                if a.shape() != (n, n) {
                    return Err(Error::invalid(format!("{what}: coefficient for block {j} has shape {:?}, expected {n}x{n}", a.shape())));
                }
                if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::invalid(format!("{what}: non-finite coefficient in block {j}")));
                }
                let scale = 1.0 + frobenius(a);
                if hermitian_deviation(a) > 1e-9 * scale {
                    return Err(Error::invalid(format!("{what}: coefficient for block {j} is not Hermitian")));
                }
            }
            for (s, a) in st {
                if *s >= self.free_scalars {
                    return Err(Error::invalid(format!("{what}: scalar index {s} out of range")));
                }
                if !a.is_finite() {
                    return Err(Error::invalid(format!("{what}: non-finite scalar coefficient")));
                }
            }
            Ok(())
        };
        check_terms("objective", &self.objective.block_terms, &self.objective.scalar_terms)?;
        for c in &self.constraints {
            check_terms(&c.label, &c.block_terms, &c.scalar_terms)?;
            if !c.rhs.is_finite() {
                return Err(Error::invalid(format!("{}: non-finite right-hand side", c.label)));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, blocks: &[CMatrix], scalars: &[f64]) -> f64 {
        let mut v = 0.0;
        for (j, a) in &self.objective.block_terms {
            v += re_trace_product(a, &blocks[*j]);
        }
        for (s, a) in &self.objective.scalar_terms {
            v += a * scalars[*s];
        }
        v
    }

    /// Same problem over real symmetric `2n x 2n` blocks via
    /// `A -> [[Re A, -Im A], [Im A, Re A]] / 2`.
    pub fn real_embedding(&self) -> ConicProblem {
        let embed = |terms: &[(usize, CMatrix)]| -> Vec<(usize, CMatrix)> {
            terms.iter().map(|(j, a)| (*j, real_embedding(a) * c64(0.5, 0.0))).collect()
        };
        ConicProblem {
            blocks: self.blocks.iter().map(|n| 2 * n).collect(),
            free_scalars: self.free_scalars,
            objective: LinearObjective {
                block_terms: embed(&self.objective.block_terms),
                scalar_terms: self.objective.scalar_terms.clone(),
            },
            constraints: self
                .constraints
                .iter()
                .map(|c| AffineConstraint {
                    label: c.label.clone(),
                    block_terms: embed(&c.block_terms),
                    scalar_terms: c.scalar_terms.clone(),
                    sense: c.sense,
                    rhs: c.rhs,
                })
                .collect(),
        }
    }

    /// Plain-text dump for offline inspection.
    ///
    /// Layout, one item per line:
    /// `blocks <n_1> ... <n_B>`, `scalars <count>`, `constraints <count>`,
    /// then the objective and each constraint as a header line
    /// (`objective` / `constraint <label> <sense> <rhs>`) followed by
    /// `scalar <index> <coeff>` lines and, per block term, a `block <index>`
    /// line with `n` rows of `re,im` pairs separated by spaces. Numbers use
    /// Rust's shortest round-trip formatting.
    pub fn write_debug_dump(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = write!(s, "blocks");
        for n in &self.blocks {
            let _ = write!(s, " {n}");
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "scalars {}", self.free_scalars);
        let _ = writeln!(s, "constraints {}", self.constraints.len());
        let dump_terms = |s: &mut String, bt: &[(usize, CMatrix)], st: &[(usize, f64)]| {
            for (i, a) in st {
                let _ = writeln!(s, "scalar {i} {a:?}");
            }
            for (j, a) in bt {
                let _ = writeln!(s, "block {j}");
                for r in 0..a.nrows() {
                    let row: Vec<String> = (0..a.ncols()).map(|c| format!("{:?},{:?}", a[(r, c)].re, a[(r, c)].im)).collect();
                    let _ = writeln!(s, "{}", row.join(" "));
                }
            }
        };
        let _ = writeln!(s, "objective");
        dump_terms(&mut s, &self.objective.block_terms, &self.objective.scalar_terms);
        for c in &self.constraints {
            let label = c.label.replace(char::is_whitespace, "_");
            let _ = writeln!(s, "constraint {label} {} {:?}", c.sense.symbol(), c.rhs);
            dump_terms(&mut s, &c.block_terms, &c.scalar_terms);
        }
        out.write_all(s.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub block_values: Vec<HermitianMatrix>,
    pub scalar_values: Vec<f64>,
    pub objective_value: f64,
    pub status: SolveStatus,
    /// Relative duality gap `|p - d| / (1 + |p| + |d|)`.
    pub duality_gap: f64,
    /// Largest relative constraint violation.
    pub max_residual: f64,
    /// Multipliers of the original constraints: `>= 0` for `<=`, `<= 0` for `>=`.
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub diagnostics: String,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Undo [`ConicProblem::real_embedding`] on a solution of the embedded problem.
    pub fn from_real_embedding(self) -> ConicSolution {
        ConicSolution {
            block_values: self
                .block_values
                .iter()
                .map(|b| HermitianMatrix::from_herm_part(&from_real_embedding(b.as_matrix())))
                .collect(),
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 100 }
    }
}

/// Anything that can solve a [`ConicProblem`].
pub trait ConicSolver {
    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution>;
}

/// The embedded interior-point method.
#[derive(Debug, Clone, Copy, Default)]
pub struct InteriorPoint {
    pub options: SolverOptions,
}

impl InteriorPoint {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        Self {
            options: SolverOptions { tol, max_iters },
        }
    }
}

impl ConicSolver for InteriorPoint {
    fn solve(&self, problem: &ConicProblem) -> Result<ConicSolution> {
        solve(problem, self.options.tol, self.options.max_iters)
    }
}

/// Independent residual audit of a solution, computed from the raw problem data.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionCheck {
    /// Absolute violation per constraint.
    pub violations: Vec<f64>,
    /// Violation relative to the constraint's magnitude.
    pub relative_violations: Vec<f64>,
    pub max_relative_violation: f64,
    /// Smallest eigenvalue of each block.
    pub psd_margins: Vec<f64>,
    pub objective: f64,
    pub objective_mismatch: f64,
    /// `sum rhs_i * lambda_i`.
    pub dual_objective: f64,
    pub relative_gap: f64,
    /// Smallest eigenvalue of each dual slack block `sum lambda_i A_ij - C_j`.
    pub dual_psd_margins: Vec<f64>,
    /// Stationarity residual for the free scalars.
    pub dual_scalar_residual: f64,
}

pub fn check_solution(p: &ConicProblem, s: &ConicSolution) -> SolutionCheck {
    let blocks: Vec<CMatrix> = s.block_values.iter().map(|b| b.as_matrix().clone()).collect();
    let mut violations = Vec::with_capacity(p.constraints.len());
    let mut relative = Vec::with_capacity(p.constraints.len());
    for c in &p.constraints {
        let (lhs, mag) = c.evaluate(&blocks, &s.scalar_values);
        let v = c.violation(lhs);
        violations.push(v);
        relative.push(v / (mag + c.rhs.abs()).max(f64::MIN_POSITIVE));
    }
    let psd_margins = s.block_values.iter().map(|b| b.min_eigenvalue()).collect();
    let objective = p.objective_value(&blocks, &s.scalar_values);

    let duals_ok = s.duals.len() == p.constraints.len();
    let mut dual_objective = f64::NAN;
    let mut dual_psd_margins = Vec::new();
    let mut dual_scalar_residual = f64::NAN;
    if duals_ok {
        dual_objective = p.constraints.iter().zip(&s.duals).map(|(c, l)| c.rhs * l).sum();
        for (j, &n) in p.blocks.iter().enumerate() {
            let mut z = CMatrix::zeros(n, n);
            for (c, l) in p.constraints.iter().zip(&s.duals) {
                for (bj, a) in &c.block_terms {
                    if *bj == j {
                        z += a * c64(*l, 0.0);
                    }
                }
            }
            for (bj, a) in &p.objective.block_terms {
                if *bj == j {
                    z -= a;
                }
            }
            dual_psd_margins.push(HermitianMatrix::from_herm_part(&z).min_eigenvalue());
        }
        let mut res = vec![0.0; p.free_scalars];
        for (c, l) in p.constraints.iter().zip(&s.duals) {
            for (i, a) in &c.scalar_terms {
                res[*i] += a * l;
            }
        }
        for (i, a) in &p.objective.scalar_terms {
            res[*i] -= a;
        }
        dual_scalar_residual = res.iter().map(|r| r * r).sum::<f64>().sqrt();
    }
    let relative_gap = (objective - dual_objective).abs() / (1.0 + objective.abs() + dual_objective.abs());

    SolutionCheck {
        max_relative_violation: relative.iter().copied().fold(0.0, f64::max),
        violations,
        relative_violations: relative,
        psd_margins,
        objective,
        objective_mismatch: (objective - s.objective_value).abs(),
        dual_objective,
        relative_gap,
        dual_psd_margins,
        dual_scalar_residual,
    }
}

// ---------------------------------------------------------------------------
// standard form

struct StandardForm {
    m: usize,
    dims: Vec<usize>,
    c_blk: Vec<CMatrix>,
    /// `a_blk[j][i]`: coefficient of row `i` on block `j`.
    a_blk: Vec<Vec<Option<CMatrix>>>,
    c_lp: DVector<f64>,
    a_lp: DMatrix<f64>,
    c_free: DVector<f64>,
    a_free: DMatrix<f64>,
    b: DVector<f64>,
    // scaling bookkeeping
    row_scale: Vec<f64>,
    row_sign: Vec<f64>,
    block_scale: Vec<f64>,
    free_scale: Vec<f64>,
    obj_scale: f64,
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl StandardForm {
    fn build(p: &ConicProblem) -> Self {
        let m = p.constraints.len();
        let nb = p.blocks.len();
        let nf = p.free_scalars;
        let ineq_rows: Vec<usize> = (0..m).filter(|&i| p.constraints[i].sense != Sense::Eq).collect();
        let nl = ineq_rows.len();

        let row_sign: Vec<f64> = p
            .constraints
            .iter()
            .map(|c| if c.sense == Sense::Ge { -1.0 } else { 1.0 })
            .collect();

        // raw (sign-normalised, unscaled) data
        let mut a_blk: Vec<Vec<Option<CMatrix>>> = vec![vec![None; m]; nb];
        let mut a_free = DMatrix::<f64>::zeros(m, nf);
        let mut b = DVector::<f64>::zeros(m);
        for (i, c) in p.constraints.iter().enumerate() {
            let sg = row_sign[i];
            for (j, a) in &c.block_terms {
                let term = herm_part(a) * c64(sg, 0.0);
                a_blk[*j][i] = Some(match a_blk[*j][i].take() {
                    Some(prev) => prev + term,
                    None => term,
                });
            }
            for (s, a) in &c.scalar_terms {
                a_free[(i, *s)] += sg * a;
            }
            b[i] = sg * c.rhs;
        }
        let mut a_lp = DMatrix::<f64>::zeros(m, nl);
        for (l, &i) in ineq_rows.iter().enumerate() {
            a_lp[(i, l)] = 1.0;
        }
        let mut c_blk: Vec<CMatrix> = p.blocks.iter().map(|&n| CMatrix::zeros(n, n)).collect();
        for (j, a) in &p.objective.block_terms {
            c_blk[*j] -= herm_part(a);
        }
        let mut c_free = DVector::<f64>::zeros(nf);
        for (s, a) in &p.objective.scalar_terms {
            c_free[*s] -= a;
        }

        // Ruiz-style equilibration over rows, whole blocks and free columns.
        let mut row_scale = vec![1.0; m];
        let mut block_scale = vec![1.0; nb];
        let mut free_scale = vec![1.0; nf];
        let blk_norms: Vec<Vec<f64>> = a_blk
            .iter()
            .map(|rows| rows.iter().map(|a| a.as_ref().map_or(0.0, max_abs)).collect())
            .collect();
        for _ in 0..12 {
            let mut rn = vec![0.0f64; m];
            for i in 0..m {
                for j in 0..nb {
                    rn[i] = rn[i].max(blk_norms[j][i] * block_scale[j] * row_scale[i]);
                }
                for s in 0..nf {
                    rn[i] = rn[i].max(a_free[(i, s)].abs() * free_scale[s] * row_scale[i]);
                }
            }
            for i in 0..m {
                if rn[i] > 0.0 {
                    row_scale[i] /= rn[i].sqrt();
                }
            }
            for j in 0..nb {
                let cn = (0..m).map(|i| blk_norms[j][i] * block_scale[j] * row_scale[i]).fold(0.0, f64::max);
                if cn > 0.0 {
                    block_scale[j] /= cn.sqrt();
                }
            }
            for s in 0..nf {
                let cn = (0..m).map(|i| a_free[(i, s)].abs() * free_scale[s] * row_scale[i]).fold(0.0, f64::max);
                if cn > 0.0 {
                    free_scale[s] /= cn.sqrt();
                }
            }
        }

        for j in 0..nb {
            for i in 0..m {
                if let Some(a) = a_blk[j][i].as_mut() {
                    *a *= c64(row_scale[i] * block_scale[j], 0.0);
                }
            }
            c_blk[j] *= c64(block_scale[j], 0.0);
        }
        for i in 0..m {
            for s in 0..nf {
                a_free[(i, s)] *= row_scale[i] * free_scale[s];
            }
            b[i] *= row_scale[i];
        }
        for s in 0..nf {
            c_free[s] *= free_scale[s];
        }
        let c_norm = c_blk
            .iter()
            .map(|c| max_abs(c))
            .chain(c_free.iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        let obj_scale = if c_norm > 0.0 { 1.0 / c_norm } else { 1.0 };
        for c in &mut c_blk {
            *c *= c64(obj_scale, 0.0);
        }
        c_free *= obj_scale;

        Self {
            m,
            dims: p.blocks.clone(),
            c_blk,
            a_blk,
            c_lp: DVector::zeros(nl),
            a_lp,
            c_free,
            a_free,
            b,
            row_scale,
            row_sign,
            block_scale,
            free_scale,
            obj_scale,
        }
    }

    fn nl(&self) -> usize {
        self.c_lp.len()
    }

    fn nf(&self) -> usize {
        self.c_free.len()
    }

    /// `A(X) + A_l x_l + A_f x_f`.
    fn apply_a(&self, x: &[CMatrix], xl: &DVector<f64>, xf: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.a_lp * xl + &self.a_free * xf;
        for (j, xj) in x.iter().enumerate() {
            for (i, a) in self.a_blk[j].iter().enumerate() {
                if let Some(a) = a {
                    out[i] += re_trace_product(a, xj);
                }
            }
        }
        out
    }

    /// `sum_i y_i A_ij` for block `j`.
    fn adjoint_block(&self, j: usize, y: &DVector<f64>) -> CMatrix {
        let n = self.dims[j];
        let mut out = CMatrix::zeros(n, n);
        for (i, a) in self.a_blk[j].iter().enumerate() {
            if let Some(a) = a {
                if y[i] != 0.0 {
                    out += a * c64(y[i], 0.0);
                }
            }
        }
        out
    }
}

struct Iterate {
    x: Vec<CMatrix>,
    xl: DVector<f64>,
    xf: DVector<f64>,
    y: DVector<f64>,
    s: Vec<CMatrix>,
    sl: DVector<f64>,
}

struct Direction {
    dx: Vec<CMatrix>,
    dxl: DVector<f64>,
    dxf: DVector<f64>,
    dy: DVector<f64>,
    ds: Vec<CMatrix>,
    dsl: DVector<f64>,
}

fn chol_lower(m: &CMatrix) -> Option<CMatrix> {
    nalgebra::Cholesky::new(herm_part(m)).map(|c| c.l())
}

fn chol_inverse(m: &CMatrix) -> Option<CMatrix> {
    nalgebra::Cholesky::new(herm_part(m)).map(|c| herm_part(&c.inverse()))
}

/// Largest `alpha` with `X + alpha dX` PSD (infinite if `dX` does not decrease it).
fn max_psd_step(l: &CMatrix, dx: &CMatrix) -> f64 {
    let n = l.nrows();
    let linv = match l.clone().solve_lower_triangular(&CMatrix::identity(n, n)) {
        Some(li) => li,
        None => return 0.0,
    };
    let t = &linv * dx * linv.adjoint();
    let (vals, _) = hermitian_eig(&HermitianMatrix::from_herm_part(&t));
    let lo = vals.last().copied().unwrap_or(0.0);
    if lo < 0.0 {
        -1.0 / lo
    } else {
        f64::INFINITY
    }
}

fn max_lp_step(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn norm_blocks(blocks: &[CMatrix]) -> f64 {
    blocks.iter().map(|b| frobenius(b).powi(2)).sum::<f64>().sqrt()
}

struct StdOutcome {
    it: Iterate,
    status: SolveStatus,
    iterations: usize,
    pinf: f64,
    dinf: f64,
    gap: f64,
    note: String,
}

fn interior_point(sf: &StandardForm, opts: &SolverOptions) -> StdOutcome {
    let m = sf.m;
    let nb = sf.dims.len();
    let nl = sf.nl();
    let nf = sf.nf();
    let nu: f64 = sf.dims.iter().sum::<usize>() as f64 + nl as f64;

    let b_norm = sf.b.norm();
    let c_norm = (norm_blocks(&sf.c_blk).powi(2) + sf.c_free.norm_squared()).sqrt();

    // initial point
    let mut it = {
        let mut x = Vec::with_capacity(nb);
        let mut s = Vec::with_capacity(nb);
        for j in 0..nb {
            let n = sf.dims[j] as f64;
            let mut xi = 10f64.max(n.sqrt());
            let mut eta = 10f64.max(n.sqrt()).max(frobenius(&sf.c_blk[j]));
            for (i, a) in sf.a_blk[j].iter().enumerate() {
                if let Some(a) = a {
                    let an = frobenius(a);
                    xi = xi.max(n * (1.0 + sf.b[i].abs()) / (1.0 + an));
                    eta = eta.max(an);
                }
            }
            x.push(CMatrix::identity(sf.dims[j], sf.dims[j]) * c64(xi, 0.0));
            s.push(CMatrix::identity(sf.dims[j], sf.dims[j]) * c64(eta, 0.0));
        }
        let xi_l = 10f64.max((nl as f64).sqrt()).max(sf.b.amax() + 1.0);
        Iterate {
            x,
            xl: DVector::from_element(nl, xi_l),
            xf: DVector::zeros(nf),
            y: DVector::zeros(m),
            s,
            sl: DVector::from_element(nl, 10f64.max((nl as f64).sqrt())),
        }
    };

    let mut status = SolveStatus::NumericalFailure;
    let mut note = String::from("iteration limit reached");
    let (mut pinf, mut dinf, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut stalls = 0;

    for iter in 0..=opts.max_iters {
        iterations = iter;
        // residuals
        let ax = sf.apply_a(&it.x, &it.xl, &it.xf);
        let rp = &sf.b - ax;
        let rd: Vec<CMatrix> = (0..nb)
            .map(|j| &sf.c_blk[j] - sf.adjoint_block(j, &it.y) - &it.s[j])
            .collect();
        let rdl = &sf.c_lp - sf.a_lp.transpose() * &it.y - &it.sl;
        let rf = &sf.c_free - sf.a_free.transpose() * &it.y;

        let pobj: f64 = (0..nb).map(|j| re_trace_product(&sf.c_blk[j], &it.x[j])).sum::<f64>()
            + sf.c_lp.dot(&it.xl)
            + sf.c_free.dot(&it.xf);
        let dobj = sf.b.dot(&it.y);
        let compl: f64 = (0..nb).map(|j| re_trace_product(&it.x[j], &it.s[j])).sum::<f64>() + it.xl.dot(&it.sl);
        let mu = compl / nu.max(1.0);

        pinf = rp.norm() / (1.0 + b_norm);
        let dres = (norm_blocks(&rd).powi(2) + rdl.norm_squared() + rf.norm_squared()).sqrt();
        dinf = dres / (1.0 + c_norm);
        gap = (pobj - dobj).abs().max(compl) / (1.0 + pobj.abs() + dobj.abs());

        if !(pinf.is_finite() && dinf.is_finite() && gap.is_finite()) {
            note = "non-finite residuals".into();
            break;
        }
        if pinf <= opts.tol && dinf <= opts.tol && gap <= opts.tol {
            status = SolveStatus::Optimal;
            note.clear();
            break;
        }

        // infeasibility certificates
        if dobj > 0.0 {
            let dual_ray = ((norm_blocks(&(0..nb).map(|j| &sf.c_blk[j] - &rd[j]).collect::<Vec<_>>())).powi(2)
                + (&sf.c_lp - &rdl).norm_squared()
                + (&sf.c_free - &rf).norm_squared())
            .sqrt()
                / dobj;
            if dual_ray < 1e-8 && pinf > opts.tol {
                status = SolveStatus::Infeasible;
                note = format!("primal infeasibility certificate, ray residual {dual_ray:.2e}");
                break;
            }
        }
        if pobj < 0.0 {
            let ray = (&ax_zero_rhs(sf, &it)).norm() / (-pobj);
            if ray < 1e-8 && dinf > opts.tol {
                status = SolveStatus::Unbounded;
                note = format!("dual infeasibility certificate, ray residual {ray:.2e}");
                break;
            }
        }
        if iter == opts.max_iters {
            break;
        }

        // factorizations
        let mut sinv = Vec::with_capacity(nb);
        let mut lx = Vec::with_capacity(nb);
        let mut ok = true;
        for j in 0..nb {
            match (chol_inverse(&it.s[j]), chol_lower(&it.x[j])) {
                (Some(si), Some(l)) => {
                    sinv.push(si);
                    lx.push(l);
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        let ls: Vec<CMatrix> = if ok {
            it.s.iter().filter_map(chol_lower).collect()
        } else {
            Vec::new()
        };
        if !ok || ls.len() != nb || it.xl.iter().chain(it.sl.iter()).any(|v| *v <= 0.0) {
            note = "iterate left the cone interior".into();
            break;
        }

        // Schur complement
        let q_mats: Vec<Vec<Option<CMatrix>>> = (0..nb)
            .map(|j| {
                sf.a_blk[j]
                    .iter()
                    .map(|a| a.as_ref().map(|a| &it.x[j] * a * &sinv[j]))
                    .collect()
            })
            .collect();
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for j in 0..nb {
            let rows: Vec<usize> = (0..m).filter(|&i| sf.a_blk[j][i].is_some()).collect();
            for (ii, &i) in rows.iter().enumerate() {
                let ai = sf.a_blk[j][i].as_ref().unwrap();
                for &k in &rows[ii..] {
                    let qk = q_mats[j][k].as_ref().unwrap();
                    let v = re_trace_product(ai, qk);
                    schur[(i, k)] += v;
                    if k != i {
                        schur[(k, i)] += v;
                    }
                }
            }
        }
        let ratio = it.xl.component_div(&it.sl);
        if nl > 0 {
            let scaled = &sf.a_lp * DMatrix::from_diagonal(&ratio);
            schur += scaled * sf.a_lp.transpose();
        }
        let dim = m + nf;
        let mut kkt = DMatrix::<f64>::zeros(dim, dim);
        kkt.view_mut((0, 0), (m, m)).copy_from(&schur);
        if nf > 0 {
            kkt.view_mut((0, m), (m, nf)).copy_from(&sf.a_free);
            kkt.view_mut((m, 0), (nf, m)).copy_from(&sf.a_free.transpose());
        }
        // tiny regularisation keeps the factorisation alive on degenerate problems
        let reg = 1e-14 * (1.0 + schur.diagonal().amax());
        for i in 0..m {
            kkt[(i, i)] += reg;
        }
        for i in m..dim {
            kkt[(i, i)] -= reg;
        }
        let lu = kkt.lu();

        let solve_direction = |t_blk: &[CMatrix], t_lp: &DVector<f64>| -> Option<Direction> {
            // G_j = T_j S^-1 - X_j Rd_j S^-1
            let g: Vec<CMatrix> = (0..nb)
                .map(|j| (&t_blk[j] - &it.x[j] * &rd[j]) * &sinv[j])
                .collect();
            let gl = (t_lp - it.xl.component_mul(&rdl)).component_div(&it.sl);
            let mut rhs1 = rp.clone() - &sf.a_lp * &gl;
            for j in 0..nb {
                for (i, a) in sf.a_blk[j].iter().enumerate() {
                    if let Some(a) = a {
                        rhs1[i] -= re_trace_product(a, &g[j]);
                    }
                }
            }
            let mut rhs = DVector::<f64>::zeros(dim);
            rhs.rows_mut(0, m).copy_from(&rhs1);
            if nf > 0 {
                rhs.rows_mut(m, nf).copy_from(&rf);
            }
            let sol = lu.solve(&rhs)?;
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dy = sol.rows(0, m).into_owned();
            let dxf = sol.rows(m, nf).into_owned();
            let mut dx = Vec::with_capacity(nb);
            let mut ds = Vec::with_capacity(nb);
            for j in 0..nb {
                let mut dxj = g[j].clone();
                for (i, q) in q_mats[j].iter().enumerate() {
                    if let Some(q) = q {
                        if dy[i] != 0.0 {
                            dxj += q * c64(dy[i], 0.0);
                        }
                    }
                }
                dx.push(herm_part(&dxj));
                ds.push(herm_part(&(&rd[j] - sf.adjoint_block(j, &dy))));
            }
            let aty = sf.a_lp.transpose() * &dy;
            let dsl = &rdl - &aty;
            let dxl = gl + ratio.component_mul(&aty);
            Some(Direction { dx, dxl, dxf, dy, ds, dsl })
        };

        let step_lengths = |d: &Direction| -> (f64, f64) {
            let mut ap = max_lp_step(&it.xl, &d.dxl);
            let mut ad = max_lp_step(&it.sl, &d.dsl);
            for j in 0..nb {
                ap = ap.min(max_psd_step(&lx[j], &d.dx[j]));
                ad = ad.min(max_psd_step(&ls[j], &d.ds[j]));
            }
            (ap, ad)
        };

        // predictor
        let t_aff: Vec<CMatrix> = (0..nb).map(|j| -(&it.x[j] * &it.s[j])).collect();
        let t_aff_l = -it.xl.component_mul(&it.sl);
        let Some(aff) = solve_direction(&t_aff, &t_aff_l) else {
            note = "singular Newton system".into();
            break;
        };
        let (ap, ad) = step_lengths(&aff);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut mu_aff = 0.0;
        for j in 0..nb {
            let xa = &it.x[j] + &aff.dx[j] * c64(ap, 0.0);
            let sa = &it.s[j] + &aff.ds[j] * c64(ad, 0.0);
            mu_aff += re_trace_product(&xa, &sa);
        }
        mu_aff += (&it.xl + &aff.dxl * ap).dot(&(&it.sl + &aff.dsl * ad));
        mu_aff /= nu.max(1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let t_cor: Vec<CMatrix> = (0..nb)
            .map(|j| {
                let n = sf.dims[j];
                CMatrix::identity(n, n) * c64(sigma * mu, 0.0) - &it.x[j] * &it.s[j] - &aff.dx[j] * &aff.ds[j]
            })
            .collect();
        let t_cor_l = DVector::from_element(nl, sigma * mu) - it.xl.component_mul(&it.sl) - aff.dxl.component_mul(&aff.dsl);
        let Some(dir) = solve_direction(&t_cor, &t_cor_l) else {
            note = "singular Newton system".into();
            break;
        };
        let (ap, ad) = step_lengths(&dir);
        let frac = 0.9 + 0.09 * (1.0 - sigma).clamp(0.0, 1.0);
        let ap = (frac * ap).min(1.0);
        let ad = (frac * ad).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stalls += 1;
            if stalls > 3 {
                note = "step length collapsed".into();
                break;
            }
        } else {
            stalls = 0;
        }

        for j in 0..nb {
            it.x[j] = herm_part(&(&it.x[j] + &dir.dx[j] * c64(ap, 0.0)));
            it.s[j] = herm_part(&(&it.s[j] + &dir.ds[j] * c64(ad, 0.0)));
        }
        it.xl += &dir.dxl * ap;
        it.xf += &dir.dxf * ap;
        it.y += &dir.dy * ad;
        it.sl += &dir.dsl * ad;
    }

    StdOutcome {
        it,
        status,
        iterations,
        pinf,
        dinf,
        gap,
        note,
    }
}

/// `A(X) + A_f x_f` without the slack part; used for the unboundedness ray test.
fn ax_zero_rhs(sf: &StandardForm, it: &Iterate) -> DVector<f64> {
    sf.apply_a(&it.x, &it.xl, &it.xf)
}

/// Solves `p` to tolerance `tol` (relative primal/dual infeasibility and gap).
pub fn solve(p: &ConicProblem, tol: f64, max_iters: usize) -> Result<ConicSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    p.validate()?;
    let sf = StandardForm::build(p);
    let out = interior_point(&sf, &SolverOptions { tol, max_iters });

    let block_values: Vec<HermitianMatrix> = out
        .it
        .x
        .iter()
        .enumerate()
        .map(|(j, x)| HermitianMatrix::from_herm_part(&(x * c64(sf.block_scale[j], 0.0))))
        .collect();
    let scalar_values: Vec<f64> = (0..sf.nf()).map(|s| out.it.xf[s] * sf.free_scale[s]).collect();
    // lambda_i = -sign_i * r_i * y_i / kappa
    let duals: Vec<f64> = (0..sf.m)
        .map(|i| -sf.row_sign[i] * sf.row_scale[i] * out.it.y[i] / sf.obj_scale)
        .collect();

    let blocks_raw: Vec<CMatrix> = block_values.iter().map(|b| b.as_matrix().clone()).collect();
    let objective_value = p.objective_value(&blocks_raw, &scalar_values);
    let mut max_residual: f64 = 0.0;
    for c in &p.constraints {
        let (lhs, mag) = c.evaluate(&blocks_raw, &scalar_values);
        max_residual = max_residual.max(c.violation(lhs) / (mag + c.rhs.abs()).max(f64::MIN_POSITIVE));
    }

    let diagnostics = format!(
        "iters={} pinf={:.2e} dinf={:.2e} gap={:.2e}{}{}",
        out.iterations,
        out.pinf,
        out.dinf,
        out.gap,
        if out.note.is_empty() { "" } else { " " },
        out.note
    );
    log::debug!("sdp solve: {:?} {}", out.status, diagnostics);

    Ok(ConicSolution {
        block_values,
        scalar_values,
        objective_value,
        status: out.status,
        duality_gap: out.gap,
        max_residual,
        duals,
        iterations: out.iterations,
        diagnostics,
    })
}
