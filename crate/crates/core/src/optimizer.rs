//! Sub-problem construction, rank-one recovery and the alternating optimization loop.
//!
//! Block layout of the beamforming sub-problem: `W_0..W_{K-1}` then
//! `D_0..D_{Q-1}`, one free scalar `R`. The surface sub-problem has blocks
//! `Psi_r`, `Psi_t` and the same scalar.
//!
//! Coefficient convention: the surface stores the diagonals `v` of
//! `Phi = diag(v)`; the lifted vector is `[conj(v); 1]`, so that
//! `|a^H Phi G d|^2 = Tr(B Psi)` with `B = [[A D A^H, 0], [0, 0]]`,
//! `A = diag(a^H) G`.

use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{audit_with_tolerance, BeamformerSet, ConstraintReport};
use crate::numerics::{c64, hermitian_eig, CMatrix, CVector, HermitianMatrix, C64};
use crate::scenario::{complex_gaussian, ChannelSet, StarCoefficients, SystemConfig};
use crate::sdp::{solve, AffineConstraint, ConicProblem, ConicSolution, Sense, SolveStatus};

/// Lifted surface variables, each `(N+1) x (N+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedRISVars {
    pub psi_r: HermitianMatrix,
    pub psi_t: HermitianMatrix,
}

impl LiftedRISVars {
    pub fn from_star(star: &StarCoefficients) -> Self {
        Self {
            psi_r: HermitianMatrix::outer(&lift_vector(&star.phi_r)),
            psi_t: HermitianMatrix::outer(&lift_vector(&star.phi_t)),
        }
    }

    pub fn n_elements(&self) -> usize {
        self.psi_r.dim() - 1
    }

    /// Upper-left `N x N` block of `Psi_r`.
    pub fn inner_r(&self) -> CMatrix {
        let n = self.n_elements();
        self.psi_r.as_matrix().view((0, 0), (n, n)).into_owned()
    }

    pub fn inner_t(&self) -> CMatrix {
        let n = self.n_elements();
        self.psi_t.as_matrix().view((0, 0), (n, n)).into_owned()
    }

    /// Largest violation of the lifted invariants (PSD, coupling, unit corner).
    pub fn invariant_violation(&self) -> f64 {
        let n = self.n_elements();
        let r = self.psi_r.as_matrix();
        let t = self.psi_t.as_matrix();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            worst = worst.max((r[(i, i)].re + t[(i, i)].re - 1.0).abs());
            worst = worst.max((-r[(i, i)].re).max(0.0)).max((-t[(i, i)].re).max(0.0));
        }
        worst = worst.max((r[(n, n)].re - 1.0).abs()).max((t[(n, n)].re - 1.0).abs());
        worst
            .max((-self.psi_r.min_eigenvalue()).max(0.0))
            .max((-self.psi_t.min_eigenvalue()).max(0.0))
    }
}

fn lift_vector(diag: &CVector) -> CVector {
    let n = diag.len();
    CVector::from_fn(n + 1, |i, _| if i < n { diag[i].conj() } else { c64(1.0, 0.0) })
}

/// Which elements may reflect / transmit.
#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeMode {
    /// Every element splits energy, `beta_r^2 + beta_t^2 = 1`.
    Coupled,
    /// Fixed split: `true` reflects only, `false` transmits only.
    Masked(Vec<bool>),
}

impl AmplitudeMode {
    pub fn conventional(n: usize) -> Result<Self> {
        if n % 2 != 0 {
            return Err(Error::invalid(format!("conventional split needs an even element count, got {n}")));
        }
        Ok(Self::Masked((0..n).map(|i| i < n / 2).collect()))
    }
}

fn block_w(k: usize) -> usize {
    k
}

fn block_d(k_users: usize, q: usize) -> usize {
    k_users + q
}

fn sandwich_adj(a: &CMatrix, p: &CMatrix) -> CMatrix {
    // A^H P A, Hermitian by construction
    let m = a.adjoint() * p * a;
    crate::numerics::herm_part(&m)
}

fn sandwich(a: &CMatrix, x: &CMatrix) -> CMatrix {
    // A X A^H
    let m = a * x * a.adjoint();
    crate::numerics::herm_part(&m)
}

/// Beamforming sub-problem for fixed (rank-one) surface coefficients.
pub fn build_p31(channels: &ChannelSet, star: &StarCoefficients, cfg: &SystemConfig) -> ConicProblem {
    build_p31_lifted(channels, &LiftedRISVars::from_star(star), cfg)
}

/// Beamforming sub-problem with data assembled from lifted surface variables.
pub fn build_p31_lifted(channels: &ChannelSet, lifted: &LiftedRISVars, cfg: &SystemConfig) -> ConicProblem {
    let m = channels.m_antennas();
    let kn = channels.h_users.len();
    let qn = channels.a_targets.len();
    let pr = lifted.inner_r();
    let pt = lifted.inner_t();
    let gamma = cfg.gamma_linear();

    let t: Vec<CMatrix> = (0..qn).map(|q| sandwich_adj(&channels.target_cascade(q), &pr)).collect();
    let u: Vec<CMatrix> = (0..kn).map(|k| sandwich_adj(&channels.user_cascade(k), &pt)).collect();

    let mut p = ConicProblem::new(vec![m; kn + qn], 1).maximize_scalar(0, 1.0);
    for q in 0..qn {
        p.push(
            AffineConstraint::new(format!("gain[{q}]"), Sense::Ge, 0.0)
                .block(block_d(kn, q), t[q].clone())
                .scalar(0, -1.0),
        );
    }
    for q in 0..qn {
        let mut c = AffineConstraint::new(format!("interference[{q}]"), Sense::Le, cfg.eta);
        for k in 0..kn {
            c = c.block(block_w(k), t[q].clone());
        }
        let mut cross = CMatrix::zeros(m, m);
        for (qp, tq) in t.iter().enumerate() {
            if qp != q {
                cross += tq;
            }
        }
        if qn > 1 {
            c = c.block(block_d(kn, q), cross);
        }
        p.push(c);
    }
    for k in 0..kn {
        let mut c = AffineConstraint::new(format!("sinr[{k}]"), Sense::Ge, cfg.noise_linear());
        for j in 0..kn {
            let coeff = if j == k { 1.0 / gamma } else { -1.0 };
            c = c.block(block_w(j), &u[k] * c64(coeff, 0.0));
        }
        for q in 0..qn {
            c = c.block(block_d(kn, q), -&u[k]);
        }
        p.push(c);
    }
    let mut c = AffineConstraint::new("power", Sense::Le, cfg.p_max_linear());
    for b in 0..kn + qn {
        c = c.block(b, CMatrix::identity(m, m));
    }
    p.push(c);
    p
}

fn border(inner: &CMatrix, keep: &[usize]) -> CMatrix {
    let n = keep.len();
    let mut out = CMatrix::zeros(n + 1, n + 1);
    for (i, &a) in keep.iter().enumerate() {
        for (j, &b) in keep.iter().enumerate() {
            out[(i, j)] = inner[(a, b)];
        }
    }
    out
}

fn unit_entry(dim: usize, i: usize) -> CMatrix {
    let mut e = CMatrix::zeros(dim, dim);
    e[(i, i)] = c64(1.0, 0.0);
    e
}

/// Matrix data `B_q`, `C_q`, `E_k`, `F_k` (zero-bordered, full `N+1` size).
pub struct SurfaceData {
    pub b: Vec<CMatrix>,
    pub c: Vec<CMatrix>,
    pub e: Vec<CMatrix>,
    pub f: Vec<CMatrix>,
}

pub fn surface_data(channels: &ChannelSet, bf: &BeamformerSet) -> SurfaceData {
    let n = channels.n_elements();
    let all: Vec<usize> = (0..n).collect();
    let kn = channels.h_users.len();
    let qn = channels.a_targets.len();
    let sum_w = bf.sum_comm();
    let sum_all = &sum_w + bf.sum_sense();
    let a: Vec<CMatrix> = (0..qn).map(|q| channels.target_cascade(q)).collect();
    let h: Vec<CMatrix> = (0..kn).map(|k| channels.user_cascade(k)).collect();
    let b = (0..qn).map(|q| border(&sandwich(&a[q], bf.d_cov[q].as_matrix()), &all)).collect();
    let c = (0..qn)
        .map(|q| {
            let mut inner = sandwich(&a[q], &sum_w);
            for (qp, aq) in a.iter().enumerate() {
                if qp != q {
                    inner += sandwich(aq, bf.d_cov[q].as_matrix());
                }
            }
            border(&inner, &all)
        })
        .collect();
    let e = (0..kn).map(|k| border(&sandwich(&h[k], bf.w_cov[k].as_matrix()), &all)).collect();
    let f = (0..kn).map(|k| border(&sandwich(&h[k], &sum_all), &all)).collect();
    SurfaceData { b, c, e, f }
}

/// Surface sub-problem for fixed beamformers.
pub fn build_p51(channels: &ChannelSet, bf: &BeamformerSet, cfg: &SystemConfig) -> ConicProblem {
    build_p51_with_mode(channels, bf, cfg, &AmplitudeMode::Coupled)
}

/// Element index sets of the two blocks.
fn block_elements(n: usize, mode: &AmplitudeMode) -> (Vec<usize>, Vec<usize>) {
    match mode {
        AmplitudeMode::Coupled => ((0..n).collect(), (0..n).collect()),
        AmplitudeMode::Masked(mask) => (
            (0..n).filter(|&i| mask[i]).collect(),
            (0..n).filter(|&i| !mask[i]).collect(),
        ),
    }
}

/// Surface sub-problem. In masked mode each block only carries the elements
/// that are active on its side (plus the auxiliary coordinate) and every
/// active diagonal is pinned to one; inactive elements are zero by construction.
pub fn build_p51_with_mode(channels: &ChannelSet, bf: &BeamformerSet, cfg: &SystemConfig, mode: &AmplitudeMode) -> ConicProblem {
    let n = channels.n_elements();
    let kn = channels.h_users.len();
    let qn = channels.a_targets.len();
    let data = surface_data(channels, bf);
    let (er, et) = block_elements(n, mode);
    let restrict = |m: &CMatrix, keep: &[usize]| -> CMatrix {
        let mut idx = keep.to_vec();
        idx.push(n);
        CMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
    };
    let (dr, dt) = (er.len() + 1, et.len() + 1);
    let gamma = cfg.gamma_linear();

    let mut p = ConicProblem::new(vec![dr, dt], 1).maximize_scalar(0, 1.0);
    for q in 0..qn {
        p.push(
            AffineConstraint::new(format!("gain[{q}]"), Sense::Ge, 0.0)
                .block(0, restrict(&data.b[q], &er))
                .scalar(0, -1.0),
        );
    }
    for q in 0..qn {
        p.push(AffineConstraint::new(format!("interference[{q}]"), Sense::Le, cfg.eta).block(0, restrict(&data.c[q], &er)));
    }
    for k in 0..kn {
        let coeff = restrict(&data.e[k], &et) * c64(1.0 + 1.0 / gamma, 0.0) - restrict(&data.f[k], &et);
        p.push(AffineConstraint::new(format!("sinr[{k}]"), Sense::Ge, cfg.noise_linear()).block(1, coeff));
    }
    match mode {
        AmplitudeMode::Coupled => {
            for i in 0..n {
                p.push(
                    AffineConstraint::new(format!("coupling[{i}]"), Sense::Eq, 1.0)
                        .block(0, unit_entry(dr, i))
                        .block(1, unit_entry(dt, i)),
                );
            }
        }
        AmplitudeMode::Masked(_) => {
            for (blk, (dim, elems)) in [(dr, &er), (dt, &et)].into_iter().enumerate() {
                for (i, el) in elems.iter().enumerate() {
                    p.push(AffineConstraint::new(format!("pinned[{el}]"), Sense::Eq, 1.0).block(blk, unit_entry(dim, i)));
                }
            }
        }
    }
    p.push(AffineConstraint::new("aux[r]", Sense::Eq, 1.0).block(0, unit_entry(dr, dr - 1)));
    p.push(AffineConstraint::new("aux[t]", Sense::Eq, 1.0).block(1, unit_entry(dt, dt - 1)));
    for (blk, dim) in [(0usize, dr), (1, dt)] {
        let side = if blk == 0 { "r" } else { "t" };
        for i in 0..dim - 1 {
            p.push(AffineConstraint::new(format!("nonneg_{side}[{i}]"), Sense::Ge, 0.0).block(blk, unit_entry(dim, i)));
        }
    }
    p
}

/// Expands (possibly reduced) surface-problem blocks to full-size lifted variables.
pub fn lifted_from_solution(sol: &ConicSolution, n: usize, mode: &AmplitudeMode) -> LiftedRISVars {
    let (er, et) = block_elements(n, mode);
    let expand = |b: &HermitianMatrix, elems: &[usize]| -> HermitianMatrix {
        let mut idx = elems.to_vec();
        idx.push(n);
        let mut out = CMatrix::zeros(n + 1, n + 1);
        let m = b.as_matrix();
        for (i, &a) in idx.iter().enumerate() {
            for (j, &c) in idx.iter().enumerate() {
                out[(a, c)] = m[(i, j)];
            }
        }
        HermitianMatrix::from_herm_part(&out)
    };
    LiftedRISVars {
        psi_r: expand(&sol.block_values[0], &er),
        psi_t: expand(&sol.block_values[1], &et),
    }
}

/// `lambda_2 / lambda_1` of a PSD matrix (0 for a zero matrix).
pub fn rank_ratio(m: &HermitianMatrix) -> f64 {
    let (vals, _) = hermitian_eig(m);
    let l1 = vals.first().copied().unwrap_or(0.0);
    let l2 = vals.get(1).copied().unwrap_or(0.0).max(0.0);
    if l1 <= f64::MIN_POSITIVE {
        0.0
    } else {
        l2 / l1
    }
}

/// Rank-one extraction from an optimal beamforming solution.
///
/// Blocks passing `lambda_2/lambda_1 <= threshold` become `sqrt(lambda_1) u_1`
/// with covariance `w w^H`; the others keep their PSD-repaired matrix and a
/// `None` vector.
pub fn recover_beamformers(sol: &ConicSolution, k_users: usize, threshold: f64) -> Result<BeamformerSet> {
    if sol.status != SolveStatus::Optimal {
        return Err(Error::invalid(format!("cannot recover beamformers from a {:?} solution", sol.status)));
    }
    if sol.block_values.len() < k_users {
        return Err(Error::invalid("solution has fewer blocks than users"));
    }
    let mut vecs = Vec::with_capacity(sol.block_values.len());
    let mut covs = Vec::with_capacity(sol.block_values.len());
    for b in &sol.block_values {
        let repaired = b.psd_projection();
        let (vals, vectors) = hermitian_eig(&repaired);
        let l1 = vals.first().copied().unwrap_or(0.0).max(0.0);
        if rank_ratio(&repaired) <= threshold {
            let mut v: CVector = vectors.column(0).into_owned() * c64(l1.sqrt(), 0.0);
            // fix the global phase for reproducible output
            if let Some(pivot) = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())) {
                if pivot.norm() > 0.0 {
                    v *= pivot.conj() / pivot.norm();
                }
            }
            covs.push(HermitianMatrix::outer(&v));
            vecs.push(Some(v));
        } else {
            covs.push(repaired);
            vecs.push(None);
        }
    }
    let d_cov = covs.split_off(k_users);
    let d_vec = vecs.split_off(k_users);
    Ok(BeamformerSet {
        w_comm: vecs,
        d_sense: d_vec,
        w_cov: covs,
        d_cov,
    })
}

/// `sqrt(Lambda) U^H`-factor of a PSD matrix, for drawing `CN(0, Psi)` samples.
fn gaussian_factor(m: &HermitianMatrix) -> CMatrix {
    let (vals, vecs) = hermitian_eig(m);
    let mut f = vecs.clone();
    for (j, l) in vals.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        let mut col = f.column_mut(j);
        col *= c64(s, 0.0);
    }
    f
}

fn dominant(m: &HermitianMatrix) -> CVector {
    let (vals, vecs) = hermitian_eig(m);
    vecs.column(0).into_owned() * c64(vals[0].max(0.0).sqrt(), 0.0)
}

/// Turns a lifted vector `[phi; u]` into surface diagonals `v = conj(phi / u)`.
fn strip_aux(xi: &CVector) -> CVector {
    let n = xi.len() - 1;
    let u = xi[n];
    let scale = if u.norm() > 1e-12 * xi.norm().max(f64::MIN_POSITIVE) {
        u
    } else {
        c64(1.0, 0.0)
    };
    CVector::from_fn(n, |i, _| (xi[i] / scale).conj())
}

/// Projects a pair of raw coefficient vectors onto the admissible amplitudes
/// of `mode`, keeping phases.
pub fn project_pair(raw_r: &CVector, raw_t: &CVector, mode: &AmplitudeMode) -> StarCoefficients {
    let n = raw_r.len();
    let phase = |z: C64| if z.norm() > 0.0 { z / z.norm() } else { c64(1.0, 0.0) };
    let mut phi_r = CVector::zeros(n);
    let mut phi_t = CVector::zeros(n);
    for i in 0..n {
        let (ar, at) = match mode {
            AmplitudeMode::Coupled => {
                let (ar, at) = (raw_r[i].norm(), raw_t[i].norm());
                let s = (ar * ar + at * at).sqrt();
                if s > 0.0 {
                    (ar / s, at / s)
                } else {
                    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2)
                }
            }
            AmplitudeMode::Masked(mask) => {
                if mask[i] {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
        };
        phi_r[i] = phase(raw_r[i]) * ar;
        phi_t[i] = phase(raw_t[i]) * at;
    }
    StarCoefficients {
        phi_r,
        phi_t,
    }
}

/// How the returned surface coefficients were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RecoverySource {
    Randomization,
    Eigenvector,
}

#[derive(Debug, Clone)]
pub struct StarRecovery {
    pub star: StarCoefficients,
    pub report: ConstraintReport,
    pub source: RecoverySource,
    pub feasible_candidates: usize,
}

/// Gaussian randomization from an optimal surface solution, falling back to
/// the dominant eigenvectors.
pub fn recover_star(
    sol: &ConicSolution,
    channels: &ChannelSet,
    bf: &BeamformerSet,
    cfg: &SystemConfig,
    rng: &mut impl Rng,
) -> Result<StarRecovery> {
    recover_star_with_mode(sol, channels, bf, cfg, &AmplitudeMode::Coupled, rng)
}

pub fn recover_star_with_mode(
    sol: &ConicSolution,
    channels: &ChannelSet,
    bf: &BeamformerSet,
    cfg: &SystemConfig,
    mode: &AmplitudeMode,
    rng: &mut impl Rng,
) -> Result<StarRecovery> {
    if sol.status != SolveStatus::Optimal {
        return Err(Error::invalid(format!("cannot recover coefficients from a {:?} solution", sol.status)));
    }
    let n = channels.n_elements();
    let lifted = lifted_from_solution(sol, n, mode);
    let fr = gaussian_factor(&lifted.psi_r);
    let ft = gaussian_factor(&lifted.psi_t);

    // candidates are drawn sequentially so the stream does not depend on evaluation order
    let mut candidates = Vec::with_capacity(cfg.randomization_count + 1);
    candidates.push((
        RecoverySource::Eigenvector,
        project_pair(&strip_aux(&dominant(&lifted.psi_r)), &strip_aux(&dominant(&lifted.psi_t)), mode),
    ));
    for _ in 0..cfg.randomization_count {
        let gr = CVector::from_fn(n + 1, |_, _| complex_gaussian(rng));
        let gt = CVector::from_fn(n + 1, |_, _| complex_gaussian(rng));
        let xr = &fr * gr;
        let xt = &ft * gt;
        candidates.push((RecoverySource::Randomization, project_pair(&strip_aux(&xr), &strip_aux(&xt), mode)));
    }

    let scored: Vec<(RecoverySource, StarCoefficients, ConstraintReport)> = candidates
        .into_par_iter()
        .map(|(src, star)| {
            let report = audit_with_tolerance(bf, &star, channels, cfg, cfg.audit_tol);
            (src, star, report)
        })
        .collect();

    let feasible_candidates = scored.iter().filter(|(_, _, r)| r.feasible).count();
    let best_feasible = scored
        .iter()
        .enumerate()
        .filter(|(_, (_, _, r))| r.feasible)
        .max_by(|(i, a), (j, b)| a.2.min_gain.total_cmp(&b.2.min_gain).then(j.cmp(i)));
    if let Some((_, (src, star, report))) = best_feasible {
        return Ok(StarRecovery {
            star: star.clone(),
            report: report.clone(),
            source: *src,
            feasible_candidates,
        });
    }
    let (_, star, report) = scored
        .into_iter()
        .min_by(|a, b| a.2.worst_margin().total_cmp(&b.2.worst_margin()))
        .expect("at least the eigenvector candidate exists");
    Err(Error::RecoveryFailure {
        candidate: Box::new(star),
        report: Box::new(report),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AOIteration {
    pub index: usize,
    pub r_after_p31: f64,
    /// `None` when the surface step was not run (fixed-surface schemes) or failed.
    pub r_after_p51: Option<f64>,
    pub wall_ms: f64,
    pub p31_status: SolveStatus,
    pub p51_status: Option<SolveStatus>,
}

#[derive(Debug, Clone)]
pub struct AOTrace {
    pub iterations: Vec<AOIteration>,
    pub beamformers: BeamformerSet,
    pub star: StarCoefficients,
    pub report: ConstraintReport,
    /// Relaxed optimum of the last surface sub-problem, if any.
    pub relaxed_bound: Option<f64>,
    pub converged: bool,
    /// `lambda_2 / lambda_1` for every `W_k` then `D_q` of the final solve.
    pub rank_ratios: Vec<f64>,
    pub recovery: Option<RecoverySource>,
    /// True when the final design is the first-iteration solution because the
    /// recovered coefficients did not improve on it.
    pub used_initial_fallback: bool,
    pub warnings: Vec<String>,
}

impl AOTrace {
    /// The sequence `R31(1), R51(1), R31(2), ...` in solve order.
    pub fn r_sequence(&self) -> Vec<f64> {
        self.iterations
            .iter()
            .flat_map(|it| std::iter::once(it.r_after_p31).chain(it.r_after_p51))
            .collect()
    }

    pub fn min_gain(&self) -> f64 {
        self.report.min_gain
    }

    pub fn rank_one_ok(&self, threshold: f64) -> bool {
        self.rank_ratios.iter().all(|r| *r <= threshold)
    }
}

fn solve_cfg(p: &ConicProblem, cfg: &SystemConfig) -> Result<ConicSolution> {
    solve(p, cfg.solver_tol, cfg.solver_max_iters)
}

/// Builds an `InfeasibleScenario` error whose message ranks remedies by the
/// violations of the solver's last iterate.
fn infeasible_error(sol: &ConicSolution, channels: &ChannelSet, star: &StarCoefficients, cfg: &SystemConfig) -> Error {
    let kn = channels.h_users.len();
    let mut blocks = sol.block_values.clone();
    let d = blocks.split_off(kn.min(blocks.len()));
    let bf = BeamformerSet::from_covariances(
        blocks.iter().map(|b| b.psd_projection()).collect(),
        d.iter().map(|b| b.psd_projection()).collect(),
    );
    let report = audit_with_tolerance(&bf, star, channels, cfg, cfg.audit_tol);
    let mut families: Vec<(&str, f64)> = Vec::new();
    for (id, margin) in &report.violations {
        let fam = if id.starts_with("C2") {
            "lower gamma_db or raise p_max_dbm (SINR constraints bind)"
        } else if id.starts_with("C1") {
            "raise eta (interference constraints bind)"
        } else if id.starts_with("C3") {
            "raise p_max_dbm (power budget binds)"
        } else {
            continue;
        };
        match families.iter_mut().find(|(f, _)| *f == fam) {
            Some(e) => e.1 = e.1.max(*margin),
            None => families.push((fam, *margin)),
        }
    }
    families.sort_by(|a, b| b.1.total_cmp(&a.1));
    let advice = if families.is_empty() {
        "lower gamma_db or raise eta / p_max_dbm".to_string()
    } else {
        families.iter().map(|(f, _)| *f).collect::<Vec<_>>().join("; ")
    };
    Error::InfeasibleScenario(format!("beamforming sub-problem has no feasible point ({}); suggested: {advice}", sol.diagnostics))
}

fn status_error(sol: &ConicSolution, what: &str) -> Error {
    Error::Numerical(format!("{what} solve ended with {:?}: {}", sol.status, sol.diagnostics))
}

/// The alternating loop with energy-split surface coefficients.
pub fn alternating_optimize(channels: &ChannelSet, cfg: &SystemConfig, rng: &mut impl Rng) -> Result<AOTrace> {
    let init = StarCoefficients::random_split(channels.n_elements(), rng);
    alternating_optimize_from(channels, cfg, init, &AmplitudeMode::Coupled, rng)
}

/// The AO loop from given initial coefficients under an amplitude model.
pub fn alternating_optimize_from(
    channels: &ChannelSet,
    cfg: &SystemConfig,
    init: StarCoefficients,
    mode: &AmplitudeMode,
    rng: &mut impl Rng,
) -> Result<AOTrace> {
    let n = channels.n_elements();
    let kn = channels.h_users.len();
    let mut lifted = LiftedRISVars::from_star(&init);
    let mut iterations = Vec::new();
    let mut warnings = Vec::new();
    let mut last_p51: Option<(ConicSolution, BeamformerSet)> = None;
    let mut first_p31: Option<ConicSolution> = None;
    let mut r_prev: Option<f64> = None;
    let mut converged = false;

    for index in 1..=cfg.gamma_max_iters.max(1) {
        let started = Instant::now();
        let p31 = build_p31_lifted(channels, &lifted, cfg);
        let s31 = solve_cfg(&p31, cfg)?;
        if s31.status != SolveStatus::Optimal {
            if index == 1 {
                return Err(match s31.status {
                    SolveStatus::Infeasible => infeasible_error(&s31, channels, &init, cfg),
                    _ => status_error(&s31, "beamforming"),
                });
            }
            warnings.push(format!("iteration {index}: beamforming solve {:?}; stopping at the previous iterate", s31.status));
            break;
        }
        let r31 = s31.scalar_values[0];
        if index == 1 {
            first_p31 = Some(s31.clone());
        }
        let mut blocks = s31.block_values.clone();
        let d = blocks.split_off(kn);
        let bf_relaxed = BeamformerSet::from_covariances(blocks, d);

        let p51 = build_p51_with_mode(channels, &bf_relaxed, cfg, mode);
        let s51 = solve_cfg(&p51, cfg)?;
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        if s51.status != SolveStatus::Optimal {
            iterations.push(AOIteration {
                index,
                r_after_p31: r31,
                r_after_p51: None,
                wall_ms,
                p31_status: s31.status,
                p51_status: Some(s51.status),
            });
            warnings.push(format!("iteration {index}: surface solve {:?}; stopping at the previous iterate", s51.status));
            break;
        }
        let r51 = s51.scalar_values[0];
        iterations.push(AOIteration {
            index,
            r_after_p31: r31,
            r_after_p51: Some(r51),
            wall_ms,
            p31_status: s31.status,
            p51_status: Some(s51.status),
        });
        lifted = lifted_from_solution(&s51, n, mode);
        last_p51 = Some((s51, bf_relaxed));

        if let Some(prev) = r_prev {
            let delta = (prev - r51).abs() / r51.abs().max(f64::MIN_POSITIVE);
            if delta < cfg.delta_th {
                converged = true;
                break;
            }
        }
        r_prev = Some(r51);
    }

    let first_p31 = first_p31.expect("first iteration always records the beamforming solve");
    let baseline_bf = recover_beamformers(&first_p31, kn, cfg.rank_one_ratio)?;
    let baseline_report = audit_with_tolerance(&baseline_bf, &init, channels, cfg, cfg.audit_tol);
    let baseline_ratios: Vec<f64> = first_p31.block_values.iter().map(rank_ratio).collect();

    let mut result = AOTrace {
        iterations,
        beamformers: baseline_bf,
        star: init.clone(),
        report: baseline_report,
        relaxed_bound: last_p51.as_ref().map(|(s, _)| s.scalar_values[0]),
        converged,
        rank_ratios: baseline_ratios,
        recovery: None,
        used_initial_fallback: true,
        warnings,
    };

    let Some((s51, bf_relaxed)) = last_p51 else {
        result.warnings.push("no surface solve succeeded; returning the initial coefficients".into());
        return Ok(result);
    };

    let (star, source) = match recover_star_with_mode(&s51, channels, &bf_relaxed, cfg, mode, rng) {
        Ok(rec) => (rec.star, Some(rec.source)),
        Err(Error::RecoveryFailure { candidate, report }) => {
            result.warnings.push(format!(
                "no recovered candidate satisfies the constraints with the relaxed beamformers (worst margin {:.3e}); using the least-violating one",
                report.worst_margin()
            ));
            (*candidate, None)
        }
        Err(e) => return Err(e),
    };

    // re-optimize the beamformers for the recovered rank-one coefficients
    let polish = solve_cfg(&build_p31(channels, &star, cfg), cfg)?;
    if polish.status != SolveStatus::Optimal {
        result
            .warnings
            .push(format!("beamforming solve for the recovered coefficients ended {:?}; keeping the first-iteration design", polish.status));
        return Ok(result);
    }
    let bf = recover_beamformers(&polish, kn, cfg.rank_one_ratio)?;
    let report = audit_with_tolerance(&bf, &star, channels, cfg, cfg.audit_tol);
    let improves = report.min_gain >= result.report.min_gain || !result.report.feasible;
    if report.feasible && improves {
        result.rank_ratios = polish.block_values.iter().map(rank_ratio).collect();
        result.beamformers = bf;
        result.star = star;
        result.report = report;
        result.recovery = source;
        result.used_initial_fallback = false;
    } else {
        info!(
            "recovered design (min gain {:.4e}, feasible {}) does not beat the first iterate ({:.4e}); keeping the latter",
            report.min_gain, report.feasible, result.report.min_gain
        );
    }
    if !result.rank_one_ok(cfg.rank_one_ratio) {
        warn!("final beamformers fail the rank-one test: ratios {:?}", result.rank_ratios);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::beam_pattern_gain;
    use crate::numerics::re_trace_product;
    use crate::scenario::{generate_channels, rng_from_seed};

    fn desk() -> (SystemConfig, ChannelSet) {
        let cfg = SystemConfig::desk_scale();
        let mut rng = rng_from_seed(3);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        (cfg, ch)
    }

    #[test]
    fn p31_shape_full_scale() {
        let cfg = SystemConfig::default();
        let mut rng = rng_from_seed(1);
        let ch = generate_channels(&cfg, &mut rng).unwrap();
        let star = StarCoefficients::random_split(cfg.n_elements(), &mut rng);
        let p = build_p31(&ch, &star, &cfg);
        assert_eq!(p.blocks, vec![6; 5]);
        assert_eq!(p.free_scalars, 1);
        assert_eq!(p.constraints.len(), 9);
        p.validate().unwrap();
    }

    #[test]
    fn p31_single_target_has_no_cross_term() {
        let mut cfg = SystemConfig::desk_scale();
        cfg.q_targets = 1;
        cfg.target_doas.truncate(1);
        let ch = generate_channels(&cfg, &mut rng_from_seed(2)).unwrap();
        let star = StarCoefficients::random_split(cfg.n_elements(), &mut rng_from_seed(2));
        let p = build_p31(&ch, &star, &cfg);
        let c = p.constraints.iter().find(|c| c.label == "interference[0]").unwrap();
        assert!(c.block_terms.iter().all(|(b, _)| *b < cfg.k_users));
    }

    #[test]
    fn p51_shape() {
        let (cfg, _) = desk();
        let mut cfg = cfg;
        cfg.nx = 2;
        cfg.nz = 2;
        let ch = generate_channels(&cfg, &mut rng_from_seed(4)).unwrap();
        let bf = BeamformerSet::zeros(cfg.m_antennas, 2, 2);
        let p = build_p51(&ch, &bf, &cfg);
        assert_eq!(p.blocks, vec![5, 5]);
        let core = p.constraints.iter().filter(|c| !c.label.starts_with("nonneg")).count();
        assert_eq!(core, 12);
        assert_eq!(p.constraints.len(), 12 + 8);
    }

    #[test]
    fn b_matrix_is_bordered() {
        let (_, ch) = desk();
        let mut rng = rng_from_seed(9);
        let d: Vec<CVector> = (0..2).map(|_| CVector::from_fn(4, |_, _| complex_gaussian(&mut rng))).collect();
        let w: Vec<CVector> = (0..2).map(|_| CVector::from_fn(4, |_, _| complex_gaussian(&mut rng))).collect();
        let bf = BeamformerSet::from_vectors(w, d.clone());
        let data = surface_data(&ch, &bf);
        let n = ch.n_elements();
        let a = ch.target_cascade(0);
        let inner = &a * d[0].clone() * d[0].adjoint() * a.adjoint();
        for i in 0..=n {
            for j in 0..=n {
                let want = if i < n && j < n { inner[(i, j)] } else { c64(0.0, 0.0) };
                assert!((data.b[0][(i, j)] - want).norm() <= 1e-12 * (1.0 + want.norm()));
            }
        }
    }

    #[test]
    fn lifted_gain_matches_vector_gain() {
        let (_, ch) = desk();
        let mut rng = rng_from_seed(10);
        let star = StarCoefficients::random_split(ch.n_elements(), &mut rng);
        let d = CVector::from_fn(4, |_, _| complex_gaussian(&mut rng));
        let bf = BeamformerSet::from_vectors(vec![CVector::zeros(4); 2], vec![d.clone(), d.clone()]);
        let data = surface_data(&ch, &bf);
        let lifted = LiftedRISVars::from_star(&star);
        let lifted_gain = re_trace_product(&data.b[0], lifted.psi_r.as_matrix());
        let vec_gain = beam_pattern_gain(&ch.a_targets[0], &star.phi_r, &ch.g, &d).unwrap();
        assert!((lifted_gain - vec_gain).abs() <= 1e-10 * vec_gain);
    }

    #[test]
    fn zero_beamformers_give_zero_surface_optimum() {
        let (cfg, ch) = desk();
        let mut cfg = cfg;
        // without beamformers the SINR rows would be infeasible; drop them
        cfg.k_users = 0;
        let ch = ChannelSet {
            h_users: vec![],
            user_positions: vec![],
            ..ch
        };
        let bf = BeamformerSet::zeros(cfg.m_antennas, 0, cfg.q_targets);
        let p = build_p51(&ch, &bf, &cfg);
        let s = solve(&p, 1e-8, 100).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal, "{}", s.diagnostics);
        assert!(s.scalar_values[0].abs() < 1e-6);
    }

    #[test]
    fn rank_one_recovery_of_outer_product() {
        let x = CVector::from_vec(vec![c64(1.0, 2.0), c64(-0.5, 0.3), c64(0.0, -1.0)]);
        let sol = ConicSolution {
            block_values: vec![HermitianMatrix::outer(&x), HermitianMatrix::identity(3)],
            scalar_values: vec![0.0],
            objective_value: 0.0,
            status: SolveStatus::Optimal,
            duality_gap: 0.0,
            max_residual: 0.0,
            duals: vec![],
            iterations: 0,
            diagnostics: String::new(),
        };
        let bf = recover_beamformers(&sol, 1, 1e-4).unwrap();
        let w = bf.w_comm[0].as_ref().unwrap();
        let diff = w * w.adjoint() - &x * x.adjoint();
        assert!(crate::numerics::frobenius(&diff) <= 1e-8);
        assert!(bf.d_sense[0].is_none());
    }

    #[test]
    fn star_recovery_of_rank_one_lifting() {
        let (cfg, ch) = desk();
        let mut rng = rng_from_seed(11);
        let star = StarCoefficients::random_split(ch.n_elements(), &mut rng);
        let lifted = LiftedRISVars::from_star(&star);
        let sol = ConicSolution {
            block_values: vec![lifted.psi_r.clone(), lifted.psi_t.clone()],
            scalar_values: vec![0.0],
            objective_value: 0.0,
            status: SolveStatus::Optimal,
            duality_gap: 0.0,
            max_residual: 0.0,
            duals: vec![],
            iterations: 0,
            diagnostics: String::new(),
        };
        let d = CVector::from_fn(4, |_, _| complex_gaussian(&mut rng)) * c64(1e-3, 0.0);
        let bf = BeamformerSet::from_vectors(vec![CVector::zeros(4); 2], vec![d.clone(), d]);
        let mut cfg = cfg;
        cfg.randomization_count = 0;
        cfg.gamma_db = -300.0;
        let rec = recover_star(&sol, &ch, &bf, &cfg, &mut rng);
        // zero communication beams cannot meet any SINR target; the candidate is still exact
        let star_back = match rec {
            Ok(r) => r.star,
            Err(Error::RecoveryFailure { candidate, .. }) => *candidate,
            Err(e) => panic!("{e}"),
        };
        for i in 0..ch.n_elements() {
            assert!((star_back.phi_r[i] - star.phi_r[i]).norm() < 1e-8);
            assert!((star_back.phi_t[i] - star.phi_t[i]).norm() < 1e-8);
        }
    }
}
