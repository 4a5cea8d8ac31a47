//! Closed-form performance metrics and the constraint audit.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{quad_form, CMatrix, CVector, HermitianMatrix};
use crate::scenario::{ChannelSet, StarCoefficients, SystemConfig};

/// Transmit beamformers at the DFBS.
///
/// Covariances are always present. Vectors are present when the covariance is
/// (numerically) rank one; `None` marks a block that did not pass the rank-one test.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub w_comm: Vec<Option<CVector>>,
    pub d_sense: Vec<Option<CVector>>,
    pub w_cov: Vec<HermitianMatrix>,
    pub d_cov: Vec<HermitianMatrix>,
}

impl BeamformerSet {
    pub fn from_vectors(w: Vec<CVector>, d: Vec<CVector>) -> Self {
        let w_cov = w.iter().map(HermitianMatrix::outer).collect();
        let d_cov = d.iter().map(HermitianMatrix::outer).collect();
        Self {
            w_comm: w.into_iter().map(Some).collect(),
            d_sense: d.into_iter().map(Some).collect(),
            w_cov,
            d_cov,
        }
    }

    pub fn from_covariances(w_cov: Vec<HermitianMatrix>, d_cov: Vec<HermitianMatrix>) -> Self {
        Self {
            w_comm: vec![None; w_cov.len()],
            d_sense: vec![None; d_cov.len()],
            w_cov,
            d_cov,
        }
    }

    pub fn zeros(m: usize, k: usize, q: usize) -> Self {
        Self::from_vectors(vec![CVector::zeros(m); k], vec![CVector::zeros(m); q])
    }

    pub fn k_users(&self) -> usize {
        self.w_cov.len()
    }

    pub fn q_targets(&self) -> usize {
        self.d_cov.len()
    }

    pub fn total_power(&self) -> f64 {
        self.w_cov.iter().chain(self.d_cov.iter()).map(|c| c.trace()).sum()
    }

    pub fn is_rank_one(&self) -> bool {
        self.w_comm.iter().chain(self.d_sense.iter()).all(Option::is_some)
    }

    /// Antenna count (0 when there are no beams at all).
    pub fn m_antennas(&self) -> usize {
        self.w_cov.iter().chain(self.d_cov.iter()).next().map_or(0, |c| c.dim())
    }

    pub fn sum_comm(&self) -> CMatrix {
        sum_cov(&self.w_cov, self.m_antennas())
    }

    pub fn sum_sense(&self) -> CMatrix {
        sum_cov(&self.d_cov, self.m_antennas())
    }
}

fn sum_cov(covs: &[HermitianMatrix], m: usize) -> CMatrix {
    covs.iter().fold(CMatrix::zeros(m, m), |acc, c| acc + c.as_matrix())
}

/// `G^H diag(conj(phi_r)) a_q`, the conjugate-transposed row `a_q^H Phi_r G`.
pub fn target_response(a_q: &CVector, phi_r: &CVector, g: &CMatrix) -> Result<CVector> {
    if a_q.len() != g.nrows() || phi_r.len() != g.nrows() {
        return Err(Error::invalid(format!(
            "dimension mismatch: a {} / phi {} vs G rows {}",
            a_q.len(),
            phi_r.len(),
            g.nrows()
        )));
    }
    let weighted = CVector::from_fn(a_q.len(), |n, _| phi_r[n].conj() * a_q[n]);
    Ok(g.adjoint() * weighted)
}

/// `G^H diag(conj(phi_t)) h_k`, the conjugate-transposed effective user channel.
pub fn user_response(h_k: &CVector, phi_t: &CVector, g: &CMatrix) -> Result<CVector> {
    target_response(h_k, phi_t, g)
}

/// `|a_q^H diag(phi_r) G d_q|^2`.
pub fn beam_pattern_gain(a_q: &CVector, phi_r: &CVector, g: &CMatrix, d_q: &CVector) -> Result<f64> {
    if d_q.len() != g.ncols() {
        return Err(Error::invalid(format!("d_q has length {}, G has {} columns", d_q.len(), g.ncols())));
    }
    let t = target_response(a_q, phi_r, g)?;
    Ok(t.dotc(d_q).norm_sqr())
}

/// `phi^H A_q D_q A_q^H phi` with `phi = conj(phi_r)`; equals [`beam_pattern_gain`] for `D_q = d d^H`.
pub fn beam_pattern_gain_cov(a_q: &CVector, phi_r: &CVector, g: &CMatrix, d_cov: &HermitianMatrix) -> Result<f64> {
    if d_cov.dim() != g.ncols() {
        return Err(Error::invalid("covariance dimension does not match G"));
    }
    let t = target_response(a_q, phi_r, g)?;
    Ok(quad_form(d_cov.as_matrix(), &t).max(0.0))
}

/// Interference seen in the direction of target `q`: communication leakage
/// plus the sensing beam of `q` reflected toward every other target.
pub fn sensing_interference(q: usize, bf: &BeamformerSet, phi_r: &CVector, channels: &ChannelSet) -> Result<f64> {
    let qn = channels.a_targets.len();
    if q >= qn || bf.q_targets() != qn {
        return Err(Error::invalid(format!("target index {q} out of range (Q = {qn})")));
    }
    let t_q = target_response(&channels.a_targets[q], phi_r, &channels.g)?;
    let mut total = quad_form(&bf.sum_comm(), &t_q);
    for (qp, a) in channels.a_targets.iter().enumerate() {
        if qp == q {
            continue;
        }
        let t = target_response(a, phi_r, &channels.g)?;
        total += quad_form(bf.d_cov[q].as_matrix(), &t);
    }
    Ok(total.max(0.0))
}

/// SINR of user `k` (linear scale).
pub fn user_sinr(k: usize, bf: &BeamformerSet, phi_t: &CVector, channels: &ChannelSet, sigma2: f64) -> Result<f64> {
    let kn = channels.h_users.len();
    if k >= kn || bf.k_users() != kn {
        return Err(Error::invalid(format!("user index {k} out of range (K = {kn})")));
    }
    let h = user_response(&channels.h_users[k], phi_t, &channels.g)?;
    let signal = quad_form(bf.w_cov[k].as_matrix(), &h).max(0.0);
    let mut interference = quad_form(&bf.sum_sense(), &h);
    for (j, w) in bf.w_cov.iter().enumerate() {
        if j != k {
            interference += quad_form(w.as_matrix(), &h);
        }
    }
    Ok(signal / (interference.max(0.0) + sigma2))
}

/// Result of auditing a design against every constraint of the max-min problem.
///
/// Margins are relative (`(value - bound) / bound`) for the interference,
/// SINR and power constraints and absolute for the per-element ones. A
/// positive margin is a violation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub min_gain: f64,
    pub gains: Vec<f64>,
    pub interference: Vec<f64>,
    pub sinrs: Vec<f64>,
    pub total_power: f64,
    pub energy_residuals: Vec<f64>,
    pub margins: Vec<(String, f64)>,
    pub violations: Vec<(String, f64)>,
    pub feasible: bool,
    pub tolerance: f64,
}

impl ConstraintReport {
    pub fn worst_margin(&self) -> f64 {
        self.margins.iter().map(|(_, m)| *m).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn margin(&self, id: &str) -> Option<f64> {
        self.margins.iter().find(|(n, _)| n == id).map(|(_, m)| *m)
    }
}

pub fn audit(bf: &BeamformerSet, star: &StarCoefficients, channels: &ChannelSet, cfg: &SystemConfig) -> ConstraintReport {
    audit_with_tolerance(bf, star, channels, cfg, cfg.audit_tol)
}

pub fn audit_with_tolerance(
    bf: &BeamformerSet,
    star: &StarCoefficients,
    channels: &ChannelSet,
    cfg: &SystemConfig,
    tol: f64,
) -> ConstraintReport {
    let eta = cfg.eta;
    let gamma = cfg.gamma_linear();
    let p_max = cfg.p_max_linear();
    let sigma2 = cfg.noise_linear();
    let mut margins = Vec::new();

    let gains: Vec<f64> = (0..channels.a_targets.len())
        .map(|q| {
            bf.d_cov
                .get(q)
                .and_then(|d| beam_pattern_gain_cov(&channels.a_targets[q], &star.phi_r, &channels.g, d).ok())
                .unwrap_or(f64::NAN)
        })
        .collect();

    let interference: Vec<f64> = (0..channels.a_targets.len())
        .map(|q| sensing_interference(q, bf, &star.phi_r, channels).unwrap_or(f64::NAN))
        .collect();
    for (q, f) in interference.iter().enumerate() {
        margins.push((format!("C1[{q}]"), nan_to_inf((f - eta) / eta)));
    }

    let sinrs: Vec<f64> = (0..channels.h_users.len())
        .map(|k| user_sinr(k, bf, &star.phi_t, channels, sigma2).unwrap_or(f64::NAN))
        .collect();
    for (k, s) in sinrs.iter().enumerate() {
        margins.push((format!("C2[{k}]"), nan_to_inf((gamma - s) / gamma)));
    }

    let total_power = bf.total_power();
    margins.push(("C3".to_string(), nan_to_inf((total_power - p_max) / p_max)));

    let energy_residuals = star.energy_residuals();
    for (n, r) in energy_residuals.iter().enumerate() {
        margins.push((format!("C4[{n}]"), nan_to_inf(r.abs())));
    }
    for n in 0..star.len() {
        let over = (star.phi_r[n].norm() - 1.0).max(star.phi_t[n].norm() - 1.0).max(0.0);
        margins.push((format!("C5[{n}]"), over));
    }
    for (name, covs) in [("C6", &bf.d_cov), ("C7", &bf.w_cov)] {
        for (i, c) in covs.iter().enumerate() {
            let (vals, _) = crate::numerics::hermitian_eig(c);
            let top = vals.first().copied().unwrap_or(0.0).abs();
            let low = vals.last().copied().unwrap_or(0.0);
            let m = if low >= 0.0 { 0.0 } else { -low / top.max(f64::MIN_POSITIVE) };
            margins.push((format!("{name}[{i}]"), m));
        }
    }

    let dims_ok = bf.k_users() == channels.h_users.len() && bf.q_targets() == channels.a_targets.len();
    if !dims_ok {
        margins.push(("dimensions".to_string(), f64::INFINITY));
    }

    let violations: Vec<(String, f64)> = margins.iter().filter(|(_, m)| *m > 0.0).cloned().collect();
    let feasible = margins.iter().all(|(_, m)| *m <= tol);
    let min_gain = gains.iter().copied().fold(f64::INFINITY, f64::min);

    ConstraintReport {
        min_gain: if gains.is_empty() { 0.0 } else { min_gain },
        gains,
        interference,
        sinrs,
        total_power,
        energy_residuals,
        margins,
        violations,
        feasible,
        tolerance: tol,
    }
}

fn nan_to_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}
