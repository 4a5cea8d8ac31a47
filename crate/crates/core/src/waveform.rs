//! Signature-sequence transmission, echo simulation, matched filtering,
//! despreading and detection.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::{target_response, BeamformerSet};
use crate::numerics::{c64, CMatrix, CVector, C64};
use crate::scenario::{complex_gaussian, path_gain, ChannelSet, StarCoefficients, SystemConfig};

/// Orthogonal unit-modulus codes, one per target.
#[derive(Debug, Clone, PartialEq)]
pub struct SSCodebook {
    pub l_pulses: usize,
    pub codes: Vec<CVector>,
}

impl SSCodebook {
    /// `Q x Q` Gram matrix `c_q^H c_q'`.
    pub fn gram(&self) -> CMatrix {
        let q = self.codes.len();
        CMatrix::from_fn(q, q, |i, j| self.codes[i].dotc(&self.codes[j]))
    }
}

/// DFT family `c_q[l] = exp(j 2 pi q l / L_p)` (0-based `q`, `l`).
pub fn make_codebook(q_targets: usize, l_pulses: usize) -> Result<SSCodebook> {
    if l_pulses < q_targets {
        return Err(Error::invalid(format!("L_p = {l_pulses} is smaller than Q = {q_targets}")));
    }
    let codes = (0..q_targets)
        .map(|q| {
            CVector::from_fn(l_pulses, |l, _| {
                // reduce the exponent first so that e.g. q*l/L_p = 1/4 gives j exactly
                let k = (q * l) % l_pulses;
                exact_root(k, l_pulses)
            })
        })
        .collect();
    Ok(SSCodebook { l_pulses, codes })
}

/// `exp(j 2 pi k / n)` with exact values on the axes.
fn exact_root(k: usize, n: usize) -> C64 {
    if (4 * k) % n == 0 {
        match (4 * k) / n {
            0 => return c64(1.0, 0.0),
            1 => return c64(0.0, 1.0),
            2 => return c64(-1.0, 0.0),
            3 => return c64(0.0, -1.0),
            _ => {}
        }
    }
    C64::from_polar(1.0, 2.0 * PI * k as f64 / n as f64)
}

fn beam_vectors(covs_vecs: &[Option<CVector>], what: &str) -> Result<Vec<CVector>> {
    covs_vecs
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.clone()
                .ok_or_else(|| Error::invalid(format!("{what} {i} is not rank one; no beam vector available")))
        })
        .collect()
}

/// Columns `x[l] = sum_k w_k s_k[l] + sum_q d_q c_q[l]`.
pub fn synthesize_transmit(bf: &BeamformerSet, symbols: &CMatrix, codebook: &SSCodebook) -> Result<CMatrix> {
    let w = beam_vectors(&bf.w_comm, "communication beam")?;
    let d = beam_vectors(&bf.d_sense, "sensing beam")?;
    let lp = codebook.l_pulses;
    if symbols.nrows() != w.len() || symbols.ncols() != lp {
        return Err(Error::invalid(format!(
            "symbols are {}x{}, expected {}x{lp}",
            symbols.nrows(),
            symbols.ncols(),
            w.len()
        )));
    }
    if codebook.codes.len() != d.len() {
        return Err(Error::invalid("codebook size does not match the number of sensing beams"));
    }
    let m = w.first().or(d.first()).map_or(0, |v| v.len());
    if w.iter().chain(d.iter()).any(|v| v.len() != m) {
        return Err(Error::invalid("beam vectors have inconsistent lengths"));
    }
    let mut x = CMatrix::zeros(m, lp);
    for l in 0..lp {
        let mut col = CVector::zeros(m);
        for (k, wk) in w.iter().enumerate() {
            col += wk * symbols[(k, l)];
        }
        for (q, dq) in d.iter().enumerate() {
            col += dq * codebook.codes[q][l];
        }
        x.set_column(l, &col);
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoRecord {
    /// `M x (L_p + max delay)`.
    pub samples: CMatrix,
    pub delays: Vec<usize>,
    pub target_gains: Vec<C64>,
}

/// Round-trip channel of target `q`: `beta_q t_q t_q^H` with `t_q` the target response.
pub fn target_chain(q: usize, star: &StarCoefficients, channels: &ChannelSet, beta: C64) -> Result<CMatrix> {
    let a = channels
        .a_targets
        .get(q)
        .ok_or_else(|| Error::invalid(format!("target index {q} out of range")))?;
    let t = target_response(a, &star.phi_r, &channels.g)?;
    Ok(&t * t.adjoint() * beta)
}

/// `y[l] = sum_q chain_q x[l - tau_q] + n[l]`.
pub fn simulate_echo(
    x: &CMatrix,
    star: &StarCoefficients,
    channels: &ChannelSet,
    gains: &[C64],
    delays: &[usize],
    sigma_z2: f64,
    rng: &mut impl Rng,
) -> Result<EchoRecord> {
    let q = channels.a_targets.len();
    if gains.len() != q || delays.len() != q {
        return Err(Error::invalid(format!("expected {q} target gains and delays")));
    }
    if x.nrows() != channels.m_antennas() {
        return Err(Error::invalid("transmit matrix rows do not match the antenna count"));
    }
    if !(sigma_z2 >= 0.0) {
        return Err(Error::invalid("noise variance must be nonnegative"));
    }
    let m = x.nrows();
    let lp = x.ncols();
    let len = lp + delays.iter().copied().max().unwrap_or(0);
    let mut y = CMatrix::zeros(m, len);
    for i in 0..q {
        let chain = target_chain(i, star, channels, gains[i])?;
        let echo = &chain * x;
        let mut view = y.columns_mut(delays[i], lp);
        view += echo;
    }
    if sigma_z2 > 0.0 {
        let s = sigma_z2.sqrt();
        for v in y.iter_mut() {
            *v += complex_gaussian(rng) * s;
        }
    }
    Ok(EchoRecord {
        samples: y,
        delays: delays.to_vec(),
        target_gains: gains.to_vec(),
    })
}

/// Unit-norm filter aligned with `chain_q d_q`.
pub fn matched_filter(q: usize, star: &StarCoefficients, channels: &ChannelSet, d_q: &CVector, beta_q: C64) -> Result<CVector> {
    let chain = target_chain(q, star, channels, beta_q)?;
    if d_q.len() != chain.ncols() {
        return Err(Error::invalid("sensing beam length does not match the antenna count"));
    }
    let v = chain * d_q;
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::DegenerateFilter);
    }
    Ok(v / c64(n, 0.0))
}

/// `z_q = sum_l conj(c_q[l]) u_q^H y[l + tau_q]`.
pub fn despread(q: usize, echo: &EchoRecord, u_q: &CVector, codebook: &SSCodebook) -> Result<C64> {
    let code = codebook
        .codes
        .get(q)
        .ok_or_else(|| Error::invalid(format!("no code for target {q}")))?;
    let tau = *echo
        .delays
        .get(q)
        .ok_or_else(|| Error::invalid(format!("no delay for target {q}")))?;
    let lp = codebook.l_pulses;
    if tau + lp > echo.samples.ncols() {
        return Err(Error::invalid(format!(
            "window [{tau}, {}) exceeds the record length {}",
            tau + lp,
            echo.samples.ncols()
        )));
    }
    if u_q.len() != echo.samples.nrows() {
        return Err(Error::invalid("filter length does not match the antenna count"));
    }
    let mut z = C64::new(0.0, 0.0);
    for l in 0..lp {
        let filtered = u_q.dotc(&echo.samples.column(tau + l));
        z += code[l].conj() * filtered;
    }
    Ok(z)
}

/// Declares the target present iff `|z|^2 > mu`.
pub fn detect(z: C64, mu: f64) -> Result<bool> {
    if !(mu >= 0.0) {
        return Err(Error::invalid("detection threshold must be nonnegative"));
    }
    Ok(z.norm_sqr() > mu)
}

/// Threshold with false-alarm probability `p_fa` for noise-only despreader
/// output: `|z|^2` is exponential with mean `L_p sigma^2` for a unit-norm filter.
pub fn analytic_threshold(p_fa: f64, l_pulses: usize, sigma_z2: f64) -> Result<f64> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::invalid("false-alarm probability must lie in (0, 1)"));
    }
    Ok(-(l_pulses as f64) * sigma_z2 * p_fa.ln())
}

/// Empirical threshold: the `(1 - p_fa)` quantile of noise-only detector statistics.
pub fn calibrate_threshold(noise_stats: &[f64], p_fa: f64) -> Result<f64> {
    if noise_stats.is_empty() {
        return Err(Error::invalid("no calibration samples"));
    }
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::invalid("false-alarm probability must lie in (0, 1)"));
    }
    let mut v = noise_stats.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = (((1.0 - p_fa) * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Ok(v[idx])
}

/// Noise-only `|z_q|^2` samples for a given filter.
pub fn noise_only_statistics(
    trials: usize,
    u_q: &CVector,
    codebook: &SSCodebook,
    q: usize,
    sigma_z2: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let m = u_q.len();
    let lp = codebook.l_pulses;
    (0..trials)
        .map(|_| {
            let s = sigma_z2.sqrt();
            let samples = CMatrix::from_fn(m, lp, |_, _| complex_gaussian(rng) * s);
            let echo = EchoRecord {
                samples,
                delays: vec![0; codebook.codes.len()],
                target_gains: vec![C64::new(0.0, 0.0); codebook.codes.len()],
            };
            despread(q, &echo, u_q, codebook).map(|z| z.norm_sqr())
        })
        .collect()
}

/// Default reflection factors: magnitude `L0 d^-tau` (the round-trip product of
/// two one-way amplitudes at `target_range_m`) times a uniform random phase.
pub fn default_target_gains(cfg: &SystemConfig, rng: &mut impl Rng) -> Vec<C64> {
    let mag = path_gain(cfg.pathloss_l0_linear(), cfg.target_range_m, cfg.pathloss_exp_ru);
    (0..cfg.q_targets)
        .map(|_| C64::from_polar(mag, 2.0 * PI * rng.random::<f64>()))
        .collect()
}

/// `alpha_{q,i} = u_q^H chain_i d_i`.
pub fn alpha(
    q: usize,
    i: usize,
    u_q: &CVector,
    star: &StarCoefficients,
    channels: &ChannelSet,
    gains: &[C64],
    d_i: &CVector,
) -> Result<C64> {
    let _ = q;
    let chain = target_chain(i, star, channels, gains[i])?;
    Ok(u_q.dotc(&(chain * d_i)))
}

/// Noiseless despreader output split into its parts for equal delays and a
/// sensing-only transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DespreadParts {
    /// `alpha_{q,q} L_p`.
    pub own: C64,
    /// `sum_{i != q} alpha_{q,i} c_q^H c_i`; zero for orthogonal codes.
    pub code_leakage: C64,
    /// `L_p sum_{i != q} u_q^H chain_i d_q`: beam `q` echoed by the other targets.
    pub beam_leakage: C64,
}

impl DespreadParts {
    pub fn total(&self) -> C64 {
        self.own + self.code_leakage + self.beam_leakage
    }
}

pub fn despread_decomposition(
    q: usize,
    u_q: &CVector,
    star: &StarCoefficients,
    channels: &ChannelSet,
    gains: &[C64],
    d: &[CVector],
    codebook: &SSCodebook,
) -> Result<DespreadParts> {
    let lp = codebook.l_pulses as f64;
    let gram = codebook.gram();
    let own = alpha(q, q, u_q, star, channels, gains, &d[q])? * lp;
    let mut code_leakage = C64::new(0.0, 0.0);
    let mut beam_leakage = C64::new(0.0, 0.0);
    for i in 0..d.len() {
        if i == q {
            continue;
        }
        code_leakage += alpha(q, i, u_q, star, channels, gains, &d[i])? * gram[(q, i)];
        let chain = target_chain(i, star, channels, gains[i])?;
        beam_leakage += u_q.dotc(&(chain * &d[q])) * lp;
    }
    Ok(DespreadParts {
        own,
        code_leakage,
        beam_leakage,
    })
}
