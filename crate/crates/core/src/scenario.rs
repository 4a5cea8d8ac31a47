//! Physical scenario: configuration, geometry, Rician channels and array steering vectors.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{c64, CMatrix, CVector, C64};

/// Seeded generator used throughout the crate.
pub type ScenarioRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ScenarioRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Schema version accepted by [`load_config`].
pub const CONFIG_SCHEMA_VERSION: i64 = 1;

const DEFAULT_DOAS_DEG: [(f64, f64); 3] = [(120.0, 30.0), (60.0, 60.0), (30.0, 75.0)];

/// Every scenario and algorithm parameter.
///
/// Values are kept in the units used at the file boundary (dBm, dB, degrees,
/// meters); the `*_linear` accessors give the linear-scale quantities used by
/// the math. Linear powers are in milliwatts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    pub m_antennas: usize,
    pub nx: usize,
    pub nz: usize,
    pub k_users: usize,
    pub q_targets: usize,
    pub p_max_dbm: f64,
    pub gamma_db: f64,
    pub eta: f64,
    pub noise_dbm: f64,
    /// (azimuth, elevation) in degrees, one per target.
    pub target_doas: Vec<(f64, f64)>,
    pub bs_position: [f64; 3],
    pub ris_position: [f64; 3],
    /// Unit axis of the DFBS uniform linear array.
    pub bs_ula_axis: [f64; 3],
    pub user_distance_range: (f64, f64),
    pub target_range_m: f64,
    pub rician_kappa: f64,
    pub pathloss_l0_db: f64,
    pub pathloss_exp_br: f64,
    pub pathloss_exp_ru: f64,
    pub l_pulses: usize,
    pub seed: u64,
    pub gamma_max_iters: usize,
    pub delta_th: f64,
    pub randomization_count: usize,
    pub rank_one_ratio: f64,
    pub solver_tol: f64,
    pub solver_max_iters: usize,
    pub audit_tol: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m_antennas: 6,
            nx: 8,
            nz: 5,
            k_users: 2,
            q_targets: 3,
            p_max_dbm: 10.0,
            gamma_db: 6.0,
            eta: 1e-3,
            noise_dbm: -110.0,
            target_doas: DEFAULT_DOAS_DEG.to_vec(),
            bs_position: [20.0, 30.0, 0.0],
            ris_position: [0.0, 0.0, 0.0],
            bs_ula_axis: [1.0, 0.0, 0.0],
            user_distance_range: (30.0, 50.0),
            target_range_m: 20.0,
            rician_kappa: 1.0,
            pathloss_l0_db: 30.0,
            pathloss_exp_br: 1.0,
            pathloss_exp_ru: 1.0,
            l_pulses: 8,
            seed: 0,
            gamma_max_iters: 30,
            delta_th: 1e-3,
            randomization_count: 500,
            rank_one_ratio: 1e-4,
            solver_tol: 1e-7,
            solver_max_iters: 100,
            audit_tol: 1e-5,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

impl SystemConfig {
    /// The reduced scenario used for quick runs and the acceptance suite:
    /// M = 4, a 4 x 2 surface, two users, the first two default targets, L_p = 8.
    pub fn desk_scale() -> Self {
        Self {
            m_antennas: 4,
            nx: 4,
            nz: 2,
            k_users: 2,
            q_targets: 2,
            target_doas: DEFAULT_DOAS_DEG[..2].to_vec(),
            l_pulses: 8,
            ..Self::default()
        }
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.nz
    }

    pub fn p_max_linear(&self) -> f64 {
        db_to_linear(self.p_max_dbm)
    }

    pub fn gamma_linear(&self) -> f64 {
        db_to_linear(self.gamma_db)
    }

    pub fn noise_linear(&self) -> f64 {
        db_to_linear(self.noise_dbm)
    }

    /// Reference path gain at 1 m (`L0` as a power ratio below 1).
    pub fn pathloss_l0_linear(&self) -> f64 {
        db_to_linear(-self.pathloss_l0_db)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m_antennas", self.m_antennas),
            ("nx", self.nx),
            ("nz", self.nz),
            ("k_users", self.k_users),
            ("q_targets", self.q_targets),
            ("l_pulses", self.l_pulses),
            ("gamma_max_iters", self.gamma_max_iters),
            ("solver_max_iters", self.solver_max_iters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.l_pulses < self.q_targets {
            return Err(Error::config(
                "l_pulses",
                format!("L_p = {} is smaller than Q = {}; no orthogonal codebook exists", self.l_pulses, self.q_targets),
            ));
        }
        let finite_positive = [
            ("eta", self.eta),
            ("delta_th", self.delta_th),
            ("solver_tol", self.solver_tol),
            ("audit_tol", self.audit_tol),
            ("target_range_m", self.target_range_m),
            ("rank_one_ratio", self.rank_one_ratio),
        ];
        for (name, v) in finite_positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be finite and > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("p_max_dbm", self.p_max_dbm),
            ("gamma_db", self.gamma_db),
            ("noise_dbm", self.noise_dbm),
            ("pathloss_l0_db", self.pathloss_l0_db),
            ("pathloss_exp_br", self.pathloss_exp_br),
            ("pathloss_exp_ru", self.pathloss_exp_ru),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        if !(self.rician_kappa >= 0.0) {
            return Err(Error::config("rician_kappa", "must be >= 0"));
        }
        let (dmin, dmax) = self.user_distance_range;
        if !(dmin > 0.0 && dmax >= dmin && dmax.is_finite()) {
            return Err(Error::config("user_distance_range", format!("need 0 < min <= max, got ({dmin}, {dmax})")));
        }
        if self.target_doas.len() != self.q_targets {
            return Err(Error::config(
                "target_doas",
                format!("expected {} entries (q_targets), got {}", self.q_targets, self.target_doas.len()),
            ));
        }
        for (i, &(az, el)) in self.target_doas.iter().enumerate() {
            if !(0.0..=180.0).contains(&az) {
                return Err(Error::config("target_doas", format!("target {i}: azimuth {az} outside [0, 180] degrees")));
            }
            if !(0.0..=90.0).contains(&el) {
                return Err(Error::config("target_doas", format!("target {i}: elevation {el} outside [0, 90] degrees")));
            }
        }
        let axis_norm = norm3(&self.bs_ula_axis);
        if !(axis_norm > 0.0) {
            return Err(Error::config("bs_ula_axis", "must be a nonzero vector"));
        }
        if norm3(&sub3(&self.bs_position, &self.ris_position)) == 0.0 {
            return Err(Error::config("bs_position", "coincides with ris_position"));
        }
        Ok(())
    }
}

/// Reads a TOML scenario file. Every key is optional except `schema_version`;
/// missing keys take their [`SystemConfig::default`] values.
pub fn load_config(path: impl AsRef<Path>) -> Result<SystemConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<SystemConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;

    match table.get("schema_version") {
        None => return Err(Error::config("schema_version", "missing required field")),
        Some(v) => match v.as_integer() {
            Some(CONFIG_SCHEMA_VERSION) => {}
            Some(other) => {
                return Err(Error::config("schema_version", format!("unsupported version {other}")));
            }
            None => return Err(Error::config("schema_version", "expected an integer")),
        },
    }

    let mut cfg = SystemConfig::default();
    let mut doas_given = false;

    fn take<T: serde::de::DeserializeOwned>(key: &str, v: &toml::Value) -> Result<T> {
        v.clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))
    }

    for (key, value) in &table {
        let k = key.as_str();
        match k {
            "schema_version" => {}
            "m_antennas" => cfg.m_antennas = take(k, value)?,
            "nx" => cfg.nx = take(k, value)?,
            "nz" => cfg.nz = take(k, value)?,
            "k_users" => cfg.k_users = take(k, value)?,
            "q_targets" => cfg.q_targets = take(k, value)?,
            "p_max_dbm" => cfg.p_max_dbm = take(k, value)?,
            "gamma_db" => cfg.gamma_db = take(k, value)?,
            "eta" => cfg.eta = take(k, value)?,
            "noise_dbm" => cfg.noise_dbm = take(k, value)?,
            "target_doas" => {
                let pairs: Vec<[f64; 2]> = take(k, value)?;
                cfg.target_doas = pairs.into_iter().map(|[a, e]| (a, e)).collect();
                doas_given = true;
            }
            "bs_position" => cfg.bs_position = take(k, value)?,
            "ris_position" => cfg.ris_position = take(k, value)?,
            "bs_ula_axis" => cfg.bs_ula_axis = take(k, value)?,
            "user_distance_range" => {
                let [a, b]: [f64; 2] = take(k, value)?;
                cfg.user_distance_range = (a, b);
            }
            "target_range_m" => cfg.target_range_m = take(k, value)?,
            "rician_kappa" => cfg.rician_kappa = take(k, value)?,
            "pathloss_l0_db" => cfg.pathloss_l0_db = take(k, value)?,
            "pathloss_exp_br" => cfg.pathloss_exp_br = take(k, value)?,
            "pathloss_exp_ru" => cfg.pathloss_exp_ru = take(k, value)?,
            "l_pulses" => cfg.l_pulses = take(k, value)?,
            "seed" => cfg.seed = take(k, value)?,
            "gamma_max_iters" => cfg.gamma_max_iters = take(k, value)?,
            "delta_th" => cfg.delta_th = take(k, value)?,
            "randomization_count" => cfg.randomization_count = take(k, value)?,
            "rank_one_ratio" => cfg.rank_one_ratio = take(k, value)?,
            "solver_tol" => cfg.solver_tol = take(k, value)?,
            "solver_max_iters" => cfg.solver_max_iters = take(k, value)?,
            "audit_tol" => cfg.audit_tol = take(k, value)?,
            other => return Err(Error::config(other, "unknown field")),
        }
    }

    if !doas_given {
        if cfg.q_targets > DEFAULT_DOAS_DEG.len() {
            return Err(Error::config(
                "target_doas",
                format!("required when q_targets > {}", DEFAULT_DOAS_DEG.len()),
            ));
        }
        cfg.target_doas = DEFAULT_DOAS_DEG[..cfg.q_targets].to_vec();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reflection and transmission coefficients of the surface.
///
/// Entry `n` of `phi_r` / `phi_t` is `beta * exp(j * phase)` for element `n`;
/// these are the diagonals of the reflection and transmission matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StarCoefficients {
    pub phi_r: CVector,
    pub phi_t: CVector,
}

impl StarCoefficients {
    pub fn new(phi_r: CVector, phi_t: CVector) -> Result<Self> {
        if phi_r.len() != phi_t.len() || phi_r.is_empty() {
            return Err(Error::invalid("phi_r and phi_t must be nonempty and of equal length"));
        }
        let s = Self { phi_r, phi_t };
        let worst = s.energy_residuals().iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if worst > 1e-6 {
            return Err(Error::invalid(format!("energy coupling violated by {worst:.3e}")));
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.phi_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_r.is_empty()
    }

    /// Equal energy split with i.i.d. uniform phases.
    pub fn random_split(n: usize, rng: &mut impl Rng) -> Self {
        let amp = std::f64::consts::FRAC_1_SQRT_2;
        let mut phase = || C64::from_polar(amp, rng.random::<f64>() * 2.0 * PI);
        let phi_r = CVector::from_fn(n, |_, _| phase());
        let phi_t = CVector::from_fn(n, |_, _| phase());
        Self { phi_r, phi_t }
    }

    /// Amplitude masks of two side-by-side conventional surfaces: the first
    /// `n / 2` elements reflect only, the rest transmit only. Phases are i.i.d. uniform.
    pub fn conventional_split(n: usize, rng: &mut impl Rng) -> Result<Self> {
        if n % 2 != 0 {
            return Err(Error::invalid(format!("conventional RIS split needs an even N, got {n}")));
        }
        let mut phase = |on: bool| {
            let theta = rng.random::<f64>() * 2.0 * PI;
            if on {
                C64::from_polar(1.0, theta)
            } else {
                C64::default()
            }
        };
        let phi_r = CVector::from_fn(n, |i, _| phase(i < n / 2));
        let phi_t = CVector::from_fn(n, |i, _| phase(i >= n / 2));
        Ok(Self { phi_r, phi_t })
    }

    /// `|phi_r[n]|^2 + |phi_t[n]|^2 - 1` per element.
    pub fn energy_residuals(&self) -> Vec<f64> {
        self.phi_r
            .iter()
            .zip(self.phi_t.iter())
            .map(|(r, t)| r.norm_sqr() + t.norm_sqr() - 1.0)
            .collect()
    }

    /// Rescales each element's amplitude pair onto `beta_r^2 + beta_t^2 = 1`, keeping phases.
    /// An all-zero pair becomes an equal split with zero phase.
    pub fn project_energy(mut self) -> Self {
        for n in 0..self.len() {
            let p = (self.phi_r[n].norm_sqr() + self.phi_t[n].norm_sqr()).sqrt();
            if p > 1e-300 {
                self.phi_r[n] /= c64(p, 0.0);
                self.phi_t[n] /= c64(p, 0.0);
            } else {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                self.phi_r[n] = c64(h, 0.0);
                self.phi_t[n] = c64(h, 0.0);
            }
        }
        self
    }
}

/// All channels of one scenario realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// DFBS to surface, N x M.
    pub g: CMatrix,
    /// Surface to user k, length N each.
    pub h_users: Vec<CVector>,
    /// Surface steering vector toward target q, length N each.
    pub a_targets: Vec<CVector>,
    pub user_positions: Vec<[f64; 3]>,
}

impl ChannelSet {
    pub fn n_elements(&self) -> usize {
        self.g.nrows()
    }

    pub fn m_antennas(&self) -> usize {
        self.g.ncols()
    }

    /// `diag(a_q^H) G`, the per-target cascaded channel.
    pub fn target_cascade(&self, q: usize) -> CMatrix {
        cascade(&self.a_targets[q], &self.g)
    }

    /// `diag(h_k^H) G`, the per-user cascaded channel.
    pub fn user_cascade(&self, k: usize) -> CMatrix {
        cascade(&self.h_users[k], &self.g)
    }
}

/// `diag(v^H) G`.
pub fn cascade(v: &CVector, g: &CMatrix) -> CMatrix {
    let mut out = g.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= v[i].conj();
    }
    out
}

/// Surface steering vector for a uniform planar array in the (X, Z) plane
/// with half-wavelength spacing. Element `(p, s)` sits at index `p * nz + s`.
pub fn steering_vector(azimuth: f64, elevation: f64, nx: usize, nz: usize) -> CVector {
    let ux = azimuth.cos() * elevation.cos();
    let uz = elevation.sin();
    CVector::from_fn(nx * nz, |n, _| {
        let p = (n / nz) as f64;
        let s = (n % nz) as f64;
        C64::from_polar(1.0, -PI * (p * ux + s * uz))
    })
}

/// Half-wavelength ULA steering vector along `axis` toward unit direction `dir`.
pub fn ula_steering(m: usize, axis: &[f64; 3], dir: &[f64; 3]) -> CVector {
    let an = norm3(axis);
    let cos_theta = dot3(axis, dir) / an;
    CVector::from_fn(m, |i, _| C64::from_polar(1.0, -PI * i as f64 * cos_theta))
}

/// Azimuth and elevation (radians) of `to` seen from `from`.
pub fn direction_angles(from: &[f64; 3], to: &[f64; 3]) -> Result<(f64, f64)> {
    let v = sub3(to, from);
    let d = norm3(&v);
    if d == 0.0 {
        return Err(Error::invalid("zero distance between points"));
    }
    let el = (v[2] / d).clamp(-1.0, 1.0).asin();
    let az = v[1].atan2(v[0]);
    Ok((az, el))
}

/// Rician mixing weights `(sqrt(kappa/(kappa+1)), sqrt(1/(kappa+1)))`.
pub fn rician_weights(kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        return (1.0, 0.0);
    }
    ((kappa / (kappa + 1.0)).sqrt(), (1.0 / (kappa + 1.0)).sqrt())
}

pub fn path_gain(l0_linear: f64, distance: f64, exponent: f64) -> f64 {
    l0_linear * distance.powf(-exponent)
}

pub fn complex_gaussian(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn target_steering(cfg: &SystemConfig) -> Vec<CVector> {
    cfg.target_doas
        .iter()
        .map(|&(az, el)| steering_vector(az.to_radians(), el.to_radians(), cfg.nx, cfg.nz))
        .collect()
}

/// Draws one channel realisation.
///
/// The LoS part of `G` is the outer product of the surface steering vector
/// toward the DFBS and the DFBS array response toward the surface. Users sit
/// on the transmission side (`y < 0` relative to the surface) at a uniform
/// distance in `user_distance_range` and a uniform azimuth.
pub fn generate_channels(cfg: &SystemConfig, rng: &mut impl Rng) -> Result<ChannelSet> {
    cfg.validate()?;
    let n = cfg.n_elements();
    let m = cfg.m_antennas;
    let (w_los, w_nlos) = rician_weights(cfg.rician_kappa);
    let l0 = cfg.pathloss_l0_linear();

    let d_br = norm3(&sub3(&cfg.bs_position, &cfg.ris_position));
    if d_br == 0.0 {
        return Err(Error::invalid("DFBS and surface positions coincide"));
    }
    let (az_bs, el_bs) = direction_angles(&cfg.ris_position, &cfg.bs_position)?;
    let a_ris = steering_vector(az_bs, el_bs, cfg.nx, cfg.nz);
    let to_ris = scale3(&sub3(&cfg.ris_position, &cfg.bs_position), 1.0 / d_br);
    let a_bs = ula_steering(m, &cfg.bs_ula_axis, &to_ris);
    let g_los = &a_ris * a_bs.adjoint();
    let g_amp = path_gain(l0, d_br, cfg.pathloss_exp_br).sqrt();
    let g = CMatrix::from_fn(n, m, |i, j| {
        let nlos = complex_gaussian(rng);
        (g_los[(i, j)] * w_los + nlos * w_nlos) * g_amp
    });

    let (dmin, dmax) = cfg.user_distance_range;
    let mut h_users = Vec::with_capacity(cfg.k_users);
    let mut user_positions = Vec::with_capacity(cfg.k_users);
    for _ in 0..cfg.k_users {
        let d = dmin + (dmax - dmin) * rng.random::<f64>();
        // transmission half-space: azimuth in (pi, 2 pi)
        let az = PI + PI * rng.random::<f64>();
        let pos = [
            cfg.ris_position[0] + d * az.cos(),
            cfg.ris_position[1] + d * az.sin(),
            cfg.ris_position[2],
        ];
        let (az_u, el_u) = direction_angles(&cfg.ris_position, &pos)?;
        let los = steering_vector(az_u, el_u, cfg.nx, cfg.nz);
        let amp = path_gain(l0, d, cfg.pathloss_exp_ru).sqrt();
        let h = CVector::from_fn(n, |i, _| (los[i] * w_los + complex_gaussian(rng) * w_nlos) * amp);
        h_users.push(h);
        user_positions.push(pos);
    }

    Ok(ChannelSet {
        g,
        h_users,
        a_targets: target_steering(cfg),
        user_positions,
    })
}

pub(crate) fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: &[f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

fn scale3(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
