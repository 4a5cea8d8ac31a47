//! Experiment runner: single runs, baseline runs and parameter sweeps, all
//! written as CSV.
//!
//! Exit codes: 0 success, 1 configuration/input error, 2 infeasible
//! scenario, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use star_isac::baselines::{conventional_ris_baseline, random_phase_baseline};
use star_isac::numerics::{CVector, HermitianMatrix};
use star_isac::optimizer::{alternating_optimize, AOTrace};
use star_isac::scenario::{generate_channels, linear_to_db, load_config, rng_from_seed, SystemConfig};
use star_isac::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 1,
    Infeasible = 2,
    Numerical = 3,
}

impl ExitCode {
    pub fn of(e: &Error) -> Self {
        match e {
            Error::Config { .. } | Error::InvalidInput(_) | Error::Io(_) => ExitCode::Config,
            Error::InfeasibleScenario(_) => ExitCode::Infeasible,
            Error::DegenerateFilter | Error::RecoveryFailure { .. } | Error::Numerical(_) => ExitCode::Numerical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Proposed,
    RandomPhase,
    ConventionalRis,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::RandomPhase => "random-phase",
            Scheme::ConventionalRis => "conventional-ris",
        }
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "proposed" => Ok(Scheme::Proposed),
            "random-phase" => Ok(Scheme::RandomPhase),
            "conventional-ris" => Ok(Scheme::ConventionalRis),
            _ => Err(format!("unknown scheme `{s}` (expected proposed, random-phase or conventional-ris)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    PMaxDbm,
    GammaDb,
    NElements,
    Eta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::PMaxDbm => "p_max_dbm",
            SweepParam::GammaDb => "gamma_db",
            SweepParam::NElements => "n_elements",
            SweepParam::Eta => "eta",
        }
    }

    /// Config for one sweep value. `n_elements` keeps the configured `nx`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> star_isac::Result<SystemConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::PMaxDbm => cfg.p_max_dbm = value,
            SweepParam::GammaDb => cfg.gamma_db = value,
            SweepParam::Eta => cfg.eta = value,
            SweepParam::NElements => {
                let n = value as usize;
                if value.fract() != 0.0 || n == 0 || n % cfg.nx != 0 {
                    return Err(Error::InvalidInput(format!(
                        "n_elements value {value} is not a positive multiple of nx = {}",
                        cfg.nx
                    )));
                }
                cfg.nz = n / cfg.nx;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "p_max_dbm" => Ok(SweepParam::PMaxDbm),
            "gamma_db" => Ok(SweepParam::GammaDb),
            "n_elements" => Ok(SweepParam::NElements),
            "eta" => Ok(SweepParam::Eta),
            _ => Err(format!("unknown sweep parameter `{s}` (expected p_max_dbm, gamma_db, n_elements or eta)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub schemes: Vec<Scheme>,
}

/// Output options shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct OutputOptions {
    /// Write 0 for every wall-clock column so that files are byte-stable.
    pub no_timing: bool,
}

pub fn run_scheme(cfg: &SystemConfig, scheme: Scheme, seed: u64) -> star_isac::Result<AOTrace> {
    let mut rng = rng_from_seed(seed);
    let channels = generate_channels(cfg, &mut rng)?;
    match scheme {
        Scheme::Proposed => alternating_optimize(&channels, cfg, &mut rng),
        Scheme::RandomPhase => random_phase_baseline(&channels, cfg, &mut rng),
        Scheme::ConventionalRis => conventional_ris_baseline(&channels, cfg, &mut rng),
    }
}

fn load(path: &Path) -> Result<SystemConfig, (ExitCode, String)> {
    load_config(path).map_err(|e| (ExitCode::of(&e), e.to_string()))
}

fn io_err(e: impl std::fmt::Display) -> (ExitCode, String) {
    (ExitCode::Config, format!("output error: {e}"))
}

fn finish(r: Result<(), (ExitCode, String)>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::Success,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

/// `run`: the proposed scheme on one seed.
pub fn run_single(config: &Path, seed: u64, out: &Path, opts: OutputOptions) -> ExitCode {
    finish(single(config, Scheme::Proposed, seed, out, opts))
}

/// `baseline`: one comparison scheme on one seed; same outputs as `run`.
pub fn run_baseline(config: &Path, scheme: Scheme, seed: u64, out: &Path, opts: OutputOptions) -> ExitCode {
    finish(single(config, scheme, seed, out, opts))
}

fn single(config: &Path, scheme: Scheme, seed: u64, out: &Path, opts: OutputOptions) -> Result<(), (ExitCode, String)> {
    let cfg = load(config)?;
    let trace = run_scheme(&cfg, scheme, seed).map_err(|e| (ExitCode::of(&e), e.to_string()))?;
    for w in &trace.warnings {
        warn!("{w}");
    }
    fs::create_dir_all(out).map_err(io_err)?;
    write_convergence(&out.join("convergence.csv"), &trace, opts).map_err(io_err)?;
    write_solution(&out.join("solution.csv"), &trace).map_err(io_err)?;
    write_audit(&out.join("audit.csv"), &trace).map_err(io_err)?;
    info!("{} seed {seed}: min gain {:.6e}, feasible {}", scheme.name(), trace.min_gain(), trace.report.feasible);
    if !trace.report.feasible {
        return Err((
            ExitCode::Infeasible,
            format!("final design violates {:?}; see audit.csv", trace.report.violations),
        ));
    }
    Ok(())
}

pub fn write_convergence(path: &Path, t: &AOTrace, opts: OutputOptions) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "r_after_p31", "r_after_p51", "wall_ms"])?;
    for it in &t.iterations {
        w.write_record([
            it.index.to_string(),
            fmt_f(it.r_after_p31),
            it.r_after_p51.map(fmt_f).unwrap_or_default(),
            fmt_f(if opts.no_timing { 0.0 } else { it.wall_ms }),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_f(v: f64) -> String {
    format!("{v:.12e}")
}

/// One row per complex entry: `kind, index, entry, re, im`. Rank-one beams are
/// written as vectors (`w`, `d`); any beam that failed the rank-one test is
/// written as its full covariance (`w_cov`, `d_cov`, entry = row * M + col).
pub fn write_solution(path: &Path, t: &AOTrace) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kind", "index", "entry", "re", "im"])?;
    let mut vector = |kind: &str, idx: usize, v: &CVector| -> csv::Result<()> {
        for (e, z) in v.iter().enumerate() {
            w.write_record([kind.to_string(), idx.to_string(), e.to_string(), fmt_f(z.re), fmt_f(z.im)])?;
        }
        Ok(())
    };
    let bf = &t.beamformers;
    let mut covs: Vec<(&str, usize, &HermitianMatrix)> = Vec::new();
    for (k, v) in bf.w_comm.iter().enumerate() {
        match v {
            Some(v) => vector("w", k, v)?,
            None => covs.push(("w_cov", k, &bf.w_cov[k])),
        }
    }
    for (q, v) in bf.d_sense.iter().enumerate() {
        match v {
            Some(v) => vector("d", q, v)?,
            None => covs.push(("d_cov", q, &bf.d_cov[q])),
        }
    }
    vector("phi_r", 0, &t.star.phi_r)?;
    vector("phi_t", 0, &t.star.phi_t)?;
    for (kind, idx, c) in covs {
        let flat = CVector::from_iterator(c.dim() * c.dim(), c.as_matrix().transpose().iter().copied());
        vector(kind, idx, &flat)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format audit: `field, index, value`.
pub fn write_audit(path: &Path, t: &AOTrace) -> csv::Result<()> {
    let r = &t.report;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["field", "index", "value"])?;
    let mut put = |f: &str, i: String, v: String| w.write_record([f.to_string(), i, v]);
    put("min_gain", String::new(), fmt_f(r.min_gain))?;
    for (q, g) in r.gains.iter().enumerate() {
        put("gain", q.to_string(), fmt_f(*g))?;
    }
    for (q, f) in r.interference.iter().enumerate() {
        put("interference", q.to_string(), fmt_f(*f))?;
    }
    for (k, s) in r.sinrs.iter().enumerate() {
        put("sinr", k.to_string(), fmt_f(*s))?;
        put("sinr_db", k.to_string(), fmt_f(linear_to_db(*s)))?;
    }
    put("total_power", String::new(), fmt_f(r.total_power))?;
    for (n, e) in r.energy_residuals.iter().enumerate() {
        put("energy_residual", n.to_string(), fmt_f(*e))?;
    }
    for (id, m) in &r.margins {
        put("margin", id.clone(), fmt_f(*m))?;
    }
    put("feasible", String::new(), r.feasible.to_string())?;
    put("tolerance", String::new(), fmt_f(r.tolerance))?;
    put("rank_one", String::new(), t.beamformers.is_rank_one().to_string())?;
    w.flush()?;
    Ok(())
}

/// One sweep cell.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub seed: u64,
    pub value: f64,
    pub p_max_dbm: f64,
    pub gamma_db: f64,
    pub eta: f64,
    pub n_elements: usize,
    pub min_gain: Option<f64>,
    pub feasible: bool,
    pub iterations: usize,
    pub wall_ms: f64,
}

/// `sweep`: every (scheme, seed, value) cell, run concurrently. A failing
/// cell is recorded with `feasible = false` instead of aborting the sweep.
pub fn run_sweep(config: &Path, spec: &SweepSpec, out: &Path, opts: OutputOptions) -> ExitCode {
    finish(sweep(config, spec, out, opts))
}

fn sweep(config: &Path, spec: &SweepSpec, out: &Path, opts: OutputOptions) -> Result<(), (ExitCode, String)> {
    if spec.values.is_empty() || spec.seeds.is_empty() || spec.schemes.is_empty() {
        return Err((ExitCode::Config, "sweep needs at least one value, seed and scheme".into()));
    }
    let base = load(config)?;
    let cfgs: Vec<SystemConfig> = spec
        .values
        .iter()
        .map(|v| spec.param.apply(&base, *v))
        .collect::<star_isac::Result<_>>()
        .map_err(|e| (ExitCode::of(&e), e.to_string()))?;

    let mut cells = Vec::new();
    for &scheme in &spec.schemes {
        for &seed in &spec.seeds {
            for (vi, &value) in spec.values.iter().enumerate() {
                cells.push((scheme, seed, vi, value));
            }
        }
    }
    let rows: Vec<SummaryRow> = cells
        .par_iter()
        .map(|&(scheme, seed, vi, value)| {
            let cfg = &cfgs[vi];
            let started = Instant::now();
            let result = run_scheme(cfg, scheme, seed);
            let wall_ms = if opts.no_timing { 0.0 } else { started.elapsed().as_secs_f64() * 1e3 };
            let (min_gain, feasible, iterations) = match &result {
                Ok(t) => (Some(t.min_gain()), t.report.feasible, t.iterations.len()),
                Err(e) => {
                    warn!("{} seed {seed} {}={value}: {e}", scheme.name(), spec.param.name());
                    (None, false, 0)
                }
            };
            SummaryRow {
                scheme,
                seed,
                value,
                p_max_dbm: cfg.p_max_dbm,
                gamma_db: cfg.gamma_db,
                eta: cfg.eta,
                n_elements: cfg.n_elements(),
                min_gain,
                feasible,
                iterations,
                wall_ms,
            }
        })
        .collect();

    fs::create_dir_all(out).map_err(io_err)?;
    write_summary(&out.join("summary.csv"), &rows).map_err(io_err)?;
    for &scheme in &spec.schemes {
        let path = plot_data_path(out, spec.param, scheme);
        write_plot_data(&path, &rows, scheme, &spec.values).map_err(io_err)?;
    }
    Ok(())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scheme", "seed", "p_max_dbm", "gamma_db", "eta", "n_elements", "min_gain", "feasible", "iterations", "wall_ms",
    ])?;
    for r in rows {
        w.write_record([
            r.scheme.name().to_string(),
            r.seed.to_string(),
            r.p_max_dbm.to_string(),
            r.gamma_db.to_string(),
            r.eta.to_string(),
            r.n_elements.to_string(),
            r.min_gain.map(fmt_f).unwrap_or_default(),
            r.feasible.to_string(),
            r.iterations.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn plot_data_path(out: &Path, param: SweepParam, scheme: Scheme) -> PathBuf {
    out.join(format!("plot_{}_{}.dat", param.name(), scheme.name()))
}

/// Two columns, `value mean_min_gain`, whitespace separated. Cells without a
/// feasible design count as zero gain.
pub fn write_plot_data(path: &Path, rows: &[SummaryRow], scheme: Scheme, values: &[f64]) -> std::io::Result<()> {
    let mut text = String::from("# value mean_min_gain\n");
    for &v in values {
        let cell: Vec<f64> = rows
            .iter()
            .filter(|r| r.scheme == scheme && r.value == v)
            .map(|r| if r.feasible { r.min_gain.unwrap_or(0.0) } else { 0.0 })
            .collect();
        let mean = cell.iter().sum::<f64>() / cell.len().max(1) as f64;
        text.push_str(&format!("{v} {}\n", fmt_f(mean)));
    }
    fs::write(path, text)
}

/// Parses a comma-separated list.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

/// Seeds as a list (`0,1,2`) or a half-open range (`0..5`).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("`{a}`: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("`{b}`: {e}"))?;
        return Ok((a..b).collect());
    }
    parse_list(s)
}
