//! Comparison schemes: fixed random surface phases, and two side-by-side
//! conventional (reflect-only / transmit-only) surfaces.

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::{audit_with_tolerance, BeamformerSet};
use crate::optimizer::{
    alternating_optimize_from, build_p31, rank_ratio, recover_beamformers, AOIteration, AOTrace, AmplitudeMode,
};
use crate::scenario::{ChannelSet, StarCoefficients, SystemConfig};
use crate::sdp::{solve, SolveStatus};

/// Random energy-split coefficients (drawn exactly as the proposed scheme
/// initializes them) and a single beamforming solve.
pub fn random_phase_baseline(channels: &ChannelSet, cfg: &SystemConfig, rng: &mut impl Rng) -> Result<AOTrace> {
    let star = StarCoefficients::random_split(channels.n_elements(), rng);
    fixed_surface(channels, cfg, star)
}

/// Beamforming only, for fixed surface coefficients.
pub fn fixed_surface(channels: &ChannelSet, cfg: &SystemConfig, star: StarCoefficients) -> Result<AOTrace> {
    let started = std::time::Instant::now();
    let p = build_p31(channels, &star, cfg);
    let sol = solve(&p, cfg.solver_tol, cfg.solver_max_iters)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => {
            return Err(Error::InfeasibleScenario(format!(
                "beamforming problem for the fixed surface has no feasible point ({}); suggested: lower gamma_db or raise eta / p_max_dbm",
                sol.diagnostics
            )))
        }
        s => return Err(Error::Numerical(format!("beamforming solve ended with {s:?}: {}", sol.diagnostics))),
    }
    let kn = channels.h_users.len();
    let bf: BeamformerSet = recover_beamformers(&sol, kn, cfg.rank_one_ratio)?;
    let report = audit_with_tolerance(&bf, &star, channels, cfg, cfg.audit_tol);
    Ok(AOTrace {
        iterations: vec![AOIteration {
            index: 1,
            r_after_p31: sol.scalar_values[0],
            r_after_p51: None,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            p31_status: sol.status,
            p51_status: None,
        }],
        beamformers: bf,
        star,
        report,
        relaxed_bound: None,
        converged: true,
        rank_ratios: sol.block_values.iter().map(rank_ratio).collect(),
        recovery: None,
        used_initial_fallback: false,
        warnings: Vec::new(),
    })
}

/// First `N/2` elements reflect only, the rest transmit only; phases are
/// optimized by the same alternating loop with the amplitudes held fixed.
pub fn conventional_ris_baseline(channels: &ChannelSet, cfg: &SystemConfig, rng: &mut impl Rng) -> Result<AOTrace> {
    let n = channels.n_elements();
    let mode = AmplitudeMode::conventional(n)?;
    let init = StarCoefficients::conventional_split(n, rng)?;
    alternating_optimize_from(channels, cfg, init, &mode, rng)
}
