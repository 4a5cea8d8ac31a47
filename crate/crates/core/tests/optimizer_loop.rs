use star_isac::baselines::*;
use star_isac::metrics::BeamformerSet;
use star_isac::numerics::hermitian_deviation;
use star_isac::optimizer::*;
use star_isac::scenario::*;
use star_isac::sdp::{solve, ConicProblem, SolveStatus};
use star_isac::Error;

fn desk(seed: u64) -> (SystemConfig, ChannelSet, ScenarioRng) {
    let cfg = SystemConfig::desk_scale();
    let mut rng = rng_from_seed(seed);
    let ch = generate_channels(&cfg, &mut rng).unwrap();
    (cfg, ch, rng)
}

fn assert_hermitian_coefficients(p: &ConicProblem) {
    for c in &p.constraints {
        for (_, m) in &c.block_terms {
            assert!(hermitian_deviation(m) < 1e-12, "{} not Hermitian", c.label);
        }
    }
}

fn relaxed_beams(s31: &star_isac::sdp::ConicSolution, k: usize) -> BeamformerSet {
    let mut b = s31.block_values.clone();
    let d = b.split_off(k);
    BeamformerSet::from_covariances(b, d)
}

#[test]
fn single_iteration_cap() {
    let (mut cfg, ch, mut rng) = desk(0);
    cfg.gamma_max_iters = 1;
    let t = alternating_optimize(&ch, &cfg, &mut rng).unwrap();
    assert_eq!(t.iterations.len(), 1);
    let it = &t.iterations[0];
    assert_eq!(it.p31_status, SolveStatus::Optimal);
    assert_eq!(it.p51_status, Some(SolveStatus::Optimal));
    assert!(it.r_after_p51.is_some());
}

#[test]
fn deterministic_under_seed() {
    let run = || {
        let (cfg, ch, mut rng) = desk(4);
        alternating_optimize(&ch, &cfg, &mut rng).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.r_sequence(), b.r_sequence());
    assert_eq!(a.star, b.star);
    assert_eq!(a.report, b.report);
}

#[test]
fn trace_monotone_and_final_feasible() {
    for seed in 0..3 {
        let (cfg, ch, mut rng) = desk(seed);
        let t = alternating_optimize(&ch, &cfg, &mut rng).unwrap();
        let r = t.r_sequence();
        for w in r.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * (1.0 + w[0].abs()), "seed {seed}: {r:?}");
        }
        for it in &t.iterations {
            assert!(it.r_after_p51.unwrap() >= it.r_after_p31 - 1e-6 * (1.0 + it.r_after_p31.abs()));
        }
        assert!(t.report.feasible, "seed {seed}: {:?}", t.report.violations);
        assert!(t.star.energy_residuals().iter().all(|e| e.abs() < 1e-9));
    }
}

#[test]
fn subproblem_coefficients_are_hermitian() {
    let (cfg, ch, mut rng) = desk(1);
    let star = StarCoefficients::random_split(ch.n_elements(), &mut rng);
    let p31 = build_p31(&ch, &star, &cfg);
    assert_hermitian_coefficients(&p31);
    let s31 = solve(&p31, cfg.solver_tol, cfg.solver_max_iters).unwrap();
    assert_hermitian_coefficients(&build_p51(&ch, &relaxed_beams(&s31, cfg.k_users), &cfg));
}

#[test]
fn relaxed_bound_dominates_recovery() {
    for seed in 0..3 {
        let (cfg, ch, mut rng) = desk(seed);
        let star = StarCoefficients::random_split(ch.n_elements(), &mut rng);
        let s31 = solve(&build_p31(&ch, &star, &cfg), cfg.solver_tol, cfg.solver_max_iters).unwrap();
        let bf = relaxed_beams(&s31, cfg.k_users);
        let s51 = solve(&build_p51(&ch, &bf, &cfg), cfg.solver_tol, cfg.solver_max_iters).unwrap();
        assert_eq!(s51.status, SolveStatus::Optimal);
        let bound = s51.scalar_values[0];
        let rec = recover_star(&s51, &ch, &bf, &cfg, &mut rng).unwrap();
        assert!(rec.report.min_gain <= bound * (1.0 + 1e-6), "seed {seed}: {} > {bound}", rec.report.min_gain);
        assert!(rec.report.feasible);
    }
}

#[test]
fn eigenvector_only_recovery() {
    let (mut cfg, ch, mut rng) = desk(2);
    cfg.randomization_count = 0;
    let star = StarCoefficients::random_split(ch.n_elements(), &mut rng);
    let s31 = solve(&build_p31(&ch, &star, &cfg), cfg.solver_tol, cfg.solver_max_iters).unwrap();
    let bf = relaxed_beams(&s31, cfg.k_users);
    let s51 = solve(&build_p51(&ch, &bf, &cfg), cfg.solver_tol, cfg.solver_max_iters).unwrap();
    match recover_star(&s51, &ch, &bf, &cfg, &mut rng) {
        Ok(rec) => {
            assert_eq!(rec.source, RecoverySource::Eigenvector);
            assert_eq!(rec.feasible_candidates, 1);
        }
        Err(Error::RecoveryFailure { report, .. }) => assert!(!report.feasible),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn randomized_recovery_close_to_relaxed_optimum() {
    let (cfg, ch, mut rng) = desk(0);
    let star = StarCoefficients::random_split(ch.n_elements(), &mut rng);
    let s31 = solve(&build_p31(&ch, &star, &cfg), cfg.solver_tol, cfg.solver_max_iters).unwrap();
    let bf = relaxed_beams(&s31, cfg.k_users);
    let s51 = solve(&build_p51(&ch, &bf, &cfg), cfg.solver_tol, cfg.solver_max_iters).unwrap();
    let bound = s51.scalar_values[0];
    let rec = recover_star(&s51, &ch, &bf, &cfg, &mut rng).unwrap();
    let gap = (bound - rec.report.min_gain) / bound;
    println!("relaxed {bound:.6e} recovered {:.6e} gap {gap:.3}", rec.report.min_gain);
    assert!(gap <= 0.05, "recovered min gain {:.3}% below the relaxed optimum", 100.0 * gap);
}

#[test]
fn infeasible_sinr_target_is_reported() {
    let (mut cfg, ch, mut rng) = desk(0);
    cfg.gamma_db = 60.0;
    match alternating_optimize(&ch, &cfg, &mut rng) {
        Err(Error::InfeasibleScenario(msg)) => assert!(msg.contains("gamma"), "{msg}"),
        other => panic!("expected InfeasibleScenario, got {:?}", other.map(|t| t.min_gain())),
    }
}

#[test]
fn random_phase_baseline_is_one_shot_and_dominated() {
    for seed in 0..3 {
        let (cfg, ch, _) = desk(seed);
        let a = random_phase_baseline(&ch, &cfg, &mut rng_from_seed(100 + seed)).unwrap();
        let b = random_phase_baseline(&ch, &cfg, &mut rng_from_seed(100 + seed)).unwrap();
        assert_eq!(a.iterations.len(), 1);
        assert_eq!(a.star, b.star);
        let p = alternating_optimize(&ch, &cfg, &mut rng_from_seed(100 + seed)).unwrap();
        assert!(a.report.feasible);
        assert!(a.min_gain() <= p.min_gain() * (1.0 + 1e-5), "seed {seed}: {} > {}", a.min_gain(), p.min_gain());
    }
}

#[test]
fn conventional_baseline_mostly_dominated() {
    let mut wins = 0;
    for seed in 0..10 {
        let (cfg, ch, _) = desk(seed);
        let c = conventional_ris_baseline(&ch, &cfg, &mut rng_from_seed(200 + seed)).unwrap();
        let n = ch.n_elements();
        let reflect = c.star.phi_r.iter().filter(|z| z.norm() > 0.5).count();
        assert_eq!(reflect, n / 2);
        assert!(c.star.energy_residuals().iter().all(|e| e.abs() < 1e-9));
        assert!(c.star.phi_r.iter().zip(c.star.phi_t.iter()).all(|(r, t)| r.norm() * t.norm() < 1e-12));
        if c.report.feasible {
            assert!(c.report.margins.iter().filter(|(id, _)| id.starts_with("C1") || id.starts_with("C2") || id == "C3").all(|(_, m)| *m <= cfg.audit_tol));
        }
        let p = alternating_optimize(&ch, &cfg, &mut rng_from_seed(200 + seed)).unwrap();
        if p.min_gain() >= c.min_gain() * (1.0 - 1e-5) {
            wins += 1;
        }
    }
    assert!(wins >= 6, "proposed scheme won only {wins}/10 seeds");
}
