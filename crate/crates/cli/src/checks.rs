//! The diagnostics battery behind `varflow check`.

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varflow::convex::IdentityOptions;
use varflow::flow::{
    dependence_of, energy_refinement, resolving_step, solve, ConstantForcing, Trajectory,
};
use varflow::instances::check_coercivity;
use varflow::modular::{check_dual_sandwich, check_norm_modular_relations};
use varflow::mollify::jensen_check;
use varflow::{
    chain_rule_check, energy_report, lambda_convergence_study, subdiff_residual,
    verify_resolvent_identities, Check, DiagnosticsReport, GridFunction, PhiSpec, Problem,
};

use crate::config::{CheckName, RunConfig};
use crate::setup::{instance_specs, Outcome, Setup};

/// Independent stream per suite, so toggling one suite leaves the others
/// unchanged.
fn rng_for(seed: u64, check: CheckName) -> ChaCha8Rng {
    let idx = CheckName::ALL.iter().position(|&c| c == check).expect("listed") as u64;
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(idx + 1)))
}

fn random_fn<R: Rng>(problem: &Problem<f64>, amp: f64, rng: &mut R) -> GridFunction<f64> {
    let g = problem.grid().clone();
    let v = (0..g.len())
        .map(|i| if problem.free()[i] { rng.gen_range(-amp..amp) } else { 0.0 })
        .collect();
    GridFunction::new(g, v).expect("sized to the grid")
}

/// Fenchel–Young at sampled sites: equality on subgradient pairs and the
/// inequality on random pairs.
fn phi_suite<R: Rng>(spec: &PhiSpec<f64>, n: usize, samples: usize, tol: f64, rng: &mut R) -> Result<DiagnosticsReport> {
    let mut equality = 0.0_f64;
    let mut inequality = 0.0_f64;
    for _ in 0..samples {
        let site = rng.gen_range(0..n);
        let m = spec.local(site)?;
        let z = 10f64.powf(rng.gen_range(-2.0..0.5)) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        if m.is_capped(z) {
            continue;
        }
        let sd = m.subdiff(z);
        let y = 0.5 * (sd.lower + sd.upper);
        let (mz, my) = (m.eval(z), m.conjugate(y)?);
        equality = equality.max((mz + my - z * y).abs() / (1.0 + mz.abs() + my.abs()));
        let y2 = y + rng.gen_range(-1.0..1.0);
        let my2 = m.conjugate(y2)?;
        if my2.is_finite() {
            inequality = inequality.max((z * y2 - mz - my2) / (1.0 + mz.abs() + my2.abs()));
        }
    }
    let mut r = DiagnosticsReport::new("phi");
    r.push(Check::at_most("young_equality", equality, tol))
        .push(Check::at_most("young_inequality", inequality, tol));
    Ok(r)
}

fn trajectory_suites(cfg: &RunConfig, setup: &Setup, traj: &Trajectory<f64>, out: &mut Outcome) -> Result<()> {
    let c = &cfg.checks;
    let p = &setup.problem;
    if c.enabled(CheckName::Energy) {
        out.add("energy", energy_report(p, traj, c.tol(CheckName::Energy))?);
    }
    if c.enabled(CheckName::Young) {
        out.add("young", subdiff_residual(p, traj, c.tol(CheckName::Young))?);
    }
    if c.enabled(CheckName::ChainRule) {
        out.add("chain_rule", chain_rule_check(p, traj, c.tol(CheckName::ChainRule))?);
    }
    Ok(())
}

/// Checks that only need the main trajectory; shared with `solve`.
pub fn run_trajectory_checks(cfg: &RunConfig, setup: &Setup, traj: &Trajectory<f64>) -> Result<Outcome> {
    let mut out = Outcome::default();
    trajectory_suites(cfg, setup, traj, &mut out)?;
    Ok(out)
}

pub fn run_checks(cfg: &RunConfig) -> Result<Outcome> {
    let setup = Setup::new(cfg)?;
    let c = &cfg.checks;
    let p = &setup.problem;
    let grid = p.grid();
    let mut out = Outcome::default();
    let specs = instance_specs(cfg, p)?;

    if c.enabled(CheckName::Phi) {
        let mut rng = rng_for(cfg.seed, CheckName::Phi);
        for (role, spec) in &specs {
            let n = spec.field_len().unwrap_or(grid.len());
            let r = phi_suite(spec, n, c.samples, c.tol(CheckName::Phi), &mut rng)?;
            out.add(format!("phi.{role}"), r);
        }
    }
    if c.enabled(CheckName::Modular) {
        let mut rng = rng_for(cfg.seed, CheckName::Modular);
        let tol = c.tol(CheckName::Modular);
        for (role, spec) in &specs {
            if spec.field_len().is_some_and(|n| n != grid.len()) {
                continue;
            }
            let mut r = DiagnosticsReport::new("modular");
            for _ in 0..c.samples {
                let amp = 10f64.powf(rng.gen_range(-1.0..1.0));
                let v = random_fn(p, amp, &mut rng);
                keep_worst(&mut r, check_norm_modular_relations(grid, spec, &v, tol)?);
                let y = random_fn(p, 1.0, &mut rng);
                keep_worst(&mut r, check_dual_sandwich(grid, spec, &y, 4, &mut rng, tol)?.report);
            }
            out.add(format!("modular.{role}"), r);
        }
    }
    if c.enabled(CheckName::Resolvent) {
        let mut rng = rng_for(cfg.seed, CheckName::Resolvent);
        let opts = IdentityOptions {
            tol: c.tol(CheckName::Resolvent),
            young_tol: c.tol(CheckName::Young),
            ..Default::default()
        };
        out.add(
            "resolvent",
            verify_resolvent_identities(p, c.samples, &cfg.solver.lambdas, &mut rng, &opts)?,
        );
    }
    if c.enabled(CheckName::Coercivity) {
        let mut rng = rng_for(cfg.seed, CheckName::Coercivity);
        let mut r = DiagnosticsReport::new("coercivity");
        if let Some(check) = check_coercivity(p, c.samples, &mut rng, c.tol(CheckName::Coercivity))? {
            r.push(check);
        }
        out.add("coercivity", r);
    }

    let traj = solve(p, &setup.u0, setup.forcing(), setup.scheme, setup.t_final, &setup.opts)
        .context("solving the configured flow")?;
    trajectory_suites(cfg, &setup, &traj, &mut out)?;

    if c.enabled(CheckName::Dependence) {
        let mut rng = rng_for(cfg.seed, CheckName::Dependence);
        let tol = c.tol(CheckName::Dependence);
        let mut r = DiagnosticsReport::new("dependence");
        let mut ratio = 0.0_f64;
        for _ in 0..c.dependence_pairs {
            let u0 = setup.u0.axpy(1.0, &random_fn(p, 0.2, &mut rng))?;
            let f = ConstantForcing(random_fn(p, 1.0, &mut rng));
            let other = solve(p, &u0, &f, setup.scheme, setup.t_final, &setup.opts)?;
            let d = dependence_of(p, &traj, &other, tol)?;
            keep_worst(&mut r, d.report);
            ratio = ratio.max(if d.rhs > 0.0 { d.lhs / d.rhs } else { 0.0 });
        }
        r.push_series("max_ratio", vec![ratio]);
        out.add("dependence", r);
    }
    if c.enabled(CheckName::LambdaStudy) {
        let s = lambda_convergence_study(
            p,
            &setup.u0,
            setup.forcing(),
            &cfg.solver.lambdas,
            cfg.solver.tau,
            setup.t_final,
            c.lambda_growth,
            c.lambda_slack,
        )?;
        out.add("lambda_study", s.report);
    }
    if c.enabled(CheckName::Refinement) {
        let levels = cfg.solver.refinement_levels.max(3);
        let tau = resolving_step(p, &setup.u0, cfg.solver.tau)?;
        let scheme = setup.scheme.with_tau(tau);
        let (_, ratios) = energy_refinement(p, &setup.u0, setup.forcing(), scheme, setup.t_final, levels)?;
        out.add("refinement", refinement_report(&ratios));
    }
    if c.enabled(CheckName::Jensen) {
        let r = jensen_check(p, &traj.states, cfg.solver.tau, c.mollifier_n, &c.alphas, c.tol(CheckName::Jensen))
            .context("checks.mollifier_n")?;
        out.add("jensen", r);
    }
    Ok(out)
}

/// Merges `rep` into `acc`, keeping per check name a failing instance if
/// any, else the one with the largest value.
fn keep_worst(acc: &mut DiagnosticsReport, rep: DiagnosticsReport) {
    for c in rep.checks {
        match acc.checks.iter_mut().find(|k| k.name == c.name) {
            None => {
                acc.push(c);
            }
            Some(k) => {
                let worse = if k.passed != c.passed { !c.passed } else { c.value > k.value };
                if worse {
                    *k = c;
                }
            }
        }
    }
}

/// First-order verdict on successive `R(τ)/R(τ/2)` ratios.
pub fn refinement_report(ratios: &[f64]) -> DiagnosticsReport {
    let mut r = DiagnosticsReport::new("refinement");
    for (i, &q) in ratios.iter().enumerate() {
        r.push(Check::in_range(format!("ratio_{}", i + 1), q, 1.5, 2.5));
    }
    r
}
