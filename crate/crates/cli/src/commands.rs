use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use varflow::flow::{energy_balance, energy_refinement, solve, trajectory_csv, Trajectory};
use varflow::modular::lux_norm_conj;
use varflow::phi::DoublingProbe;
use varflow::{
    check_delta2, check_nabla2, envelope, lambda_convergence_study, luxemburg_norm, modular, resolvent,
    Check, DiagnosticsReport, GridFunction, PhiSpec, Problem, Scheme,
};

use crate::checks::{refinement_report, run_checks, run_trajectory_checks};
use crate::config::{CheckName, RunConfig};
use crate::output::Output;
use crate::plot::{render, Axes, Line};
use crate::setup::{instance_specs, Outcome, Setup};

fn states_csv(traj: &Trajectory<f64>) -> String {
    let n = traj.states[0].len();
    let mut out = String::from("k,t");
    for i in 0..n {
        write!(out, ",u_{i}").expect("writing to a String");
    }
    out.push('\n');
    for (k, (t, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        write!(out, "{k},{t}").expect("writing to a String");
        for v in u.values() {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

fn column(traj_csv: &str, name: &str) -> Vec<f64> {
    let mut lines = traj_csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let Some(idx) = header.iter().position(|h| *h == name) else {
        return Vec::new();
    };
    lines
        .map(|l| l.split(',').nth(idx).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN))
        .collect()
}

pub fn run_solve(cfg: &RunConfig) -> Result<Outcome> {
    let setup = Setup::new(cfg)?;
    let p = &setup.problem;
    let out = Output::new(&cfg.output.dir)?;
    let traj = solve(p, &setup.u0, setup.forcing(), setup.scheme, setup.t_final, &setup.opts)
        .context("solving the configured flow")?;
    let mut outcome = run_trajectory_checks(cfg, &setup, &traj)?;
    let csv = trajectory_csv(p, &traj)?;
    let plots = cfg.output.plots;

    if cfg.solver.refinement_levels >= 2 {
        let (rows, ratios) = energy_refinement(
            p,
            &setup.u0,
            setup.forcing(),
            setup.scheme,
            setup.t_final,
            cfg.solver.refinement_levels,
        )?;
        let mut table = String::from("tau,max_residual,ratio\n");
        for (i, r) in rows.iter().enumerate() {
            let ratio = if i == 0 { String::new() } else { ratios[i - 1].to_string() };
            writeln!(table, "{},{},{ratio}", r.tau, r.max_residual).expect("writing to a String");
        }
        print!("{table}");
        if cfg.output.csv {
            out.write("refinement.csv", table.as_bytes())?;
        }
        if plots {
            let x: Vec<f64> = rows.iter().map(|r| r.tau).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.max_residual).collect();
            out.write("refinement.png", &render(&[Line { x: &x, y: &y }], Axes { log_x: true, log_y: true }))?;
        }
        outcome.add("refinement", refinement_report(&ratios));
    }
    if cfg.checks.enabled(CheckName::LambdaStudy) {
        let c = &cfg.checks;
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
        if cfg.output.csv {
            let mut table = String::from("lambda,distance,int_phi_j,int_conj_a,lambda_a_sq\n");
            for r in &s.rows {
                writeln!(
                    table,
                    "{},{},{},{},{}",
                    r.lambda, r.distance, r.int_phi_j, r.int_conj_a, r.lambda_a_sq
                )
                .expect("writing to a String");
            }
            out.write("lambda_study.csv", table.as_bytes())?;
        }
        if plots {
            let x: Vec<f64> = s.rows.iter().map(|r| r.lambda).collect();
            let y: Vec<f64> = s.rows.iter().map(|r| r.distance).collect();
            out.write("lambda_study.png", &render(&[Line { x: &x, y: &y }], Axes { log_x: true, log_y: true }))?;
        }
        outcome.add("lambda_study", s.report);
    }

    if cfg.output.csv {
        out.write("trajectory.csv", csv.as_bytes())?;
        out.write("diagnostics.csv", outcome.to_csv().as_bytes())?;
        if cfg.output.states {
            out.write("states.csv", states_csv(&traj).as_bytes())?;
        }
    }
    if plots {
        let t = column(&csv, "t");
        for name in ["norm_u", "phi_u", "energy_residual"] {
            let y = column(&csv, name);
            out.write(&format!("{name}.png"), &render(&[Line { x: &t, y: &y }], Axes::default()))?;
        }
    }
    println!(
        "solved {} steps of {} to T = {}; artifacts in {}",
        traj.steps(),
        p.kind().name(),
        setup.t_final,
        out.root().display()
    );
    Ok(outcome)
}

pub fn run_check(cfg: &RunConfig) -> Result<Outcome> {
    let outcome = run_checks(cfg)?;
    if cfg.output.csv {
        let out = Output::new(&cfg.output.dir)?;
        out.write("checks.csv", outcome.to_csv().as_bytes())?;
    }
    Ok(outcome)
}

struct Cell {
    lambda: f64,
    tau: f64,
    steps: usize,
    distance: f64,
    max_residual: f64,
    final_norm: f64,
    report: DiagnosticsReport,
}

fn max_distance(p: &Problem<f64>, a: &Trajectory<f64>, b: &Trajectory<f64>) -> Result<f64> {
    let mut d = 0.0_f64;
    for (x, y) in a.states.iter().zip(&b.states) {
        d = d.max(p.norm(&x.axpy(-1.0, y)?)?);
    }
    Ok(d)
}

fn fmt_key(v: f64) -> String {
    format!("{v:e}").replace('-', "m")
}

/// Yosida flows over the `λ × τ` grid, each against the implicit-Euler
/// trajectory at the same `τ`. Cells run on the rayon pool.
pub fn run_sweep(cfg: &RunConfig) -> Result<Outcome> {
    let setup = Setup::new(cfg)?;
    let p = &setup.problem;
    let out = Output::new(&cfg.output.dir)?;
    let taus = if cfg.solver.taus.is_empty() {
        vec![cfg.solver.tau]
    } else {
        cfg.solver.taus.clone()
    };
    let mut lambdas = cfg.solver.lambdas.clone();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    let tol = cfg.checks.tol(CheckName::Energy);
    let solve_at = |scheme: Scheme<f64>| {
        solve(p, &setup.u0, setup.forcing(), scheme, setup.t_final, &setup.opts)
            .with_context(|| format!("sweep cell {scheme:?}"))
    };
    let references: Vec<Trajectory<f64>> = taus
        .par_iter()
        .map(|&tau| solve_at(Scheme::ImplicitEuler { tau }))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, f64)> = (0..taus.len())
        .flat_map(|i| lambdas.iter().map(move |&l| (i, l)))
        .collect();
    let cells: Vec<Cell> = pairs
        .par_iter()
        .map(|&(i, lambda)| -> Result<Cell> {
            let tau = taus[i];
            let traj = solve_at(Scheme::YosidaFlow { lambda, tau })?;
            let bal = energy_balance(p, &traj)?;
            let report = varflow::energy_report(p, &traj, tol)?;
            if cfg.output.csv {
                let name = format!("cells/lambda_{}_tau_{}.csv", fmt_key(lambda), fmt_key(tau));
                out.write(&name, trajectory_csv(p, &traj)?.as_bytes())?;
            }
            Ok(Cell {
                lambda,
                tau,
                steps: traj.steps(),
                distance: max_distance(p, &traj, &references[i])?,
                max_residual: bal.max_rectangle(),
                final_norm: p.norm(traj.final_state())?,
                report,
            })
        })
        .collect::<Result<_>>()?;

    let mut table = String::from("lambda,tau,steps,distance,max_energy_residual,final_norm,energy_pass\n");
    let mut outcome = Outcome::default();
    for c in &cells {
        writeln!(
            table,
            "{},{},{},{},{},{},{}",
            c.lambda,
            c.tau,
            c.steps,
            c.distance,
            c.max_residual,
            c.final_norm,
            c.report.passed()
        )
        .expect("writing to a String");
        outcome.add(format!("energy[lambda={:e},tau={:e}]", c.lambda, c.tau), c.report.clone());
    }
    let mut lines = Vec::new();
    let mut xs = Vec::new();
    for (row, &tau) in cells.chunks(lambdas.len()).zip(&taus) {
        let increase = row
            .windows(2)
            .map(|w| w[1].distance - w[0].distance)
            .fold(0.0_f64, f64::max);
        let mut r = DiagnosticsReport::new("monotone");
        r.push(Check::at_most(
            "distance_monotone",
            increase,
            1e-12 + 1e-9 * row.first().map_or(0.0, |c| c.distance),
        ));
        outcome.add(format!("distance[tau={tau:e}]"), r);
        xs.push(row.iter().map(|c| c.lambda).collect::<Vec<_>>());
        lines.push(row.iter().map(|c| c.distance).collect::<Vec<_>>());
    }
    if cfg.output.csv {
        out.write("sweep.csv", table.as_bytes())?;
    }
    if cfg.output.plots {
        let ls: Vec<Line> = xs.iter().zip(&lines).map(|(x, y)| Line { x, y }).collect();
        out.write("sweep.png", &render(&ls, Axes { log_x: true, log_y: true }))?;
    }
    print!("{table}");
    Ok(outcome)
}

fn probe_specs(cfg: &RunConfig) -> Result<Vec<(String, PhiSpec<f64>)>> {
    let setup = Setup::new(cfg)?;
    let grid = setup.problem.grid();
    Ok(match &cfg.probe.phi {
        Some(phi) => vec![("probe".to_string(), phi.resolve(grid).context("probe.phi")?)],
        None => instance_specs(cfg, &setup.problem)?
            .into_iter()
            .map(|(r, s)| (r.to_string(), s))
            .collect(),
    })
}

/// Δ₂ and ∇₂ classification. Informational: the exit code is 0 whatever the
/// verdict.
pub fn run_probe(cfg: &RunConfig) -> Result<()> {
    let pr = &cfg.probe;
    let probe = DoublingProbe {
        z_min: pr.z_min,
        z_max: pr.z_max,
        samples: pr.samples,
        ..Default::default()
    };
    for (role, spec) in probe_specs(cfg)? {
        let sites = [pr.site];
        spec.check_sites(pr.site + 1).context("probe.site")?;
        for (cond, report) in [("Δ₂", check_delta2(&spec, &probe, &sites)?), ("∇₂", check_nabla2(&spec, &probe, &sites)?)] {
            let subject = if cond == "∇₂" { "conjugate " } else { "" };
            match (report.holds, report.witness) {
                (true, _) => println!("{role} ({}): passes {cond} (k = {:.4})", spec.name(), report.best_k),
                (false, Some(w)) => println!(
                    "{role} ({}): fails {cond}, witness {subject}z = {:e} at site {} with ratio {:e}",
                    spec.name(),
                    w.z,
                    w.site,
                    w.ratio
                ),
                (false, None) => println!("{role} ({}): fails {cond}", spec.name()),
            }
        }
    }
    Ok(())
}

pub fn run_norm(cfg: &RunConfig) -> Result<()> {
    let Some(section) = &cfg.norm else {
        bail!("`norm` needs a [norm] section with a `field`");
    };
    let setup = Setup::new(cfg)?;
    let grid = setup.problem.grid();
    let spec = match &section.phi {
        Some(phi) => phi.resolve(grid).context("norm.phi")?,
        None => instance_specs(cfg, &setup.problem)?.remove(0).1,
    };
    let v = GridFunction::new(grid.clone(), section.field.sample(grid).context("norm.field")?)?;
    let norm = luxemburg_norm(grid, &spec, &v, section.tol)?;
    let conj = lux_norm_conj(grid, &spec, &v, section.tol)?;
    let m = modular(grid, &spec, &v)?.value();
    println!("phi,luxemburg_norm,conjugate_norm,modular");
    println!("{},{norm},{conj},{m}", spec.name());
    Ok(())
}

/// `J_λ u_0` and `A_λ u_0` for the configured instance and data.
pub fn run_prox(cfg: &RunConfig) -> Result<Outcome> {
    let setup = Setup::new(cfg)?;
    let p = &setup.problem;
    let lambda = cfg.prox.lambda;
    let tol = cfg.solver.inner_tol;
    let r = resolvent(p, &setup.u0, lambda, tol)?;
    let env = envelope(p, &setup.u0, lambda, tol)?;
    let phi_u = p.evaluate(&setup.u0)?.value();
    let phi_j = p.evaluate(&r.j_lambda_u)?.value();
    let cert = p.young_certificate(&r.j_lambda_u, &r.a_lambda_u)?;
    let ctol = cfg.checks.tol(CheckName::Resolvent);
    let mut report = DiagnosticsReport::new("prox");
    report
        .push(Check::at_most("sandwich_lower", phi_j - env, ctol * (1.0 + env.abs())))
        .push(Check::at_most("sandwich_upper", env - phi_u, ctol * (1.0 + phi_u.abs())))
        .push(Check::at_most("young_gap", cert.gap, cfg.checks.tol(CheckName::Young)));
    println!("lambda,phi_u,envelope,phi_j,residual,iterations");
    println!("{lambda},{phi_u},{env},{phi_j},{},{}", r.residual_norm, r.iterations);
    if cfg.output.csv {
        let out = Output::new(&cfg.output.dir)?;
        let grid = p.grid();
        let mut table = String::from(if grid.dim() == 2 { "x,y,u,j_lambda_u,a_lambda_u\n" } else { "x,u,j_lambda_u,a_lambda_u\n" });
        for i in 0..grid.len() {
            let [x, y] = grid.point(i);
            if grid.dim() == 2 {
                write!(table, "{x},{y},").expect("writing to a String");
            } else {
                write!(table, "{x},").expect("writing to a String");
            }
            writeln!(
                table,
                "{},{},{}",
                setup.u0.values()[i],
                r.j_lambda_u.values()[i],
                r.a_lambda_u.values()[i]
            )
            .expect("writing to a String");
        }
        out.write("prox.csv", table.as_bytes())?;
    }
    let mut outcome = Outcome::default();
    outcome.add("prox", report);
    Ok(outcome)
}
