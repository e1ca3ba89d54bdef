use std::fmt::Write as _;
use std::fs::File;

use anyhow::{bail, Context, Result};
use varflow::flow::{ConstantForcing, FlowOptions, SampledForcing, ZeroForcing};
use varflow::instances::sine_bump;
use varflow::io::read_time_slices;
use varflow::{make_instance, Check, DiagnosticsReport, Forcing, GridFunction, PhiSpec, Problem, Scheme};

use crate::config::{Builtin, DataSource, ForcingSource, RunConfig, SchemeName};

pub type SharedForcing = Box<dyn Forcing<f64> + Send + Sync>;

pub struct Setup {
    pub problem: Problem<f64>,
    pub u0: GridFunction<f64>,
    pub forcing: SharedForcing,
    pub scheme: Scheme<f64>,
    pub t_final: f64,
    pub opts: FlowOptions<f64>,
}

fn builtin(b: Builtin, problem: &Problem<f64>) -> GridFunction<f64> {
    match b {
        Builtin::SineBump => sine_bump(problem.grid()),
        Builtin::Zero => GridFunction::zeros(problem.grid().clone()),
    }
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let problem = make_instance(&cfg.instance_config).context("building the instance")?;
        let grid = problem.grid().clone();
        let d = &cfg.data;
        let u0 = match &d.u0 {
            DataSource::Builtin(b) => builtin(*b, &problem),
            DataSource::Field(f) => GridFunction::new(grid.clone(), f.sample(&grid).context("data.u0")?)?,
        }
        .scaled(d.u0_scale);
        let forcing: SharedForcing = match &d.f {
            ForcingSource::Builtin(Builtin::Zero) => Box::new(ZeroForcing),
            ForcingSource::Builtin(b) => Box::new(ConstantForcing(builtin(*b, &problem).scaled(d.f_scale))),
            ForcingSource::Field(f) => {
                let v = GridFunction::new(grid.clone(), f.sample(&grid).context("data.f")?)?;
                Box::new(ConstantForcing(v.scaled(d.f_scale)))
            }
            ForcingSource::Slices { slices } => {
                let file = File::open(slices).with_context(|| format!("data.f: {}", slices.display()))?;
                let (times, fs) = read_time_slices(&grid, file).with_context(|| format!("data.f: {}", slices.display()))?;
                let fs = fs.into_iter().map(|f| f.scaled(d.f_scale)).collect();
                Box::new(SampledForcing::new(times, fs)?)
            }
        };
        let s = &cfg.solver;
        let scheme = match s.scheme {
            SchemeName::ImplicitEuler => Scheme::ImplicitEuler { tau: s.tau },
            SchemeName::YosidaFlow => Scheme::YosidaFlow {
                lambda: s.lambda.expect("validated"),
                tau: s.tau,
            },
        };
        Ok(Setup {
            problem,
            u0,
            forcing,
            scheme,
            t_final: s.t_final,
            opts: FlowOptions { inner_tol: s.inner_tol },
        })
    }

    pub fn forcing(&self) -> &dyn Forcing<f64> {
        &*self.forcing
    }
}

/// The Φ-specs of the instance, labelled by role.
pub fn instance_specs(cfg: &RunConfig, problem: &Problem<f64>) -> Result<Vec<(&'static str, PhiSpec<f64>)>> {
    let grid = problem.grid();
    let c = &cfg.instance_config;
    let mut out = Vec::new();
    for (role, phi) in [("zero_order", &c.zero_order), ("gradient", &c.gradient), ("boundary", &c.boundary)] {
        if let Some(phi) = phi {
            out.push((role, phi.resolve(grid).with_context(|| format!("instance.{role}"))?));
        }
    }
    if out.is_empty() {
        bail!("the instance declares no integrand");
    }
    Ok(out)
}

/// Named reports in execution order.
#[derive(Default)]
pub struct Outcome {
    pub suites: Vec<(String, DiagnosticsReport)>,
}

impl Outcome {
    pub fn add(&mut self, suite: impl Into<String>, report: DiagnosticsReport) {
        self.suites.push((suite.into(), report));
    }

    pub fn passed(&self) -> bool {
        self.suites.iter().all(|(_, r)| r.passed())
    }

    pub fn first_failure(&self) -> Option<(&str, &Check)> {
        self.suites
            .iter()
            .find_map(|(s, r)| r.first_failure().map(|c| (s.as_str(), c)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("suite,name,value,tolerance,pass\n");
        for (s, r) in &self.suites {
            for c in &r.checks {
                writeln!(out, "{s},{c}").expect("writing to a String");
            }
        }
        out
    }

    /// One line per suite, then the verdict.
    pub fn print(&self) {
        for (s, r) in &self.suites {
            match r.first_failure() {
                None => println!("PASS {s} ({} checks)", r.checks.len()),
                Some(c) => println!(
                    "FAIL {s}: {} = {:e}, not below tolerance {:e}",
                    c.name, c.value, c.tolerance
                ),
            }
        }
        match self.first_failure() {
            None => println!("all checks passed"),
            Some((s, c)) => println!("first failure: {s}/{}", c.name),
        }
    }
}
