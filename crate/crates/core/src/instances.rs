//! Problem constructors for the application families: reaction-diffusion,
//! zero-order Musielak-Orlicz, Musielak-Orlicz-Sobolev, dynamic boundary
//! conditions and the classical p-growth case.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::convex::{Problem, ProblemKind};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::io::read_field_csv;
use crate::phi::{LocalPhi, PhiFamily, PhiSpec};
use crate::report::Check;
use crate::scalar::Real;

/// Source of a coefficient field. In a config file: a number, an array with
/// one value per node, `{ linear = [left, right] }` (affine in `x`), or
/// `{ csv = "path" }` (last column, one row per node).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound = "T: Real")]
pub enum FieldSource<T> {
    Constant(T),
    Values(Vec<T>),
    Linear { linear: [T; 2] },
    Csv { csv: PathBuf },
}

impl<T: Real> FieldSource<T> {
    pub fn sample(&self, grid: &Grid<T>) -> Result<Vec<T>> {
        let n = grid.len();
        match self {
            FieldSource::Constant(c) => Ok(vec![*c; n]),
            FieldSource::Values(v) => {
                if v.len() != n {
                    return Err(Error::GridMismatch {
                        expected: n,
                        found: v.len(),
                    });
                }
                Ok(v.clone())
            }
            FieldSource::Linear { linear: [l, r] } => {
                let a = grid.point(0)[0];
                let b = grid.point(n - 1)[0];
                let span = if b > a { b - a } else { T::one() };
                Ok((0..n)
                    .map(|i| *l + (*r - *l) * (grid.point(i)[0] - a) / span)
                    .collect())
            }
            FieldSource::Csv { csv } => {
                let v = read_field_csv(csv)?;
                if v.len() != n {
                    return Err(Error::GridMismatch {
                        expected: n,
                        found: v.len(),
                    });
                }
                Ok(v)
            }
        }
    }

    /// Resolves a relative CSV path against `dir`.
    pub fn rebase(&mut self, dir: &Path) {
        if let FieldSource::Csv { csv } = self {
            if csv.is_relative() {
                *csv = dir.join(&*csv);
            }
        }
    }
}

/// A Φ-function family whose coefficient fields are not yet sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Real")]
pub enum PhiFamilyConfig<T> {
    Power { p: T },
    VariableExponent { p: FieldSource<T> },
    DoublePhase { p: T, q: T, a: FieldSource<T> },
    OrliczExp { p: T },
    #[serde(rename = "llogl")]
    LLogL,
    Weighted { w: FieldSource<T>, p: T },
    Quadratic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PhiConfig<T> {
    #[serde(flatten)]
    pub family: PhiFamilyConfig<T>,
    #[serde(default)]
    pub scale: Option<T>,
}

impl<T: Real> PhiConfig<T> {
    pub fn new(family: PhiFamilyConfig<T>) -> Self {
        PhiConfig {
            family,
            scale: None,
        }
    }

    pub fn scaled(family: PhiFamilyConfig<T>, scale: T) -> Self {
        PhiConfig {
            family,
            scale: Some(scale),
        }
    }

    pub fn resolve(&self, grid: &Grid<T>) -> Result<PhiSpec<T>> {
        let family = match &self.family {
            PhiFamilyConfig::Power { p } => PhiFamily::Power { p: *p },
            PhiFamilyConfig::VariableExponent { p } => PhiFamily::VariableExponent {
                p: p.sample(grid)?,
            },
            PhiFamilyConfig::DoublePhase { p, q, a } => PhiFamily::DoublePhase {
                p: *p,
                q: *q,
                a: a.sample(grid)?,
            },
            PhiFamilyConfig::OrliczExp { p } => PhiFamily::OrliczExp { p: *p },
            PhiFamilyConfig::LLogL => PhiFamily::LLogL,
            PhiFamilyConfig::Weighted { w, p } => PhiFamily::Weighted {
                w: w.sample(grid)?,
                p: *p,
            },
            PhiFamilyConfig::Quadratic => PhiFamily::Quadratic,
        };
        PhiSpec::scaled(family, self.scale.unwrap_or_else(T::one))
    }

    fn rebase(&mut self, dir: &Path) {
        match &mut self.family {
            PhiFamilyConfig::VariableExponent { p: f }
            | PhiFamilyConfig::DoublePhase { a: f, .. }
            | PhiFamilyConfig::Weighted { w: f, .. } => f.rebase(dir),
            _ => {}
        }
    }
}

/// `[x0, x1]` with `nx` nodes, optionally times `[y0, y1]` with `ny` nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DomainConfig<T> {
    pub x: [T; 2],
    pub nx: usize,
    #[serde(default)]
    pub y: Option<[T; 2]>,
    #[serde(default)]
    pub ny: Option<usize>,
}

impl<T: Real> DomainConfig<T> {
    pub fn interval(a: T, b: T, n: usize) -> Self {
        DomainConfig {
            x: [a, b],
            nx: n,
            y: None,
            ny: None,
        }
    }

    pub fn rectangle(x: [T; 2], y: [T; 2], nx: usize, ny: usize) -> Self {
        DomainConfig {
            x,
            nx,
            y: Some(y),
            ny: Some(ny),
        }
    }

    pub fn grid(&self) -> Result<Grid<T>> {
        let small = |n: usize| n < 3;
        match (self.y, self.ny) {
            (None, None) => {
                if small(self.nx) {
                    return Err(Error::InvalidInput(format!(
                        "need at least 3 nodes, got nx = {}",
                        self.nx
                    )));
                }
                Grid::interval(self.x[0], self.x[1], self.nx)
            }
            (Some(y), Some(ny)) => {
                if small(self.nx) || small(ny) {
                    return Err(Error::InvalidInput(format!(
                        "need at least 3 nodes per dimension, got {} x {ny}",
                        self.nx
                    )));
                }
                Grid::rectangle((self.x[0], self.x[1]), (y[0], y[1]), self.nx, ny)
            }
            _ => Err(Error::InvalidInput(
                "a 2-D domain needs both `y` and `ny`".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CoercivityConfig<T> {
    pub c: T,
    pub s: T,
}

/// Declarative instance: the family, the domain, and the integrands
/// `M` (gradient), `N` (zero order) and `M_Γ` (boundary).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct InstanceConfig<T> {
    pub family: ProblemKind,
    pub domain: DomainConfig<T>,
    #[serde(default)]
    pub gradient: Option<PhiConfig<T>>,
    #[serde(default)]
    pub zero_order: Option<PhiConfig<T>>,
    #[serde(default)]
    pub boundary: Option<PhiConfig<T>>,
    /// Declared `φ(u) >= c ‖u‖^s`; derived from the integrands when absent.
    #[serde(default)]
    pub coercivity: Option<CoercivityConfig<T>>,
}

impl<T: Real> InstanceConfig<T> {
    /// Resolves relative CSV paths against `dir`.
    pub fn rebase(&mut self, dir: &Path) {
        for c in [&mut self.gradient, &mut self.zero_order, &mut self.boundary]
            .into_iter()
            .flatten()
        {
            c.rebase(dir);
        }
    }

    fn require<'a>(&self, part: &'a Option<PhiConfig<T>>, what: &str) -> Result<&'a PhiConfig<T>> {
        part.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("{} instance needs a {what} integrand", self.family.name()))
        })
    }

    fn forbid(&self, part: &Option<PhiConfig<T>>, what: &str) -> Result<()> {
        if part.is_some() {
            return Err(Error::InvalidInput(format!(
                "{} instance takes no {what} integrand",
                self.family.name()
            )));
        }
        Ok(())
    }
}

/// Smallest power-type exponent of a spec, if it has one.
fn power_exponent<T: Real>(spec: &PhiSpec<T>) -> Option<T> {
    match spec.family() {
        PhiFamily::Power { p } | PhiFamily::Weighted { p, .. } | PhiFamily::DoublePhase { p, .. } => {
            Some(*p)
        }
        PhiFamily::VariableExponent { p } => p.iter().copied().reduce(T::min),
        PhiFamily::Quadratic => Some(T::lit(2.0)),
        PhiFamily::OrliczExp { .. } | PhiFamily::LLogL => None,
    }
}

fn at_least_two<T: Real>(spec: &PhiSpec<T>, what: &str) -> Result<()> {
    match power_exponent(spec) {
        Some(p) if p < T::lit(2.0) => Err(Error::InvalidSpec(format!(
            "{what} exponent must be >= 2, got {p}"
        ))),
        _ => Ok(()),
    }
}

/// Common `(c, s)` with `M_i(z) >= c |z|^s` for every local function.
fn common_bound<T: Real>(locals: &[LocalPhi<T>]) -> Option<(T, T)> {
    let mut out: Option<(T, T)> = None;
    for m in locals {
        let (c, s) = m.lower_power_bound()?;
        out = match out {
            None => Some((c, s)),
            Some((c0, s0)) if s0 == s => Some((c0.min(c), s)),
            Some(_) => return None,
        };
    }
    out
}

/// `c |Ω|^{1 - s/2}` from `Σ w M(u) >= c Σ w |u|^s` by Jensen, `s >= 2`.
fn nodewise_coercivity<T: Real>(locals: &[LocalPhi<T>], measure: T) -> Option<(T, T)> {
    let (c, s) = common_bound(locals)?;
    (s >= T::lit(2.0)).then(|| (c * measure.powf(T::one() - s / T::lit(2.0)), s))
}

/// Discrete Poincaré for `Σ W M(|∇u|) >= c |∇u|^p` with zero boundary
/// values, `p >= 2`: integrate `∂_x u` along rows, then Jensen in `y`.
fn gradient_coercivity<T: Real>(problem: &Problem<T>) -> Option<(T, T)> {
    let g = problem.gradient_part()?;
    let (c, p) = common_bound(&g.phis)?;
    let two = T::lit(2.0);
    if p < two {
        return None;
    }
    let grid = problem.grid();
    let [nx, ny] = grid.shape();
    let [hx, hy] = grid.spacing();
    let lx = hx * T::lit((nx - 1) as f64);
    let mut out = c * lx.powf(T::one() - T::lit(1.5) * p);
    if grid.dim() == 2 {
        let ly = hy * T::lit((ny - 1) as f64);
        out = out * ly.powf(T::one() - p / two);
    }
    Some((out, p))
}

fn finish<T: Real>(
    cfg: &InstanceConfig<T>,
    builder: crate::convex::ProblemBuilder<T>,
    derive: impl FnOnce(&Problem<T>) -> Option<(T, T)>,
) -> Result<Problem<T>> {
    let probe = builder.clone().build()?;
    let declared = cfg.coercivity.map(|c| (c.c, c.s));
    match declared.or_else(|| derive(&probe)) {
        Some((c, s)) => builder.coercivity(c, s).build(),
        None => Ok(probe),
    }
}

/// `Σ W M(|∇u|) + Σ w N(u)` with homogeneous Dirichlet data; power-type
/// exponents must be at least 2.
pub fn make_reaction_diffusion<T: Real>(cfg: &InstanceConfig<T>) -> Result<Problem<T>> {
    let grid = Arc::new(cfg.domain.grid()?);
    let m = cfg.require(&cfg.gradient, "gradient")?.resolve(&grid)?;
    let n = cfg.require(&cfg.zero_order, "zero-order")?.resolve(&grid)?;
    cfg.forbid(&cfg.boundary, "boundary")?;
    at_least_two(&m, "gradient")?;
    at_least_two(&n, "zero-order")?;
    let measure = grid.measure();
    let builder = Problem::builder(grid.clone())
        .kind(ProblemKind::ReactionDiffusion)
        .gradient(m)
        .zero_order(n.clone())
        .dirichlet(true);
    finish(cfg, builder, |_| nodewise_coercivity(&n.resolve(grid.len()).ok()?, measure))
}

/// Nodewise-decoupled `Σ w M(x, u)`; every family is admissible.
pub fn make_zero_order<T: Real>(cfg: &InstanceConfig<T>) -> Result<Problem<T>> {
    let grid = Arc::new(cfg.domain.grid()?);
    let m = cfg.require(&cfg.zero_order, "zero-order")?.resolve(&grid)?;
    cfg.forbid(&cfg.gradient, "gradient")?;
    cfg.forbid(&cfg.boundary, "boundary")?;
    let measure = grid.measure();
    let builder = Problem::builder(grid.clone())
        .kind(ProblemKind::ZeroOrder)
        .zero_order(m.clone());
    finish(cfg, builder, |_| nodewise_coercivity(&m.resolve(grid.len()).ok()?, measure))
}

/// `Σ w N(x, u) + Σ W M(x, |∇u|)` with homogeneous Dirichlet data. The
/// subgradient splits as `ξ = ξ_1 - div_h ξ_2` with `div_h = -M^{-1} D^T W`.
pub fn make_musielak_sobolev<T: Real>(cfg: &InstanceConfig<T>) -> Result<Problem<T>> {
    let grid = Arc::new(cfg.domain.grid()?);
    let m = cfg.require(&cfg.gradient, "gradient")?.resolve(&grid)?;
    let n = cfg.require(&cfg.zero_order, "zero-order")?.resolve(&grid)?;
    cfg.forbid(&cfg.boundary, "boundary")?;
    let measure = grid.measure();
    let builder = Problem::builder(grid.clone())
        .kind(ProblemKind::MusielakSobolev)
        .gradient(m)
        .zero_order(n.clone())
        .dirichlet(true);
    finish(cfg, builder, |_| nodewise_coercivity(&n.resolve(grid.len()).ok()?, measure))
}

/// `½ Σ W |∇u|² + Σ w M(x, u) + Σ_Γ w_Γ M_Γ(y, u)` on `L²(Ω) × L²(Γ)`. The
/// boundary unknowns are the boundary nodes of the bulk grid, so the trace
/// constraint holds by construction.
pub fn make_dynamic_boundary<T: Real>(cfg: &InstanceConfig<T>) -> Result<Problem<T>> {
    let grid = Arc::new(cfg.domain.grid()?.with_boundary_trace()?);
    if let Some(g) = &cfg.gradient {
        if g.family != PhiFamilyConfig::Quadratic {
            return Err(Error::InvalidInput(
                "dynamic boundary instances use the Dirichlet energy in the bulk".into(),
            ));
        }
    }
    let gradient = match &cfg.gradient {
        Some(g) => g.resolve(&grid)?,
        None => PhiSpec::quadratic(),
    };
    let mg = cfg.require(&cfg.boundary, "boundary")?.resolve(&grid)?;
    let m = cfg.zero_order.as_ref().map(|c| c.resolve(&grid)).transpose()?;
    let mut builder = Problem::builder(grid.clone())
        .kind(ProblemKind::DynamicBoundary)
        .gradient(gradient)
        .boundary(mg);
    if let Some(m) = m {
        builder = builder.zero_order(m);
    }
    finish(cfg, builder, |p| {
        let trace = grid.trace()?;
        let bulk: Vec<LocalPhi<T>> = p.node_terms().iter().filter_map(|t| t.first().map(|x| x.1)).collect();
        if cfg.zero_order.is_none() || bulk.len() != grid.len() {
            return None;
        }
        let boundary: Vec<LocalPhi<T>> = trace
            .nodes()
            .iter()
            .map(|&i| p.node_terms()[i].last().map(|x| x.1))
            .collect::<Option<_>>()?;
        let all: Vec<LocalPhi<T>> = bulk.into_iter().chain(boundary).collect();
        nodewise_coercivity(&all, grid.measure() + trace.measure())
    })
}

/// p-growth gradient energy `Σ W M(x, |∇u|)` with homogeneous Dirichlet data:
/// the regression baseline.
pub fn make_classical_variational<T: Real>(cfg: &InstanceConfig<T>) -> Result<Problem<T>> {
    let grid = Arc::new(cfg.domain.grid()?);
    let m = cfg.require(&cfg.gradient, "gradient")?.resolve(&grid)?;
    cfg.forbid(&cfg.zero_order, "zero-order")?;
    cfg.forbid(&cfg.boundary, "boundary")?;
    match m.family() {
        PhiFamily::Power { .. }
        | PhiFamily::Weighted { .. }
        | PhiFamily::VariableExponent { .. }
        | PhiFamily::Quadratic => {}
        _ => {
            return Err(Error::InvalidSpec(format!(
                "classical variational instances need a p-growth integrand, got {}",
                m.name()
            )))
        }
    }
    let builder = Problem::builder(grid)
        .kind(ProblemKind::ClassicalVariational)
        .gradient(m)
        .dirichlet(true);
    finish(cfg, builder, gradient_coercivity)
}

pub fn make_instance<T: Real>(cfg: &InstanceConfig<T>) -> Result<Problem<T>> {
    match cfg.family {
        ProblemKind::ReactionDiffusion => make_reaction_diffusion(cfg),
        ProblemKind::ZeroOrder => make_zero_order(cfg),
        ProblemKind::MusielakSobolev => make_musielak_sobolev(cfg),
        ProblemKind::DynamicBoundary => make_dynamic_boundary(cfg),
        ProblemKind::ClassicalVariational => make_classical_variational(cfg),
        ProblemKind::Custom => Err(Error::InvalidInput(
            "custom problems are assembled with ProblemBuilder".into(),
        )),
    }
}

pub const PRESETS: [&str; 8] = [
    "heat",
    "heat_2d",
    "reaction_diffusion",
    "zero_order_exp",
    "variable_exponent",
    "musielak_sobolev",
    "dynamic_boundary",
    "classical_p4",
];

/// Named instances on `[0, 1]` (or the unit square).
pub fn preset<T: Real>(name: &str) -> Option<InstanceConfig<T>> {
    let l = T::lit;
    let unit = DomainConfig::interval(T::zero(), T::one(), 33);
    let power = |p: f64| PhiConfig::new(PhiFamilyConfig::Power { p: l(p) });
    let normalized = |p: f64| PhiConfig::scaled(PhiFamilyConfig::Power { p: l(p) }, l(1.0 / p));
    let base = |family, domain| InstanceConfig {
        family,
        domain,
        gradient: None,
        zero_order: None,
        boundary: None,
        coercivity: None,
    };
    let cfg = match name {
        "heat" => InstanceConfig {
            gradient: Some(normalized(2.0)),
            ..base(ProblemKind::ClassicalVariational, unit)
        },
        "heat_2d" => InstanceConfig {
            gradient: Some(normalized(2.0)),
            ..base(
                ProblemKind::ClassicalVariational,
                DomainConfig::rectangle([T::zero(), T::one()], [T::zero(), T::one()], 17, 17),
            )
        },
        "reaction_diffusion" => InstanceConfig {
            gradient: Some(power(3.0)),
            zero_order: Some(power(5.0)),
            ..base(ProblemKind::ReactionDiffusion, unit)
        },
        "zero_order_exp" => InstanceConfig {
            zero_order: Some(PhiConfig::new(PhiFamilyConfig::OrliczExp { p: l(2.0) })),
            ..base(ProblemKind::ZeroOrder, unit)
        },
        "variable_exponent" => InstanceConfig {
            zero_order: Some(PhiConfig::new(PhiFamilyConfig::VariableExponent {
                p: FieldSource::Linear { linear: [l(2.0), l(3.0)] },
            })),
            ..base(ProblemKind::ZeroOrder, unit)
        },
        "musielak_sobolev" => InstanceConfig {
            gradient: Some(PhiConfig::new(PhiFamilyConfig::DoublePhase {
                p: l(2.0),
                q: l(4.0),
                a: FieldSource::Linear { linear: [T::zero(), T::one()] },
            })),
            zero_order: Some(power(2.0)),
            ..base(ProblemKind::MusielakSobolev, unit)
        },
        "dynamic_boundary" => InstanceConfig {
            zero_order: Some(PhiConfig::new(PhiFamilyConfig::Quadratic)),
            boundary: Some(PhiConfig::new(PhiFamilyConfig::OrliczExp { p: l(2.0) })),
            ..base(ProblemKind::DynamicBoundary, unit)
        },
        "classical_p4" => InstanceConfig {
            gradient: Some(power(4.0)),
            ..base(ProblemKind::ClassicalVariational, unit)
        },
        _ => return None,
    };
    Some(cfg)
}

/// `sin(πx)` or `sin(πx) sin(πy)` on the bounding box of the grid.
pub fn sine_bump<T: Real>(grid: &Arc<Grid<T>>) -> GridFunction<T> {
    let first = grid.point(0);
    let last = grid.point(grid.len() - 1);
    let pi = T::PI();
    let unit = |v: T, a: T, b: T| if b > a { (v - a) / (b - a) } else { T::lit(0.5) };
    GridFunction::from_fn(grid.clone(), |x| {
        let mut v = (pi * unit(x[0], first[0], last[0])).sin();
        if grid.dim() == 2 {
            v = v * (pi * unit(x[1], first[1], last[1])).sin();
        }
        v
    })
    .expect("sampled on its own grid")
}

/// Samples `φ(u) >= c ‖u‖^s` on random states with log-uniform amplitude in
/// `[1e-2, 10]`. The value is the worst `(c ‖u‖^s - φ(u)) / (1 + c ‖u‖^s)`.
pub fn check_coercivity<T: Real, R: Rng + ?Sized>(
    problem: &Problem<T>,
    samples: usize,
    rng: &mut R,
    tol: f64,
) -> Result<Option<Check>> {
    let Some((c, s)) = problem.coercivity() else {
        return Ok(None);
    };
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let amp = 10f64.powf(rng.gen_range(-2.0..1.0));
        let v = (0..problem.len())
            .map(|i| {
                if problem.free()[i] {
                    T::lit(amp * rng.gen_range(-1.0..1.0))
                } else {
                    T::zero()
                }
            })
            .collect();
        let u = GridFunction::new(problem.grid().clone(), v)?;
        let floor = c * problem.norm(&u)?.powf(s);
        let phi = problem.evaluate(&u)?.value();
        let excess = ((floor - phi) / (T::one() + floor)).as_f64();
        worst = if excess.is_nan() { f64::INFINITY } else { worst.max(excess) };
    }
    Ok(Some(Check::at_most("coercivity", worst, tol)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{
        energy_report, solve_implicit_euler, subdiff_residual, ConstantForcing, ZeroForcing,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(name: &str) -> InstanceConfig<f64> {
        preset(name).unwrap()
    }

    #[test]
    fn presets_build_and_are_coercive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for name in PRESETS {
            let p = make_instance(&cfg(name)).unwrap();
            if let Some(check) = check_coercivity(&p, 200, &mut rng, 1e-12).unwrap() {
                assert!(check.passed, "{name}: {check}");
            } else {
                assert!(matches!(name, "variable_exponent"), "{name} has no coercivity");
            }
        }
    }

    #[test]
    fn heat_eigen_decay_64_nodes() {
        let c = InstanceConfig {
            domain: DomainConfig::interval(0.0, 1.0, 64),
            gradient: Some(PhiConfig::new(PhiFamilyConfig::Quadratic)),
            zero_order: Some(PhiConfig::new(PhiFamilyConfig::Quadratic)),
            ..cfg("reaction_diffusion")
        };
        let p = make_reaction_diffusion(&c).unwrap();
        let h = 1.0 / 63.0;
        let tau = 1e-3;
        for j in [1usize, 3] {
            let u0 = GridFunction::from_fn(p.grid().clone(), |x| (j as f64 * std::f64::consts::PI * x[0]).sin())
                .unwrap();
            let mu = 4.0 / (h * h) * (j as f64 * std::f64::consts::PI * h / 2.0).sin().powi(2);
            let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, tau, 0.05).unwrap();
            for (k, u) in traj.states.iter().enumerate() {
                let f = (1.0 + tau * (mu + 1.0)).powi(-(k as i32));
                let exact = u0.scaled(f);
                let err = p.norm(&u.axpy(-1.0, &exact).unwrap()).unwrap();
                assert!(err <= 1e-8 * p.norm(&exact).unwrap(), "j = {j}, k = {k}: {err}");
            }
        }
    }

    #[test]
    fn heat_mesh_refinement_second_order() {
        let pi = std::f64::consts::PI;
        let tau = 1e-3;
        let mut errors = Vec::new();
        for n in [9, 17, 33, 65] {
            let c = InstanceConfig {
                domain: DomainConfig::interval(0.0, 1.0, n),
                ..cfg("heat")
            };
            let p = make_classical_variational(&c).unwrap();
            let u0 = sine_bump(p.grid());
            let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, tau, 0.1).unwrap();
            let k = traj.steps() as i32;
            let exact = u0.scaled((1.0 + tau * pi * pi).powi(-k));
            errors.push(
                p.norm(&traj.final_state().axpy(-1.0, &exact).unwrap()).unwrap()
                    / p.norm(&exact).unwrap(),
            );
        }
        for w in errors.windows(2) {
            let r = w[0] / w[1];
            assert!((3.5..4.5).contains(&r), "{errors:?}");
        }
    }

    #[test]
    fn symmetric_data_stays_symmetric() {
        for name in ["reaction_diffusion", "heat_2d", "dynamic_boundary"] {
            let p = make_instance(&cfg(name)).unwrap();
            let g = p.grid().clone();
            let u0 = sine_bump(&g).map(|v| 0.8 * v + 0.2 * v * v);
            let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, 0.01, 0.1).unwrap();
            for u in &traj.states {
                for axis in 0..g.dim() {
                    for i in 0..g.len() {
                        let d = (u.values()[i] - u.values()[g.mirror(i, axis)]).abs();
                        assert!(d < 1e-12, "{name}: asymmetry {d}");
                    }
                }
            }
        }
    }

    #[test]
    fn dissipation_and_certificates_along_presets() {
        for name in PRESETS {
            let p = make_instance(&cfg(name)).unwrap();
            let u0 = sine_bump(p.grid());
            let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, 0.02, 0.2).unwrap();
            let r = energy_report(&p, &traj, 1e-9).unwrap();
            assert!(r.passed(), "{name}\n{}", r.to_csv());
            let s = subdiff_residual(&p, &traj, 1e-8).unwrap();
            assert!(s.passed(), "{name}\n{}", s.to_csv());
        }
    }

    #[test]
    fn zero_data_gives_zero_for_every_preset() {
        for name in PRESETS {
            let p = make_instance(&cfg(name)).unwrap();
            let traj =
                solve_implicit_euler(&p, &GridFunction::zeros(p.grid().clone()), &ZeroForcing, 0.1, 0.5)
                    .unwrap();
            assert!(traj.states.iter().all(|u| u.is_zero()), "{name}");
        }
    }

    #[test]
    fn product_norm_decays_with_dynamic_boundary() {
        let c = InstanceConfig {
            boundary: Some(PhiConfig::new(PhiFamilyConfig::Quadratic)),
            ..cfg("dynamic_boundary")
        };
        let p = make_dynamic_boundary(&c).unwrap();
        let u0 = GridFunction::from_fn(p.grid().clone(), |x| 1.0 + x[0]).unwrap();
        let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, 0.01, 0.5).unwrap();
        let norms: Vec<f64> = traj.states.iter().map(|u| p.norm(u).unwrap()).collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
        // boundary mass enters the Hilbert norm
        let one = GridFunction::from_fn(p.grid().clone(), |_| 1.0).unwrap();
        assert!((p.inner(&one, &one).unwrap() - 3.0).abs() < 1e-14);
    }

    fn rk4<const N: usize>(mut y: [f64; N], t: f64, dt: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
        let steps = (t / dt).round() as usize;
        let add = |a: &[f64; N], b: &[f64; N], c: f64| {
            let mut out = *a;
            for i in 0..N {
                out[i] += c * b[i];
            }
            out
        };
        for _ in 0..steps {
            let k1 = f(&y);
            let k2 = f(&add(&y, &k1, dt / 2.0));
            let k3 = f(&add(&y, &k2, dt / 2.0));
            let k4 = f(&add(&y, &k3, dt));
            for i in 0..N {
                y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }

    #[test]
    fn exponential_boundary_matches_ode_oracle() {
        // three nodes on [0, 1], h = 1/2: bulk heat flow, exp(z^2) - 1 on both ends
        let c = InstanceConfig {
            domain: DomainConfig::interval(0.0, 1.0, 3),
            zero_order: None,
            ..cfg("dynamic_boundary")
        };
        let p = make_dynamic_boundary(&c).unwrap();
        let u0 = GridFunction::new(p.grid().clone(), vec![0.6, 0.0, -0.3]).unwrap();
        let h = 0.5;
        let dm = |z: f64| 2.0 * z * (z * z).exp();
        let t_final = 0.2;
        let exact = rk4([0.6, 0.0, -0.3], t_final, 1e-5, |u| {
            let flux = [(u[1] - u[0]) / h, (u[2] - u[1]) / h];
            [
                (flux[0] - dm(u[0])) / (h / 2.0 + 1.0),
                (flux[1] - flux[0]) / h,
                (-flux[1] - dm(u[2])) / (h / 2.0 + 1.0),
            ]
        });
        let mut errs = Vec::new();
        for tau in [4e-3, 1e-3, 2.5e-4, 6.25e-5] {
            let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, tau, t_final).unwrap();
            let e = traj
                .final_state()
                .values()
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        assert!(errs[3] < 1e-4, "{errs:?}");
    }

    #[test]
    fn exponential_zero_order_matches_explicit_oracle() {
        let c = InstanceConfig {
            domain: DomainConfig::interval(0.0, 1.0, 3),
            ..cfg("zero_order_exp")
        };
        let p = make_zero_order(&c).unwrap();
        let u0 = GridFunction::new(p.grid().clone(), vec![0.5, -0.9, 0.0]).unwrap();
        let t_final: f64 = 0.25;
        let oracle = |z0: f64| {
            let dt = 1e-6;
            let mut z = z0;
            for _ in 0..(t_final / dt).round() as usize {
                z -= dt * 2.0 * z * (z * z).exp();
            }
            z
        };
        let exact: Vec<f64> = u0.values().iter().map(|&z| oracle(z)).collect();
        let mut errs = Vec::new();
        for tau in [2e-3, 1e-3] {
            let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, tau, t_final).unwrap();
            let e = traj
                .final_state()
                .values()
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[1] < 1e-3, "{errs:?}");
        let ratio = errs[0] / errs[1];
        assert!((1.7..2.3).contains(&ratio), "{errs:?}");
    }

    #[test]
    fn variable_exponent_nodewise_young() {
        let p = make_instance(&cfg("variable_exponent")).unwrap();
        let u0 = sine_bump(p.grid()).map(|v| 1.5 * v);
        let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, 0.05, 0.5).unwrap();
        let spec = cfg("variable_exponent").zero_order.unwrap().resolve(p.grid()).unwrap();
        for (u, xi) in traj.states[1..].iter().zip(&traj.subgradients) {
            for i in 0..p.len() {
                let m = spec.local(i).unwrap();
                let (z, y) = (u.values()[i], xi.values()[i]);
                let gap = m.eval(z) + m.conjugate(y).unwrap() - y * z;
                assert!(gap.abs() < 1e-8, "node {i}: {gap}");
            }
        }
    }

    #[test]
    fn p4_matches_coordinate_search_oracle() {
        let p = make_instance(&cfg("classical_p4")).unwrap();
        let n = 33;
        let h = 1.0 / 32.0;
        let tau = 1e-3;
        let u0 = sine_bump(p.grid());
        let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, tau, 3e-3).unwrap();
        // Gauss-Seidel sweeps with golden-section line searches on the step
        // objective h Σ |Du|^4 + h Σ (u - v)^2 / (2τ).
        let local = |u: &[f64], v: &[f64], i: usize, z: f64| {
            let a = ((z - u[i - 1]) / h).powi(4);
            let b = ((u[i + 1] - z) / h).powi(4);
            h * (a + b) + h * (z - v[i]).powi(2) / (2.0 * tau)
        };
        let mut v = u0.values().to_vec();
        for k in 1..=traj.steps() {
            let mut u = v.clone();
            for _sweep in 0..20_000 {
                let mut change = 0.0_f64;
                for i in 1..n - 1 {
                    let (mut lo, mut hi) = (u[i] - 0.1, u[i] + 0.1);
                    let r = 0.5 * (5f64.sqrt() - 1.0);
                    for _ in 0..80 {
                        let x1 = hi - r * (hi - lo);
                        let x2 = lo + r * (hi - lo);
                        if local(&u, &v, i, x1) < local(&u, &v, i, x2) {
                            hi = x2;
                        } else {
                            lo = x1;
                        }
                    }
                    let z = 0.5 * (lo + hi);
                    change = change.max((z - u[i]).abs());
                    u[i] = z;
                }
                if change < 1e-13 {
                    break;
                }
            }
            for (a, b) in traj.states[k].values().iter().zip(&u) {
                assert!((a - b).abs() <= 1e-3 * (1e-3 + b.abs()), "step {k}: {a} vs {b}");
            }
            v = u;
        }
    }

    #[test]
    fn constant_forcing_steady_state_zero_order() {
        let c = InstanceConfig {
            domain: DomainConfig::interval(0.0, 1.0, 3),
            zero_order: Some(PhiConfig::new(PhiFamilyConfig::Quadratic)),
            ..cfg("zero_order_exp")
        };
        let p = make_zero_order(&c).unwrap();
        let f = GridFunction::new(p.grid().clone(), vec![0.5, -1.0, 2.0]).unwrap();
        let traj =
            solve_implicit_euler(&p, &GridFunction::zeros(p.grid().clone()), &ConstantForcing(f.clone()), 1.0, 60.0)
                .unwrap();
        for (a, b) in traj.final_state().values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = cfg("reaction_diffusion");
        c.gradient = Some(PhiConfig::new(PhiFamilyConfig::Power { p: 1.5 }));
        assert!(matches!(make_instance(&c), Err(Error::InvalidSpec(_))));
        let mut c = cfg("heat");
        c.domain.nx = 2;
        assert!(make_instance(&c).is_err());
        let mut c = cfg("zero_order_exp");
        c.gradient = Some(PhiConfig::new(PhiFamilyConfig::Quadratic));
        assert!(make_instance(&c).is_err());
        let mut c = cfg("dynamic_boundary");
        c.boundary = None;
        assert!(make_instance(&c).is_err());
        let mut c = cfg("classical_p4");
        c.gradient = Some(PhiConfig::new(PhiFamilyConfig::LLogL));
        assert!(make_instance(&c).is_err());
        let mut c = cfg("heat");
        c.family = ProblemKind::Custom;
        assert!(make_instance(&c).is_err());
    }

    #[test]
    fn linear_field_spans_the_domain() {
        let field: FieldSource<f64> = FieldSource::Linear { linear: [0.0, 2.0] };
        let g = Grid::<f64>::interval(0.0, 2.0, 5).unwrap();
        assert_eq!(field.sample(&g).unwrap(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        let bad: FieldSource<f64> = FieldSource::Values(vec![1.0; 4]);
        assert!(bad.sample(&g).is_err());
    }
}
