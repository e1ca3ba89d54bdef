//! Time discretization of `∂_t u + ∂φ(u) ∋ f`, `u(0) = u_0`, and
//! certification of the evolution identities along discrete trajectories.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convex::{resolvent_from, Problem, ResolventOptions};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::report::{Check, DiagnosticsReport};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme<T> {
    /// `u^k = J_τ(u^{k-1} + τ f^{k-1})`.
    ImplicitEuler { tau: T },
    /// `u^k = u^{k-1} + τ (f^{k-1} - A_λ u^k)`.
    YosidaFlow { lambda: T, tau: T },
}

impl<T: Real> Scheme<T> {
    pub fn tau(&self) -> T {
        match *self {
            Scheme::ImplicitEuler { tau } | Scheme::YosidaFlow { tau, .. } => tau,
        }
    }

    pub fn lambda(&self) -> Option<T> {
        match *self {
            Scheme::ImplicitEuler { .. } => None,
            Scheme::YosidaFlow { lambda, .. } => Some(lambda),
        }
    }

    pub fn with_tau(&self, tau: T) -> Self {
        match *self {
            Scheme::ImplicitEuler { .. } => Scheme::ImplicitEuler { tau },
            Scheme::YosidaFlow { lambda, .. } => Scheme::YosidaFlow { lambda, tau },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        let valid = match *self {
            Scheme::ImplicitEuler { tau } => ok(tau),
            Scheme::YosidaFlow { lambda, tau } => ok(lambda) && ok(tau),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "time step and regularization must be finite and > 0, got {self:?}"
            )))
        }
    }
}

/// Source term sampled on the grid.
pub trait Forcing<T: Real>: Send + Sync {
    fn sample(&self, t: T, grid: &Arc<Grid<T>>) -> Result<GridFunction<T>>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroForcing;

impl<T: Real> Forcing<T> for ZeroForcing {
    fn sample(&self, _t: T, grid: &Arc<Grid<T>>) -> Result<GridFunction<T>> {
        Ok(GridFunction::zeros(grid.clone()))
    }
}

/// Time-independent forcing.
#[derive(Clone, Debug)]
pub struct ConstantForcing<T>(pub GridFunction<T>);

impl<T: Real> Forcing<T> for ConstantForcing<T> {
    fn sample(&self, _t: T, grid: &Arc<Grid<T>>) -> Result<GridFunction<T>> {
        check_grid(grid, &self.0)?;
        Ok(self.0.clone())
    }
}

/// `f(t, x)` given pointwise.
pub struct FnForcing<F>(pub F);

impl<T: Real, F> Forcing<T> for FnForcing<F>
where
    F: Fn(T, [T; 2]) -> T + Send + Sync,
{
    fn sample(&self, t: T, grid: &Arc<Grid<T>>) -> Result<GridFunction<T>> {
        GridFunction::from_fn(grid.clone(), |x| (self.0)(t, x))
    }
}

/// Time slices with linear interpolation, constant beyond the first and
/// last slice. Rough forcing is only as good as its samples.
#[derive(Clone, Debug)]
pub struct SampledForcing<T> {
    times: Vec<T>,
    slices: Vec<GridFunction<T>>,
}

impl<T: Real> SampledForcing<T> {
    pub fn new(times: Vec<T>, slices: Vec<GridFunction<T>>) -> Result<Self> {
        if times.is_empty() || times.len() != slices.len() {
            return Err(Error::InvalidInput(format!(
                "need one slice per time, got {} times and {} slices",
                times.len(),
                slices.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "forcing times must be strictly increasing".into(),
            ));
        }
        for s in &slices[1..] {
            slices[0].check_same_grid(s)?;
        }
        Ok(SampledForcing { times, slices })
    }
}

impl<T: Real> Forcing<T> for SampledForcing<T> {
    fn sample(&self, t: T, grid: &Arc<Grid<T>>) -> Result<GridFunction<T>> {
        check_grid(grid, &self.slices[0])?;
        let last = self.times.len() - 1;
        if t <= self.times[0] {
            return Ok(self.slices[0].clone());
        }
        if t >= self.times[last] {
            return Ok(self.slices[last].clone());
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let theta = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.slices[k]
            .scaled(T::one() - theta)
            .axpy(theta, &self.slices[k + 1])
    }
}

fn check_grid<T: Real>(grid: &Arc<Grid<T>>, f: &GridFunction<T>) -> Result<()> {
    if **f.grid() == **grid {
        Ok(())
    } else {
        Err(Error::GridMismatch {
            expected: grid.len(),
            found: f.len(),
        })
    }
}

/// A discrete solution: `states[k] = u^k` at `times[k]` for `k = 0..=K`;
/// step quantities are indexed by `k - 1` for `k = 1..=K`.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub scheme: Scheme<T>,
    pub times: Vec<T>,
    pub states: Vec<GridFunction<T>>,
    /// `ξ^k`, recovered from `(u^k - u^{k-1})/τ + ξ^k = f^{k-1}`.
    pub subgradients: Vec<GridFunction<T>>,
    /// `f^{k-1}`, the forcing used by step `k`.
    pub forcing: Vec<GridFunction<T>>,
    /// The point at which `ξ^k` is a subgradient: `u^k` for implicit Euler,
    /// `J_λ u^k` for the Yosida flow.
    pub resolvent_states: Vec<GridFunction<T>>,
    pub inner_iterations: Vec<usize>,
}

impl<T: Real> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.subgradients.len()
    }

    pub fn tau(&self) -> T {
        self.scheme.tau()
    }

    pub fn final_state(&self) -> &GridFunction<T> {
        self.states.last().expect("trajectory has an initial state")
    }
}

#[derive(Clone, Debug, Default)]
pub struct FlowOptions<T> {
    /// Relative tolerance of every resolvent solve; `None` selects
    /// `min(1e-10, μ^2)` for the resolvent parameter `μ`.
    pub inner_tol: Option<T>,
}

/// Number of steps `K` with `K τ = T`.
pub fn step_count<T: Real>(tau: T, t_final: T) -> Result<usize> {
    if !(t_final > T::zero()) || !t_final.is_finite() {
        return Err(Error::InvalidInput(format!(
            "final time must be finite and > 0, got {t_final}"
        )));
    }
    let k = (t_final / tau).round();
    let mismatch = (k * tau - t_final).abs();
    if k < T::one() || mismatch > T::tol(1e-9) * t_final {
        return Err(Error::InvalidInput(format!(
            "final time {t_final} is not a multiple of the step {tau}"
        )));
    }
    k.to_usize()
        .ok_or_else(|| Error::InvalidInput("step count overflow".into()))
}

pub fn solve<T: Real>(
    problem: &Problem<T>,
    u0: &GridFunction<T>,
    forcing: &dyn Forcing<T>,
    scheme: Scheme<T>,
    t_final: T,
    opts: &FlowOptions<T>,
) -> Result<Trajectory<T>> {
    scheme.validate()?;
    let tau = scheme.tau();
    let steps = step_count(tau, t_final)?;
    let grid = problem.grid().clone();
    let mut u = problem.project(u0)?;
    let mut traj = Trajectory {
        scheme,
        times: vec![T::zero()],
        states: vec![u.clone()],
        subgradients: Vec::with_capacity(steps),
        forcing: Vec::with_capacity(steps),
        resolvent_states: Vec::with_capacity(steps),
        inner_iterations: Vec::with_capacity(steps),
    };
    let mu = match scheme {
        Scheme::ImplicitEuler { tau } => tau,
        Scheme::YosidaFlow { lambda, tau } => lambda + tau,
    };
    let ropts = ResolventOptions {
        tol: opts.inner_tol,
        ..Default::default()
    };
    for k in 1..=steps {
        let t_prev = tau * T::lit((k - 1) as f64);
        let f = problem.project(&forcing.sample(t_prev, &grid)?)?;
        let v = u.axpy(tau, &f)?;
        let r = resolvent_from(problem, &v, mu, &ropts, Some(&u)).map_err(|e| {
            Error::StepFailed {
                step: k,
                source: Box::new(e),
            }
        })?;
        let z = r.j_lambda_u;
        let next = match scheme {
            Scheme::ImplicitEuler { .. } => z.clone(),
            Scheme::YosidaFlow { lambda, .. } => {
                let a = lambda / mu;
                let b = tau / mu;
                v.with_values(
                    v.values()
                        .iter()
                        .zip(z.values())
                        .map(|(&vi, &zi)| a * vi + b * zi)
                        .collect(),
                )
            }
        };
        let xi = v.with_values(
            v.values()
                .iter()
                .zip(next.values())
                .map(|(&vi, &ni)| (vi - ni) / tau)
                .collect(),
        );
        traj.times.push(tau * T::lit(k as f64));
        traj.states.push(next.clone());
        traj.subgradients.push(xi);
        traj.forcing.push(f);
        traj.resolvent_states.push(z);
        traj.inner_iterations.push(r.iterations);
        u = next;
    }
    Ok(traj)
}

pub fn solve_implicit_euler<T: Real>(
    problem: &Problem<T>,
    u0: &GridFunction<T>,
    forcing: &dyn Forcing<T>,
    tau: T,
    t_final: T,
) -> Result<Trajectory<T>> {
    solve(
        problem,
        u0,
        forcing,
        Scheme::ImplicitEuler { tau },
        t_final,
        &FlowOptions::default(),
    )
}

pub fn solve_yosida_flow<T: Real>(
    problem: &Problem<T>,
    u0: &GridFunction<T>,
    forcing: &dyn Forcing<T>,
    lambda: T,
    tau: T,
    t_final: T,
) -> Result<Trajectory<T>> {
    solve(
        problem,
        u0,
        forcing,
        Scheme::YosidaFlow { lambda, tau },
        t_final,
        &FlowOptions::default(),
    )
}

/// Energy balance along a trajectory.
#[derive(Clone, Debug)]
pub struct EnergyBalance<T> {
    /// `R_k = |½‖u^k‖² + Σ_{j<=k} τ (ξ^j, u^j) - ½‖u_0‖² - Σ_{j<=k} τ (f^{j-1}, u^j)|`,
    /// the sums evaluated at the step ends as in the scheme's own identity.
    pub rectangle: Vec<T>,
    /// Same with `(u^j + u^{j-1})/2` in the pairings; exact for the scheme.
    pub trapezoid: Vec<T>,
    /// `½ Σ_{j<=k} ‖u^j - u^{j-1}‖²`, which `rectangle` must equal.
    pub dissipation: Vec<T>,
    /// Normalization `1 + ½‖u_0‖² + Σ τ |(f, u)|`.
    pub scale: T,
}

impl<T: Real> EnergyBalance<T> {
    pub fn max_rectangle(&self) -> T {
        self.rectangle.iter().fold(T::zero(), |a, &b| a.max(b))
    }

    pub fn max_trapezoid(&self) -> T {
        self.trapezoid.iter().fold(T::zero(), |a, &b| a.max(b))
    }
}

pub fn energy_balance<T: Real>(problem: &Problem<T>, traj: &Trajectory<T>) -> Result<EnergyBalance<T>> {
    let tau = traj.tau();
    let half = T::lit(0.5);
    let e0 = half * problem.inner(&traj.states[0], &traj.states[0])?;
    let mut acc_rect = T::zero();
    let mut acc_trap = T::zero();
    let mut acc_diss = T::zero();
    let mut scale = T::one() + e0;
    let mut rectangle = vec![T::zero()];
    let mut trapezoid = vec![T::zero()];
    let mut dissipation = vec![T::zero()];
    for k in 1..=traj.steps() {
        let u = &traj.states[k];
        let prev = &traj.states[k - 1];
        let xi = &traj.subgradients[k - 1];
        let f = &traj.forcing[k - 1];
        let mid = prev.axpy(T::one(), u)?.scaled(half);
        let du = u.axpy(-T::one(), prev)?;
        acc_rect = acc_rect + tau * (problem.inner(xi, u)? - problem.inner(f, u)?);
        acc_trap = acc_trap + tau * (problem.inner(xi, &mid)? - problem.inner(f, &mid)?);
        acc_diss = acc_diss + half * problem.inner(&du, &du)?;
        scale = scale + tau * problem.inner(f, u)?.abs();
        let ek = half * problem.inner(u, u)?;
        rectangle.push((ek + acc_rect - e0).abs());
        trapezoid.push((ek + acc_trap - e0).abs());
        dissipation.push(acc_diss);
    }
    Ok(EnergyBalance {
        rectangle,
        trapezoid,
        dissipation,
        scale,
    })
}

/// Energy-equality diagnostics.
///
/// Checks the algebraic step relation, the exact trapezoid balance, the
/// identity `R_k = ½ Σ ‖u^j - u^{j-1}‖²` for the rectangle residual, and the
/// first-order bound `max_k R_k <= τ (φ(u_0) + ½ Σ τ ‖f^j‖²)`. For zero
/// forcing it also checks `‖u^k‖ <= ‖u^{k-1}‖` and, for implicit Euler,
/// `φ(u^k) <= φ(u^{k-1})`.
pub fn energy_report<T: Real>(
    problem: &Problem<T>,
    traj: &Trajectory<T>,
    tol: f64,
) -> Result<DiagnosticsReport> {
    let bal = energy_balance(problem, traj)?;
    let tau = traj.tau();
    let scale = bal.scale.as_f64();
    let mut report = DiagnosticsReport::new("energy");

    let mut step_identity = T::zero();
    let mut convexity = T::zero();
    let mut forcing_sq = T::zero();
    let mut stability = T::zero();
    let mut dissipation = T::zero();
    let zero_forcing = traj.forcing.iter().all(|f| f.is_zero());
    let mut phi_prev = problem.evaluate(&traj.states[0])?.value();
    let phi0 = phi_prev;
    for k in 1..=traj.steps() {
        let u = &traj.states[k];
        let prev = &traj.states[k - 1];
        let xi = &traj.subgradients[k - 1];
        let f = &traj.forcing[k - 1];
        let lhs = u.axpy(-T::one(), prev)?.scaled(tau.recip()).axpy(T::one(), xi)?;
        let defect = lhs.axpy(-T::one(), f)?;
        let rel = problem.norm(&defect)? / (T::one() + problem.norm(f)? + problem.norm(xi)?);
        step_identity = step_identity.max(rel);
        let half = T::lit(0.5);
        let gain = half * (problem.inner(u, u)? - problem.inner(prev, prev)?)
            - tau * (problem.inner(f, u)? - problem.inner(xi, u)?);
        convexity = convexity.max(gain / bal.scale);
        forcing_sq = forcing_sq + tau * problem.inner(f, f)?;
        if zero_forcing {
            stability = stability.max(problem.norm(u)? - problem.norm(prev)?);
            if traj.scheme.lambda().is_none() {
                let phi = problem.evaluate(u)?.value();
                dissipation = dissipation.max((phi - phi_prev) / (T::one() + phi_prev.abs()));
                phi_prev = phi;
            }
        }
    }
    let identity_gap = bal
        .rectangle
        .iter()
        .zip(&bal.dissipation)
        .fold(T::zero(), |a, (&r, &d)| a.max((r - d).abs()));
    let bound = tau * (phi0 + T::lit(0.5) * forcing_sq);
    report
        .push(Check::at_most("scheme_identity", step_identity.as_f64(), tol))
        .push(Check::at_most(
            "energy_trapezoid",
            bal.max_trapezoid().as_f64() / scale,
            tol,
        ))
        .push(Check::at_most(
            "energy_rectangle_identity",
            identity_gap.as_f64() / scale,
            tol,
        ))
        .push(Check::at_most(
            "energy_rectangle_bound",
            bal.max_rectangle().as_f64(),
            bound.as_f64() + tol * scale,
        ))
        .push(Check::at_most("step_convexity", convexity.as_f64(), tol));
    if zero_forcing {
        report.push(Check::at_most("stability", stability.as_f64(), tol));
        if traj.scheme.lambda().is_none() {
            report.push(Check::at_most("dissipation", dissipation.as_f64(), tol));
        }
    }
    report
        .push_series("energy_rectangle", bal.rectangle.iter().map(|v| v.as_f64()).collect())
        .push_series("energy_trapezoid", bal.trapezoid.iter().map(|v| v.as_f64()).collect());
    Ok(report)
}

/// Per-step Young-equality gap `φ(z^k) + φ*(ξ^k) - (ξ^k, z^k)` at the point
/// `z^k` where `ξ^k` is a subgradient, relative to `1 + φ(z^k)`.
pub fn subdiff_residual<T: Real>(
    problem: &Problem<T>,
    traj: &Trajectory<T>,
    tol: f64,
) -> Result<DiagnosticsReport> {
    let mut gaps = Vec::with_capacity(traj.steps());
    for (z, xi) in traj.resolvent_states.iter().zip(&traj.subgradients) {
        let c = problem.young_certificate(z, xi)?;
        gaps.push(c.gap.abs().as_f64() / (1.0 + c.phi.as_f64()));
    }
    let worst = gaps.iter().fold(0.0_f64, |a, &b| if b.is_nan() { f64::INFINITY } else { a.max(b) });
    let mut report = DiagnosticsReport::new("subdifferential");
    report
        .push(Check::at_most("young_equality", worst, tol))
        .push_series("young_gap", gaps);
    Ok(report)
}

/// Initial state and forcing of one evolution.
pub struct FlowData<'a, T> {
    pub u0: GridFunction<T>,
    pub forcing: &'a dyn Forcing<T>,
}

#[derive(Clone, Debug)]
pub struct Dependence<T> {
    /// `max_k ‖Δu^k‖² + Σ_k τ (Δξ^k, Δu^k)`
    pub lhs: T,
    /// `2 (‖Δu_0‖² + (Σ_k τ ‖Δf^k‖)²)`
    pub rhs: T,
    pub min_pairing: T,
    pub report: DiagnosticsReport,
}

/// Solves both evolutions and checks the stability bound
/// `max ‖Δu‖² + ∫ [Δξ, Δu] <= 2 (‖Δu_0‖² + ‖Δf‖²_{L^1(H)})` together with
/// the monotonicity `(Δξ^k, Δu^k) >= 0` at every step.
pub fn continuous_dependence_check<T: Real>(
    problem: &Problem<T>,
    first: &FlowData<'_, T>,
    second: &FlowData<'_, T>,
    scheme: Scheme<T>,
    t_final: T,
    tol: f64,
) -> Result<Dependence<T>> {
    let opts = FlowOptions::default();
    let a = solve(problem, &first.u0, first.forcing, scheme, t_final, &opts)?;
    let b = solve(problem, &second.u0, second.forcing, scheme, t_final, &opts)?;
    dependence_of(problem, &a, &b, tol)
}

/// [`continuous_dependence_check`] on precomputed trajectories.
pub fn dependence_of<T: Real>(
    problem: &Problem<T>,
    a: &Trajectory<T>,
    b: &Trajectory<T>,
    tol: f64,
) -> Result<Dependence<T>> {
    if a.steps() != b.steps() || a.tau() != b.tau() {
        return Err(Error::InvalidInput("trajectories use different time grids".into()));
    }
    let tau = a.tau();
    let du0 = a.states[0].axpy(-T::one(), &b.states[0])?;
    let mut sup = problem.inner(&du0, &du0)?;
    let mut pair_sum = T::zero();
    let mut forcing_l1 = T::zero();
    let mut min_pairing = T::infinity();
    let mut pairings = Vec::with_capacity(a.steps());
    for k in 1..=a.steps() {
        let du = a.states[k].axpy(-T::one(), &b.states[k])?;
        let dxi = a.subgradients[k - 1].axpy(-T::one(), &b.subgradients[k - 1])?;
        let df = a.forcing[k - 1].axpy(-T::one(), &b.forcing[k - 1])?;
        sup = sup.max(problem.inner(&du, &du)?);
        let p = problem.inner(&dxi, &du)?;
        min_pairing = min_pairing.min(p);
        pairings.push(p.as_f64());
        pair_sum = pair_sum + tau * p;
        forcing_l1 = forcing_l1 + tau * problem.norm(&df)?;
    }
    let lhs = sup + pair_sum;
    let rhs = T::lit(2.0) * (problem.inner(&du0, &du0)? + forcing_l1 * forcing_l1);
    let mut report = DiagnosticsReport::new("continuous_dependence");
    report
        .push(Check::at_most(
            "stability_bound",
            (lhs - rhs).max(T::zero()).as_f64(),
            tol,
        ))
        .push(Check::at_most(
            "monotonicity",
            (-min_pairing).max(T::zero()).as_f64(),
            tol,
        ))
        .push_series("pairing", pairings);
    Ok(Dependence {
        lhs,
        rhs,
        min_pairing: if min_pairing.is_finite() { min_pairing } else { T::zero() },
        report,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaRow<T> {
    pub lambda: T,
    /// `max_k ‖u_λ^k - u^k‖_H` against implicit Euler with the same step.
    pub distance: T,
    /// `Σ τ φ(J_λ u_λ^k)`
    pub int_phi_j: T,
    /// `Σ τ φ*(A_λ u_λ^k)`
    pub int_conj_a: T,
    /// `λ Σ τ ‖A_λ u_λ^k‖²`
    pub lambda_a_sq: T,
}

#[derive(Clone, Debug)]
pub struct LambdaStudy<T> {
    pub rows: Vec<LambdaRow<T>>,
    /// `½‖u_0‖² + S (‖u_0‖ + S)` with `S = Σ τ ‖f^k‖`: the a-priori bound of
    /// the three integrals.
    pub data_bound: T,
    pub report: DiagnosticsReport,
}

/// Yosida flows along `lambdas` against the implicit-Euler reference.
///
/// Reports the three quantities of the a-priori estimate. The estimate bounds
/// their sum by one constant, so the sum and each quantity must stay below
/// `growth` times the sum at the largest `λ` plus `slack · data_bound`. Also
/// checks the sum against the data bound itself and that the distance to the
/// reference decreases with `λ`.
#[allow(clippy::too_many_arguments)]
pub fn lambda_convergence_study<T: Real>(
    problem: &Problem<T>,
    u0: &GridFunction<T>,
    forcing: &dyn Forcing<T>,
    lambdas: &[T],
    tau: T,
    t_final: T,
    growth: f64,
    slack: f64,
) -> Result<LambdaStudy<T>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidInput("empty lambda schedule".into()));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(|a, b| b.partial_cmp(a).expect("finite lambda"));
    let opts = FlowOptions::default();
    let reference = solve(problem, u0, forcing, Scheme::ImplicitEuler { tau }, t_final, &opts)?;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        let traj = solve(problem, u0, forcing, Scheme::YosidaFlow { lambda, tau }, t_final, &opts)?;
        let mut distance = T::zero();
        for (a, b) in traj.states.iter().zip(&reference.states) {
            distance = distance.max(problem.norm(&a.axpy(-T::one(), b)?)?);
        }
        let (mut ip, mut ic, mut ia) = (T::zero(), T::zero(), T::zero());
        for (z, xi) in traj.resolvent_states.iter().zip(&traj.subgradients) {
            let cert = problem.young_certificate(z, xi)?;
            ip = ip + tau * cert.phi;
            ic = ic + tau * cert.conj_upper;
            ia = ia + tau * lambda * problem.inner(xi, xi)?;
        }
        rows.push(LambdaRow {
            lambda,
            distance,
            int_phi_j: ip,
            int_conj_a: ic,
            lambda_a_sq: ia,
        });
    }
    let u0p = problem.project(u0)?;
    let n0 = problem.norm(&u0p)?;
    let s: T = reference
        .forcing
        .iter()
        .map(|f| problem.norm(f).map(|n| tau * n))
        .sum::<Result<T>>()?;
    let data_bound = T::lit(0.5) * n0 * n0 + s * (n0 + s);

    let mut report = DiagnosticsReport::new("lambda_study");
    let first = &rows[0];
    let total = |r: &LambdaRow<T>| (r.int_phi_j + r.int_conj_a + r.lambda_a_sq).as_f64();
    let bound = growth * total(first) + slack * data_bound.as_f64() + f64::MIN_POSITIVE;
    let quantity = |name: &str, get: &dyn Fn(&LambdaRow<T>) -> f64| -> Check {
        let worst = rows.iter().map(get).fold(0.0, f64::max);
        Check::at_most(format!("{name}_bounded"), worst, bound)
    };
    report
        .push(quantity("int_phi_j", &|r| r.int_phi_j.as_f64()))
        .push(quantity("int_conj_a", &|r| r.int_conj_a.as_f64()))
        .push(quantity("lambda_a_sq", &|r| r.lambda_a_sq.as_f64()))
        .push(quantity("sum", &total));
    let excess = rows
        .iter()
        .map(|r| (r.int_phi_j + r.int_conj_a + r.lambda_a_sq - data_bound).as_f64())
        .fold(0.0, f64::max);
    report.push(Check::at_most(
        "a_priori_bound",
        excess,
        1e-8 * (1.0 + data_bound.as_f64()),
    ));
    let increase = rows
        .windows(2)
        .map(|w| (w[1].distance - w[0].distance).as_f64())
        .fold(0.0, f64::max);
    report.push(Check::at_most(
        "distance_monotone",
        increase,
        1e-12 + 1e-9 * first.distance.as_f64(),
    ));
    report.push_series("lambda", rows.iter().map(|r| r.lambda.as_f64()).collect());
    report.push_series("distance", rows.iter().map(|r| r.distance.as_f64()).collect());
    Ok(LambdaStudy {
        rows,
        data_bound,
        report,
    })
}

/// `‖u_0‖ / ‖∂φ(u_0)‖`, the time scale on which the flow leaves `u_0`;
/// infinite at a minimizer.
pub fn relaxation_time<T: Real>(problem: &Problem<T>, u0: &GridFunction<T>) -> Result<T> {
    let u0 = problem.project(u0)?;
    let rate = problem.norm(&problem.subgradient(&u0)?)?;
    Ok(if rate > T::zero() {
        problem.norm(&u0)? / rate
    } else {
        T::infinity()
    })
}

/// Halves `tau` until it is at most the relaxation time of `u0`. Refinement
/// studies started above that time see the initial layer inside one step,
/// and their halving ratios are not yet asymptotic.
pub fn resolving_step<T: Real>(problem: &Problem<T>, u0: &GridFunction<T>, tau: T) -> Result<T> {
    let relax = relaxation_time(problem, u0)?;
    let mut tau = tau;
    while tau > relax {
        tau = tau * T::lit(0.5);
    }
    Ok(tau)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementRow<T> {
    pub tau: T,
    pub max_residual: T,
}

/// Max-in-time rectangle energy residual under repeated halving of `τ`.
/// Returns the rows and the successive ratios `R(τ)/R(τ/2)`.
pub fn energy_refinement<T: Real>(
    problem: &Problem<T>,
    u0: &GridFunction<T>,
    forcing: &dyn Forcing<T>,
    scheme: Scheme<T>,
    t_final: T,
    levels: usize,
) -> Result<(Vec<RefinementRow<T>>, Vec<T>)> {
    let mut rows = Vec::with_capacity(levels);
    let mut tau = scheme.tau();
    for _ in 0..levels {
        let traj = solve(problem, u0, forcing, scheme.with_tau(tau), t_final, &FlowOptions::default())?;
        rows.push(RefinementRow {
            tau,
            max_residual: energy_balance(problem, &traj)?.max_rectangle(),
        });
        tau = tau * T::lit(0.5);
    }
    let ratios = rows
        .windows(2)
        .map(|w| w[0].max_residual / w[1].max_residual)
        .collect();
    Ok((rows, ratios))
}

/// `k,t,norm_u,phi_u,phi_star_xi,pairing_xi_u,energy_residual`, one row per
/// time; the subgradient columns are empty at `k = 0`.
pub fn trajectory_csv<T: Real>(problem: &Problem<T>, traj: &Trajectory<T>) -> Result<String> {
    let bal = energy_balance(problem, traj)?;
    let mut out = String::from("k,t,norm_u,phi_u,phi_star_xi,pairing_xi_u,energy_residual\n");
    for (k, (t, u)) in traj.times.iter().zip(&traj.states).enumerate() {
        let phi = problem.evaluate(u)?.value();
        let norm = problem.norm(u)?;
        let (conj, pair) = if k == 0 {
            // no step has produced ξ yet; report a representative of ∂φ(u_0)
            match problem.subgradient(u) {
                Ok(xi) => {
                    let c = problem.young_certificate(u, &xi)?;
                    (c.conj_upper.to_string(), problem.inner(&xi, u)?.to_string())
                }
                Err(_) => (String::new(), String::new()),
            }
        } else {
            let xi = &traj.subgradients[k - 1];
            let c = problem.young_certificate(&traj.resolvent_states[k - 1], xi)?;
            (c.conj_upper.to_string(), problem.inner(xi, u)?.to_string())
        };
        writeln!(out, "{k},{t},{norm},{phi},{conj},{pair},{}", bal.rectangle[k])
            .expect("writing to a String");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::ProblemKind;
    use crate::phi::PhiSpec;

    fn line(n: usize) -> Arc<Grid<f64>> {
        Arc::new(Grid::<f64>::interval(0.0, 1.0, n).unwrap())
    }

    fn quadratic(g: &Arc<Grid<f64>>) -> Problem<f64> {
        Problem::zero_order(g.clone(), PhiSpec::quadratic()).unwrap()
    }

    fn bump(g: &Arc<Grid<f64>>) -> GridFunction<f64> {
        GridFunction::from_fn(g.clone(), |x| (std::f64::consts::PI * x[0]).sin()).unwrap()
    }

    #[test]
    fn quadratic_decay_closed_form() {
        let g = line(9);
        let p = quadratic(&g);
        let u0 = bump(&g);
        let tau = 0.05;
        let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, tau, 1.0).unwrap();
        assert_eq!(traj.steps(), 20);
        for (k, u) in traj.states.iter().enumerate() {
            let f = (1.0 + tau).powi(-(k as i32));
            for (a, b) in u.values().iter().zip(u0.values()) {
                assert!((a - f * b).abs() < 1e-13);
            }
        }
        let lam = 0.2;
        let y = solve_yosida_flow(&p, &u0, &ZeroForcing, lam, tau, 1.0).unwrap();
        for (k, u) in y.states.iter().enumerate() {
            let f = (1.0 + tau / (1.0 + lam)).powi(-(k as i32));
            for (a, b) in u.values().iter().zip(u0.values()) {
                assert!((a - f * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let g = line(9);
        let p = Problem::builder(g.clone())
            .gradient(PhiSpec::power(3.0).unwrap())
            .zero_order(PhiSpec::power(4.0).unwrap())
            .dirichlet(true)
            .build()
            .unwrap();
        let traj = solve_implicit_euler(&p, &GridFunction::zeros(g), &ZeroForcing, 0.1, 1.0).unwrap();
        assert!(traj.states.iter().all(|u| u.is_zero()));
        assert!(traj.subgradients.iter().all(|u| u.is_zero()));
        let r = energy_report(&p, &traj, 1e-12).unwrap();
        assert!(r.passed(), "{}", r.to_csv());
    }

    #[test]
    fn constant_forcing_reaches_steady_state() {
        let g = line(5);
        let p = quadratic(&g);
        let f = GridFunction::new(g.clone(), vec![0.3, -0.2, 0.5, 1.0, 0.0]).unwrap();
        let traj = solve_implicit_euler(&p, &GridFunction::zeros(g), &ConstantForcing(f.clone()), 0.5, 40.0)
            .unwrap();
        for (a, b) in traj.final_state().values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn one_node_power_matches_scalar_prox() {
        let g = Arc::new(Grid::<f64>::single_node());
        let spec = PhiSpec::power(4.0).unwrap();
        let p = Problem::zero_order(g.clone(), spec.clone()).unwrap();
        let u0 = GridFunction::new(g.clone(), vec![1.3]).unwrap();
        let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, 0.1, 2.0).unwrap();
        let mut v = 1.3;
        for u in &traj.states[1..] {
            // stationarity 4 z^3 τ + z - v = 0 by bisection
            let (mut lo, mut hi) = (0.0_f64, v);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if 0.4 * mid * mid * mid + mid - v > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            v = 0.5 * (lo + hi);
            assert!((u.values()[0] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_report_first_order() {
        let g = line(33);
        let p = Problem::builder(g.clone())
            .kind(ProblemKind::ReactionDiffusion)
            .gradient(PhiSpec::power(3.0).unwrap())
            .zero_order(PhiSpec::power(5.0).unwrap())
            .dirichlet(true)
            .build()
            .unwrap();
        let u0 = bump(&g);
        let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, 0.02, 0.4).unwrap();
        let r = energy_report(&p, &traj, 1e-9).unwrap();
        assert!(r.passed(), "{}", r.to_csv());
        let s = subdiff_residual(&p, &traj, 1e-8).unwrap();
        assert!(s.passed(), "{}", s.to_csv());
        let (_, ratios) =
            energy_refinement(&p, &u0, &ZeroForcing, Scheme::ImplicitEuler { tau: 0.02 }, 0.4, 3).unwrap();
        for r in ratios {
            assert!((1.5..=2.5).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn dependence_quadratic() {
        let g = line(9);
        let p = quadratic(&g);
        let u1 = bump(&g);
        let u2 = u1.map(|v| v + 0.1);
        let d = continuous_dependence_check(
            &p,
            &FlowData { u0: u1.clone(), forcing: &ZeroForcing },
            &FlowData { u0: u2, forcing: &ZeroForcing },
            Scheme::ImplicitEuler { tau: 0.1 },
            1.0,
            1e-10,
        )
        .unwrap();
        assert!(d.report.passed(), "{}", d.report.to_csv());
        let same = continuous_dependence_check(
            &p,
            &FlowData { u0: u1.clone(), forcing: &ZeroForcing },
            &FlowData { u0: u1, forcing: &ZeroForcing },
            Scheme::ImplicitEuler { tau: 0.1 },
            1.0,
            1e-10,
        )
        .unwrap();
        assert_eq!(same.lhs, 0.0);
        assert_eq!(same.rhs, 0.0);
    }

    #[test]
    fn lambda_study_quadratic() {
        let g = line(9);
        let p = quadratic(&g);
        let u0 = bump(&g);
        let s = lambda_convergence_study(&p, &u0, &ZeroForcing, &[0.1, 0.01, 0.001], 0.05, 1.0, 1.1, 0.05)
            .unwrap();
        assert!(s.report.passed(), "{}", s.report.to_csv());
        let d: Vec<f64> = s.rows.iter().map(|r| r.distance).collect();
        assert!(d[0] / d[1] > 5.0 && d[1] / d[2] > 5.0, "{d:?}");
    }

    #[test]
    fn relaxation_time_of_quadratic() {
        let g = line(9);
        let p = quadratic(&g);
        let u0 = bump(&g);
        assert!((relaxation_time(&p, &u0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(resolving_step(&p, &u0, 0.3).unwrap(), 0.3);
        assert_eq!(resolving_step(&p, &u0, 3.0).unwrap(), 0.75);
        let zero = GridFunction::zeros(g);
        assert!(relaxation_time(&p, &zero).unwrap().is_infinite());
    }

    #[test]
    fn rejects_bad_time_grids() {
        let g = line(5);
        let p = quadratic(&g);
        let u = GridFunction::zeros(g);
        assert!(solve_implicit_euler(&p, &u, &ZeroForcing, 0.3, 1.0).is_err());
        assert!(solve_implicit_euler(&p, &u, &ZeroForcing, -0.1, 1.0).is_err());
        assert!(solve_yosida_flow(&p, &u, &ZeroForcing, 0.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn sampled_forcing_interpolates() {
        let g = line(3);
        let a = GridFunction::new(g.clone(), vec![0.0, 0.0, 0.0]).unwrap();
        let b = GridFunction::new(g.clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let f = SampledForcing::new(vec![0.0, 1.0], vec![a, b]).unwrap();
        let mid = f.sample(0.25, &g).unwrap();
        assert_eq!(mid.values(), &[0.25, 0.5, 0.75]);
        assert_eq!(f.sample(5.0, &g).unwrap().values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn csv_export() {
        let g = line(5);
        let p = quadratic(&g);
        let traj = solve_implicit_euler(&p, &bump(&g), &ZeroForcing, 0.5, 1.0).unwrap();
        let csv = trajectory_csv(&p, &traj).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "k,t,norm_u,phi_u,phi_star_xi,pairing_xi_u,energy_residual");
        assert!(lines[1].starts_with("0,0,"));
    }
}
