use crate::banded::BandedSpd;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::phi::{prox_sum, ProxOptions};
use crate::scalar::Real;

use super::{norm2, Problem};

/// `J_λ u`, `A_λ u = (u - J_λ u)/λ` and solver statistics.
#[derive(Clone, Debug)]
pub struct ResolventResult<T> {
    pub j_lambda_u: GridFunction<T>,
    pub a_lambda_u: GridFunction<T>,
    pub iterations: usize,
    /// `‖r / m‖_H` for the Euclidean Euler–Lagrange residual `r`.
    pub residual_norm: T,
}

#[derive(Clone, Debug)]
pub struct ResolventOptions<T> {
    /// Relative tolerance; the solve stops once the residual falls below
    /// `tol (1 + ‖u‖_H)`. `None` selects [`default_inner_tol`].
    pub tol: Option<T>,
    pub max_newton: usize,
    pub max_fista: usize,
    /// Disable to exercise the proximal-gradient fallback alone.
    pub newton: bool,
}

impl<T: Real> Default for ResolventOptions<T> {
    fn default() -> Self {
        ResolventOptions {
            tol: None,
            max_newton: 100,
            max_fista: 200_000,
            newton: true,
        }
    }
}

/// `min(1e-10, λ^2)`, floored at the working precision.
pub fn default_inner_tol<T: Real>(lambda: T) -> T {
    T::tol(1e-10).min(lambda * lambda).max(T::tol_floor())
}

/// `J_λ u = argmin_y { φ(y) + ‖u - y‖_H^2 / (2λ) }`.
pub fn resolvent<T: Real>(
    problem: &Problem<T>,
    u: &GridFunction<T>,
    lambda: T,
    tol: Option<T>,
) -> Result<ResolventResult<T>> {
    let opts = ResolventOptions {
        tol,
        ..Default::default()
    };
    resolvent_from(problem, u, lambda, &opts, None)
}

/// [`resolvent`] with explicit options and an optional starting point.
pub fn resolvent_from<T: Real>(
    problem: &Problem<T>,
    u: &GridFunction<T>,
    lambda: T,
    opts: &ResolventOptions<T>,
    guess: Option<&GridFunction<T>>,
) -> Result<ResolventResult<T>> {
    problem.check(u)?;
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "lambda must be finite and > 0, got {lambda}"
        )));
    }
    let tol = opts.tol.unwrap_or_else(|| default_inner_tol(lambda));
    let target = tol * (T::one() + problem.norm_raw(u.values()));
    let uv = u.values();

    let mut y: Vec<T> = match guess {
        Some(g) => {
            problem.check(g)?;
            g.values().to_vec()
        }
        None => uv.to_vec(),
    };
    if problem.is_zero_order() {
        let prox_tol = (tol * lambda * T::lit(0.1)).as_f64().max(1e-300);
        for i in 0..y.len() {
            y[i] = if problem.free[i] {
                let terms: Vec<_> = problem.nodes[i]
                    .iter()
                    .map(|(w, m)| (*w / problem.mass[i], *m))
                    .collect();
                prox_sum(
                    &terms,
                    uv[i],
                    lambda,
                    ProxOptions {
                        tol: prox_tol,
                        max_iter: 200,
                    },
                )?
            } else {
                T::zero()
            };
        }
    }
    for (v, &f) in y.iter_mut().zip(&problem.free) {
        if !f {
            *v = T::zero();
        }
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut state = Status::Running;
    if opts.newton {
        state = newton(problem, uv, lambda, target, opts.max_newton, &mut y, &mut history, &mut iterations);
    }
    if !matches!(state, Status::Converged(_)) {
        state = fista(problem, uv, lambda, target, opts.max_fista, &mut y, &mut history, &mut iterations);
    }
    match state {
        Status::Converged(r) => {
            let j = u.with_values(y);
            let a = u.with_values(
                uv.iter()
                    .zip(j.values())
                    .map(|(&a, &b)| (a - b) / lambda)
                    .collect(),
            );
            Ok(ResolventResult {
                j_lambda_u: j,
                a_lambda_u: a,
                iterations,
                residual_norm: r,
            })
        }
        _ => Err(Error::ResolventNotConverged {
            last: history.last().copied().unwrap_or(f64::NAN),
            history,
        }),
    }
}

/// `A_λ u`.
pub fn yosida<T: Real>(
    problem: &Problem<T>,
    u: &GridFunction<T>,
    lambda: T,
    tol: Option<T>,
) -> Result<GridFunction<T>> {
    Ok(resolvent(problem, u, lambda, tol)?.a_lambda_u)
}

/// Moreau–Yosida envelope `φ_λ(u) = φ(J_λ u) + ‖u - J_λ u‖_H^2 / (2λ)`.
pub fn envelope<T: Real>(
    problem: &Problem<T>,
    u: &GridFunction<T>,
    lambda: T,
    tol: Option<T>,
) -> Result<T> {
    let r = resolvent(problem, u, lambda, tol)?;
    let d: Vec<T> = u
        .values()
        .iter()
        .zip(r.j_lambda_u.values())
        .map(|(&a, &b)| a - b)
        .collect();
    Ok(problem.energy_raw(r.j_lambda_u.values())
        + problem.inner_raw(&d, &d) / (T::lit(2.0) * lambda))
}

enum Status<T> {
    Running,
    Converged(T),
    Failed,
}

fn objective<T: Real>(problem: &Problem<T>, y: &[T], u: &[T], lambda: T) -> T {
    let mut q = T::zero();
    for ((&a, &b), &m) in y.iter().zip(u).zip(&problem.mass) {
        q = q + m * (a - b) * (a - b);
    }
    problem.energy_raw(y) + q / (T::lit(2.0) * lambda)
}

/// Euclidean residual of `m (y - u)/λ + ∂φ(y) ∋ 0`, using the minimal-norm
/// subgradient at kinks, and the mask of nodes stuck at a kink.
pub(crate) fn residual<T: Real>(
    problem: &Problem<T>,
    y: &[T],
    u: &[T],
    lambda: T,
) -> (Vec<T>, Vec<bool>) {
    let mut g = problem.euclidean_gradient(y);
    let mut stuck = vec![false; y.len()];
    for i in 0..y.len() {
        if !problem.free[i] {
            g[i] = T::zero();
            continue;
        }
        g[i] = g[i] + problem.mass[i] * (y[i] - u[i]) / lambda;
        if y[i] == T::zero() {
            let k = problem.kink_at(i);
            if k > T::zero() {
                if g[i].abs() <= k {
                    g[i] = T::zero();
                    stuck[i] = true;
                } else {
                    g[i] = g[i] - g[i].signum() * k;
                }
            }
        }
    }
    (g, stuck)
}

/// Rounding level of the residual: `‖noise / m‖_H` where `noise` bounds the
/// accumulated floating-point error of each entry.
fn noise_floor<T: Real>(problem: &Problem<T>, y: &[T], u: &[T], lambda: T) -> T {
    let mut noise: Vec<T> = (0..y.len())
        .map(|i| {
            let mut acc = problem.mass[i] * (y[i].abs() + u[i].abs()) / lambda;
            for (w, m) in &problem.nodes[i] {
                acc = acc + *w * m.derivative(y[i]).abs();
            }
            acc
        })
        .collect();
    if let Some(g) = &problem.gradient {
        let flux = problem.fluxes(g, y);
        for (sample, f) in g.stencil.samples().iter().zip(&flux) {
            for (k, &(a, b, ih)) in sample.components.iter().enumerate() {
                let v = sample.weight * f[k].abs() * ih;
                noise[a] = noise[a] + v;
                noise[b] = noise[b] + v;
            }
        }
    }
    let eps = T::epsilon() * T::lit(64.0);
    h_norm_of_euclidean(problem, &noise) * eps
}

fn h_norm_of_euclidean<T: Real>(problem: &Problem<T>, r: &[T]) -> T {
    r.iter()
        .zip(&problem.mass)
        .zip(&problem.free)
        .filter(|(_, &f)| f)
        .map(|((&v, &m), _)| v * v / m)
        .sum::<T>()
        .sqrt()
}

fn residual_norm<T: Real>(problem: &Problem<T>, y: &[T], u: &[T], lambda: T) -> (T, Vec<T>, Vec<bool>) {
    let (r, stuck) = residual(problem, y, u, lambda);
    (h_norm_of_euclidean(problem, &r), r, stuck)
}

fn converged<T: Real>(problem: &Problem<T>, y: &[T], u: &[T], lambda: T, rn: T, target: T) -> bool {
    rn <= target || rn <= noise_floor(problem, y, u, lambda)
}

/// Second derivative with the `p < 2` singularity at the origin clamped.
fn clamped_second<T: Real>(m: &crate::phi::LocalPhi<T>, z: T, rmin: T) -> T {
    let s = m.second_derivative(z);
    if s.is_finite() {
        s
    } else {
        m.second_derivative(z.abs().max(rmin))
    }
}

fn hessian<T: Real>(problem: &Problem<T>, y: &[T], lambda: T, pinned: &[bool]) -> Option<BandedSpd<T>> {
    let n = y.len();
    let mut h = BandedSpd::zeros(n, problem.bandwidth());
    let ymax = y.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let rmin = T::epsilon().sqrt() * (T::one() + ymax);
    for i in 0..n {
        let mut d = problem.mass[i] / lambda;
        for (w, m) in &problem.nodes[i] {
            d = d + *w * clamped_second(m, y[i], rmin);
        }
        h.add(i, i, d);
    }
    if let Some(g) = &problem.gradient {
        let grads = problem.sample_gradients(y);
        let gmax = grads.iter().fold(T::zero(), |a, d| a.max(norm2(*d)));
        let gmin = T::epsilon().sqrt() * (T::one() + gmax);
        for (s, sample) in g.stencil.samples().iter().enumerate() {
            let m = &g.phis[s];
            let d = grads[s];
            let r = norm2(d);
            let rc = r.max(gmin);
            let tangential = m.derivative(rc) / rc;
            let radial = clamped_second(m, rc, gmin);
            let mut hs = [[T::zero(); 2]; 2];
            if r < gmin {
                hs[0][0] = tangential;
                hs[1][1] = tangential;
            } else {
                let e = [d[0] / r, d[1] / r];
                for (a, row) in hs.iter_mut().enumerate() {
                    for (b, v) in row.iter_mut().enumerate() {
                        let id = if a == b { T::one() } else { T::zero() };
                        *v = radial * e[a] * e[b] + tangential * (id - e[a] * e[b]);
                    }
                }
            }
            let comps = &sample.components;
            for (k, &(ak, bk, ihk)) in comps.iter().enumerate() {
                for (l, &(al, bl, ihl)) in comps.iter().enumerate() {
                    let c = sample.weight * hs[k][l] * ihk * ihl;
                    if !c.is_finite() {
                        return None;
                    }
                    for (p, sp) in [(ak, -T::one()), (bk, T::one())] {
                        for (q, sq) in [(al, -T::one()), (bl, T::one())] {
                            if p >= q {
                                h.add(p, q, c * sp * sq);
                            }
                        }
                    }
                }
            }
        }
    }
    for (i, &p) in pinned.iter().enumerate() {
        if p {
            h.pin(i);
        }
    }
    Some(h)
}

#[allow(clippy::too_many_arguments)]
fn newton<T: Real>(
    problem: &Problem<T>,
    u: &[T],
    lambda: T,
    target: T,
    max_iter: usize,
    y: &mut Vec<T>,
    history: &mut Vec<f64>,
    iterations: &mut usize,
) -> Status<T> {
    let kinks: Vec<bool> = (0..y.len()).map(|i| problem.kink_at(i) > T::zero()).collect();
    let (mut rn, mut res, mut stuck) = residual_norm(problem, y, u, lambda);
    let mut f = objective(problem, y, u, lambda);
    for _ in 0..max_iter {
        history.push(rn.as_f64());
        if converged(problem, y, u, lambda, rn, target) {
            return Status::Converged(rn);
        }
        *iterations += 1;
        let pinned: Vec<bool> = (0..y.len()).map(|i| !problem.free[i] || stuck[i]).collect();
        let Some(h) = hessian(problem, y, lambda, &pinned) else {
            return Status::Failed;
        };
        let Some(chol) = h.cholesky() else {
            return Status::Failed;
        };
        let rhs: Vec<T> = res
            .iter()
            .zip(&pinned)
            .map(|(&r, &p)| if p { T::zero() } else { -r })
            .collect();
        let d = chol.solve(&rhs);
        let slope: T = res.iter().zip(&d).map(|(&r, &di)| r * di).sum();
        if !(slope < T::zero()) {
            return Status::Failed;
        }
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<T> = (0..y.len())
                .map(|i| {
                    let v = y[i] + t * d[i];
                    if kinks[i] && y[i] != T::zero() && v.signum() != y[i].signum() {
                        T::zero()
                    } else {
                        v
                    }
                })
                .collect();
            let ft = objective(problem, &trial, u, lambda);
            let armijo = ft <= f + T::lit(1e-4) * t * slope;
            let (rt, rest, stuckt) = residual_norm(problem, &trial, u, lambda);
            if armijo || (ft <= f + T::epsilon() * T::lit(16.0) * f.abs() && rt < rn) {
                *y = trial;
                f = ft;
                rn = rt;
                res = rest;
                stuck = stuckt;
                accepted = true;
                break;
            }
            t = t * T::lit(0.5);
        }
        if !accepted {
            return Status::Failed;
        }
    }
    history.push(rn.as_f64());
    if converged(problem, y, u, lambda, rn, target) {
        Status::Converged(rn)
    } else {
        Status::Failed
    }
}

/// Accelerated proximal gradient: the gradient term is the smooth part, the
/// nodewise terms plus the distance term are handled by the scalar prox.
#[allow(clippy::too_many_arguments)]
fn fista<T: Real>(
    problem: &Problem<T>,
    u: &[T],
    lambda: T,
    target: T,
    max_iter: usize,
    y: &mut Vec<T>,
    history: &mut Vec<f64>,
    iterations: &mut usize,
) -> Status<T> {
    let n = y.len();
    let smooth = |v: &[T]| -> T {
        match &problem.gradient {
            Some(g) => {
                let mut acc = T::zero();
                for (s, (sample, m)) in g.stencil.samples().iter().zip(&g.phis).enumerate() {
                    acc = acc + sample.weight * m.eval(norm2(g.stencil.sample_gradient(s, v)));
                }
                acc
            }
            None => T::zero(),
        }
    };
    let smooth_grad = |v: &[T]| -> Vec<T> {
        let mut out = vec![T::zero(); n];
        if let Some(g) = &problem.gradient {
            let flux = problem.fluxes(g, v);
            g.stencil.add_adjoint(&flux, &mut out);
        }
        out
    };
    let prox = |x: &[T], s: T| -> Result<Vec<T>> {
        let inv = lambda.recip() + s.recip();
        let lam_eff = inv.recip();
        (0..n)
            .map(|i| {
                if !problem.free[i] {
                    return Ok(T::zero());
                }
                let c = (u[i] / lambda + x[i] / s) * lam_eff;
                let terms: Vec<_> = problem.nodes[i]
                    .iter()
                    .map(|(w, m)| (*w / problem.mass[i], *m))
                    .collect();
                prox_sum(&terms, c, lam_eff, ProxOptions::default())
            })
            .collect()
    };

    let mut x = y.clone();
    let mut z = y.clone();
    let mut t = T::one();
    let mut step = lambda;
    let mut f_prev = objective(problem, &x, u, lambda);
    for it in 0..max_iter {
        *iterations += 1;
        let fz = smooth(&z);
        let gz = smooth_grad(&z);
        let mut next;
        let mut tries = 0;
        loop {
            let trial_in: Vec<T> = (0..n).map(|i| z[i] - step * gz[i] / problem.mass[i]).collect();
            next = match prox(&trial_in, step) {
                Ok(v) => v,
                Err(_) => return Status::Failed,
            };
            let mut model = fz;
            let mut quad = T::zero();
            for i in 0..n {
                let d = next[i] - z[i];
                model = model + gz[i] * d;
                quad = quad + problem.mass[i] * d * d;
            }
            model = model + quad / (T::lit(2.0) * step);
            if smooth(&next) <= model + T::epsilon() * T::lit(16.0) * fz.abs() || tries > 60 {
                break;
            }
            step = step * T::lit(0.5);
            tries += 1;
        }
        let f_next = objective(problem, &next, u, lambda);
        // adaptive restart on objective increase
        let restart = f_next > f_prev;
        let t_next = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) * T::lit(0.5);
        let beta = if restart { T::zero() } else { (t - T::one()) / t_next };
        z = (0..n).map(|i| next[i] + beta * (next[i] - x[i])).collect();
        t = if restart { T::one() } else { t_next };
        x = next;
        f_prev = f_next;
        if it % 10 == 0 || it + 1 == max_iter {
            let (rn, _, _) = residual_norm(problem, &x, u, lambda);
            if it % 1000 == 0 {
                history.push(rn.as_f64());
            }
            if converged(problem, &x, u, lambda, rn, target) {
                history.push(rn.as_f64());
                *y = x;
                return Status::Converged(rn);
            }
        }
    }
    *y = x;
    Status::Failed
}
