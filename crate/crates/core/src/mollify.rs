//! Time mollification `(T_n v)(t) = n ∫_0^T v(s) ρ((t - s) n) ds` on uniformly
//! sampled paths, the Jensen inequality it satisfies, and chain-rule residuals.

use crate::convex::Problem;
use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::grid::GridFunction;
use crate::report::{Check, DiagnosticsReport};
use crate::scalar::Real;

/// `∫_{-1}^{1} exp(-1/(1 - t²)) dt`
pub const BUMP_INTEGRAL: f64 = 0.443_993_816_168_079_4;

/// Scale exponents swept by the Jensen check.
pub const ALPHAS: [f64; 3] = [0.25, 0.5, 1.0];

fn bump(t: f64) -> f64 {
    if t.abs() < 1.0 {
        (-1.0 / (1.0 - t * t)).exp()
    } else {
        0.0
    }
}

/// Normalized profile `ρ`, supported on `[-1, 1]`.
pub fn profile(t: f64) -> f64 {
    bump(t) / BUMP_INTEGRAL
}

/// `∫ ρ` by the trapezoidal rule on `m` panels, which converges faster than
/// any power for this profile.
pub fn profile_integral(m: usize) -> f64 {
    let h = 2.0 / m as f64;
    (1..m).map(|i| profile(-1.0 + i as f64 * h)).sum::<f64>() * h
}

/// Discrete kernel `w_j ∝ dt n ρ(j dt n)` on the sampling grid, normalized to
/// unit sum.
#[derive(Clone, Debug)]
pub struct MollifierKernel<T> {
    n: usize,
    dt: T,
    /// Weights for offsets `-r..=r`.
    weights: Vec<T>,
    raw_sum: T,
}

impl<T: Real> MollifierKernel<T> {
    /// Requires `dt <= 1/(4n)`, so the support holds at least seven samples.
    pub fn new(n: usize, dt: T) -> Result<Self> {
        if n == 0 || !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidInput(format!(
                "mollifier needs n >= 1 and dt > 0, got n = {n}, dt = {dt}"
            )));
        }
        let limit = 1.0 / (4.0 * n as f64);
        let dtf = dt.as_f64();
        if dtf > limit * (1.0 + 1e-12) {
            return Err(Error::CoarseTimeGrid { dt: dtf, n, limit });
        }
        let nf = n as f64;
        let r = ((1.0 / (nf * dtf)).ceil() as usize).saturating_sub(1);
        let raw: Vec<f64> = (-(r as i64)..=r as i64)
            .map(|j| dtf * nf * profile(j as f64 * dtf * nf))
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights = raw.iter().map(|&w| T::lit(w / sum)).collect();
        Ok(MollifierKernel {
            n,
            dt,
            weights,
            raw_sum: T::lit(sum),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Number of samples on each side of the center.
    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    /// Riemann sum of the scaled profile before normalization.
    pub fn raw_sum(&self) -> T {
        self.raw_sum
    }

    /// Sample indices `i` whose window `[t_i - 1/n, t_i + 1/n]` lies in
    /// `[0, T]` for a path of `len` samples.
    pub fn interior(&self, len: usize) -> std::ops::Range<usize> {
        let skip = (T::one() / (T::lit(self.n as f64) * self.dt)).ceil().to_usize().unwrap_or(usize::MAX);
        if len <= 2 * skip {
            0..0
        } else {
            skip..len - skip
        }
    }

    /// Normalization, evenness, nonnegativity and support.
    pub fn report(&self) -> DiagnosticsReport {
        let r = self.radius();
        let w = &self.weights;
        let odd = (0..r)
            .map(|j| (w[j] - w[w.len() - 1 - j]).abs().as_f64())
            .fold(0.0, f64::max);
        let sum: T = w.iter().copied().sum();
        let neg = w.iter().map(|v| (-v.as_f64()).max(0.0)).fold(0.0, f64::max);
        let reach = r as f64 * self.dt.as_f64() * self.n as f64;
        let mut out = DiagnosticsReport::new("kernel");
        out.push(Check::at_most(
            "profile_integral",
            (profile_integral(4000) - 1.0).abs(),
            1e-10,
        ))
        .push(Check::at_most(
            "weight_sum",
            (sum - T::one()).abs().as_f64(),
            1e-10,
        ))
        .push(Check::at_most("evenness", odd, 1e-15))
        .push(Check::at_most("negativity", neg, f64::MIN_POSITIVE))
        .push(Check::flag("support", reach < 1.0));
        out
    }

    /// Convolution of a scalar signal, zero outside the sampled interval.
    pub fn apply_scalar(&self, v: &[T]) -> Vec<T> {
        let r = self.radius() as i64;
        let len = v.len() as i64;
        (0..len)
            .map(|i| {
                let mut acc = T::zero();
                for (k, &w) in self.weights.iter().enumerate() {
                    let s = i - (k as i64 - r);
                    if (0..len).contains(&s) {
                        acc = acc + w * v[s as usize];
                    }
                }
                acc
            })
            .collect()
    }

    /// Convolution of a path of grid functions.
    pub fn apply(&self, path: &[GridFunction<T>]) -> Result<Vec<GridFunction<T>>> {
        let Some(first) = path.first() else {
            return Ok(Vec::new());
        };
        for p in path {
            first.check_same_grid(p)?;
        }
        let nodes = first.len();
        let mut out: Vec<Vec<T>> = vec![vec![T::zero(); nodes]; path.len()];
        let mut column = vec![T::zero(); path.len()];
        for x in 0..nodes {
            for (c, p) in column.iter_mut().zip(path) {
                *c = p.values()[x];
            }
            for (o, v) in out.iter_mut().zip(self.apply_scalar(&column)) {
                o[x] = v;
            }
        }
        out.into_iter()
            .map(|v| GridFunction::new(first.grid().clone(), v))
            .collect()
    }
}

/// `T_n` applied to a path sampled every `dt`.
pub fn mollify<T: Real>(path: &[GridFunction<T>], dt: T, n: usize) -> Result<Vec<GridFunction<T>>> {
    MollifierKernel::new(n, dt)?.apply(path)
}

/// Sub-Markov and `L^1` contraction on a scalar signal: `0 <= v <= 1` implies
/// `0 <= T_n v <= 1`, and `Σ |T_n v| <= Σ |v|`.
pub fn sub_markov_check<T: Real>(kernel: &MollifierKernel<T>, v: &[T], tol: f64) -> DiagnosticsReport {
    let tv = kernel.apply_scalar(v);
    let mut out = DiagnosticsReport::new("sub_markov");
    let in_unit = v.iter().all(|&x| x >= T::zero() && x <= T::one());
    if in_unit {
        let over = tv
            .iter()
            .map(|&x| (x - T::one()).max(-x).max(T::zero()).as_f64())
            .fold(0.0, f64::max);
        out.push(Check::at_most("order_interval", over, tol));
    }
    let l1 = |s: &[T]| s.iter().map(|x| x.abs().as_f64()).sum::<f64>();
    out.push(Check::at_most(
        "l1_contraction",
        (l1(&tv) - l1(v)).max(0.0) / (1.0 + l1(v)),
        tol,
    ));
    out
}

/// `φ(α T_n u)(t) <= T_n[φ(α u)](t)` at every sample time whose kernel
/// window stays inside `[0, T]`, for each `α`. The value of each check is the
/// worst `lhs - rhs`, clipped at zero.
pub fn jensen_check<T: Real>(
    problem: &Problem<T>,
    path: &[GridFunction<T>],
    dt: T,
    n: usize,
    alphas: &[f64],
    tol: f64,
) -> Result<DiagnosticsReport> {
    let kernel = MollifierKernel::new(n, dt)?;
    let interior = kernel.interior(path.len());
    let mut out = DiagnosticsReport::new("jensen");
    out.extend(kernel.report());
    for &alpha in alphas {
        let a = T::lit(alpha);
        let scaled: Vec<GridFunction<T>> = path.iter().map(|u| u.scaled(a)).collect();
        let smooth = kernel.apply(&scaled)?;
        let energies: Vec<T> = scaled
            .iter()
            .map(|u| problem.evaluate(u).map(|v| v.value()))
            .collect::<Result<_>>()?;
        let averaged = kernel.apply_scalar(&energies);
        let mut worst = 0.0_f64;
        let mut margins = Vec::with_capacity(interior.len());
        for i in interior.clone() {
            let lhs = problem.evaluate(&smooth[i])?.value();
            let rhs = averaged[i];
            let excess = if rhs.is_finite() { (lhs - rhs).as_f64() } else { 0.0 };
            margins.push(-excess);
            worst = if excess.is_nan() { f64::INFINITY } else { worst.max(excess) };
        }
        out.push(Check::at_most(format!("alpha_{alpha}"), worst, tol))
            .push_series(format!("margin_alpha_{alpha}"), margins);
    }
    Ok(out)
}

/// How `∫ (∂_t u, u)` is discretized on each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    /// `dt (d^j, u^j)`, with `d^j` the derivative on step `j`.
    Right,
    /// `dt ((d^j, u^j) + (d^{j-1}, u^{j-1})) / 2`, with derivatives sampled
    /// at every time.
    Trapezoid,
}

/// `R_k = |½‖u^k‖² - ½‖u^0‖² - ∫_0^{t_k} (∂_t u, u)|` along a sampled path.
///
/// `derivative` holds `∂_t u` at every sample time for [`Quadrature::Trapezoid`]
/// and per step (`len - 1` entries, or `len` with the first ignored) for
/// [`Quadrature::Right`]. Without it, backward differences are used with the
/// right-endpoint rule.
pub fn chain_rule_residuals<T: Real>(
    problem: &Problem<T>,
    path: &[GridFunction<T>],
    dt: T,
    derivative: Option<&[GridFunction<T>]>,
    rule: Quadrature,
) -> Result<Vec<T>> {
    if path.is_empty() {
        return Ok(Vec::new());
    }
    let half = T::lit(0.5);
    let e0 = half * problem.inner(&path[0], &path[0])?;
    let mut acc = T::zero();
    let mut out = vec![T::zero()];
    let fd: Vec<GridFunction<T>>;
    let (d, offset) = match (derivative, rule) {
        (Some(d), Quadrature::Trapezoid) => {
            if d.len() != path.len() {
                return Err(Error::InvalidInput(format!(
                    "trapezoid rule needs {} derivative samples, got {}",
                    path.len(),
                    d.len()
                )));
            }
            (d, 0)
        }
        (Some(d), Quadrature::Right) => match d.len() {
            l if l + 1 == path.len() => (d, 1),
            l if l == path.len() => (d, 0),
            l => {
                return Err(Error::InvalidInput(format!(
                    "need {} derivative samples, got {l}",
                    path.len() - 1
                )))
            }
        },
        (None, Quadrature::Right) => {
            fd = path
                .windows(2)
                .map(|w| w[1].axpy(-T::one(), &w[0]).map(|v| v.scaled(dt.recip())))
                .collect::<Result<_>>()?;
            (fd.as_slice(), 1)
        }
        (None, Quadrature::Trapezoid) => {
            return Err(Error::InvalidInput(
                "the trapezoid rule needs derivative samples".into(),
            ))
        }
    };
    let at = |j: usize| -> &GridFunction<T> { &d[j - offset] };
    for k in 1..path.len() {
        let step = match rule {
            Quadrature::Right => problem.inner(at(k), &path[k])?,
            Quadrature::Trapezoid => {
                half * (problem.inner(at(k), &path[k])? + problem.inner(at(k - 1), &path[k - 1])?)
            }
        };
        acc = acc + dt * step;
        let ek = half * problem.inner(&path[k], &path[k])?;
        out.push((ek - e0 - acc).abs());
    }
    Ok(out)
}

/// Chain rule along a solver trajectory with `∂_t u = u_1' + u_2'`,
/// `u_1' = -ξ` and `u_2' = f` taken from the step relation. The residual is
/// first order in `τ` and bounded by `τ (φ(u_0) + ½ Σ τ ‖f‖²)`.
pub fn chain_rule_check<T: Real>(
    problem: &Problem<T>,
    traj: &Trajectory<T>,
    tol: f64,
) -> Result<DiagnosticsReport> {
    let derivative: Vec<GridFunction<T>> = traj
        .forcing
        .iter()
        .zip(&traj.subgradients)
        .map(|(f, xi)| f.axpy(-T::one(), xi))
        .collect::<Result<_>>()?;
    let tau = traj.tau();
    let res = chain_rule_residuals(problem, &traj.states, tau, Some(&derivative), Quadrature::Right)?;
    let sup = res.iter().fold(T::zero(), |a, &b| a.max(b));
    let forcing_sq: T = traj
        .forcing
        .iter()
        .map(|f| problem.inner(f, f).map(|v| tau * v))
        .sum::<Result<T>>()?;
    let phi0 = problem.evaluate(&traj.states[0])?.value();
    let bound = tau * (phi0 + T::lit(0.5) * forcing_sq);
    let scale = 1.0 + (T::lit(0.5) * problem.inner(&traj.states[0], &traj.states[0])?).as_f64();
    let mut out = DiagnosticsReport::new("chain_rule");
    out.push(Check::at_most(
        "first_order_bound",
        sup.as_f64(),
        bound.as_f64() + tol * scale,
    ))
    .push_series("residual", res.iter().map(|v| v.as_f64()).collect());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{solve_implicit_euler, ZeroForcing};
    use crate::grid::Grid;
    use crate::phi::PhiSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn profile_is_normalized() {
        assert!((profile_integral(4000) - 1.0).abs() < 1e-12);
        assert!((profile_integral(2000) - profile_integral(4000)).abs() < 1e-14);
        assert_eq!(profile(1.0), 0.0);
        assert_eq!(profile(-1.5), 0.0);
        let k = MollifierKernel::<f64>::new(5, 0.01).unwrap();
        let r = k.report();
        assert!(r.passed(), "{}", r.to_csv());
        assert_eq!(k.radius(), 19);
    }

    #[test]
    fn rejects_coarse_grids() {
        assert!(matches!(
            MollifierKernel::<f64>::new(10, 0.05),
            Err(Error::CoarseTimeGrid { .. })
        ));
        assert!(MollifierKernel::<f64>::new(10, 0.025).is_ok());
    }

    #[test]
    fn constants_are_preserved_inside() {
        let k = MollifierKernel::<f64>::new(4, 0.01).unwrap();
        let v = vec![2.5; 101];
        let tv = k.apply_scalar(&v);
        for i in k.interior(v.len()) {
            assert!((tv[i] - 2.5).abs() < 1e-14);
        }
        // zero extension lowers the ends
        assert!(tv[0] < 2.5);
    }

    #[test]
    fn step_is_smoothed_monotonically() {
        let k = MollifierKernel::<f64>::new(5, 0.005).unwrap();
        let v: Vec<f64> = (0..201).map(|i| if i < 100 { 0.0 } else { 1.0 }).collect();
        let tv = k.apply_scalar(&v);
        let range = k.interior(v.len());
        let inner = &tv[range.clone()];
        assert!(inner.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        let tv_of = |s: &[f64]| s.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
        assert!(tv_of(inner) <= tv_of(&v[range]) + 1e-14);
    }

    #[test]
    fn converges_for_continuous_signals() {
        let dt = 1e-3;
        let v: Vec<f64> = (0..=1000).map(|i| (6.0 * i as f64 * dt).sin()).collect();
        let mut errs = Vec::new();
        for n in [4, 8, 16, 32] {
            let k = MollifierKernel::<f64>::new(n, dt).unwrap();
            let tv = k.apply_scalar(&v);
            let r = k.interior(v.len());
            let lo = MollifierKernel::<f64>::new(4, dt).unwrap().interior(v.len());
            let r = r.start.max(lo.start)..r.end.min(lo.end);
            errs.push(r.map(|i| (tv[i] - v[i]).abs() * dt).sum::<f64>());
        }
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        assert!(errs[3] < 1e-3);
    }

    proptest! {
        #[test]
        fn sub_markov_on_random_signals(seed in any::<u64>(), n in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dt = 1.0 / (4.0 * n as f64) * rng.gen_range(0.2..1.0);
            let k = MollifierKernel::<f64>::new(n, dt).unwrap();
            let v: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
            let r = sub_markov_check(&k, &v, 1e-12);
            prop_assert!(r.passed(), "{}", r.to_csv());
            let w: Vec<f64> = (0..200).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let r = sub_markov_check(&k, &w, 1e-12);
            prop_assert!(r.passed(), "{}", r.to_csv());
        }
    }

    fn line() -> Arc<Grid<f64>> {
        Arc::new(Grid::<f64>::interval(0.0, 1.0, 9).unwrap())
    }

    #[test]
    fn jensen_on_constant_and_oscillatory_paths() {
        let g = line();
        let p = Problem::zero_order(g.clone(), PhiSpec::quadratic()).unwrap();
        let w = GridFunction::from_fn(g.clone(), |x| 1.0 + x[0]).unwrap();
        let dt = 0.01;
        let constant = vec![w.clone(); 101];
        let r = jensen_check(&p, &constant, dt, 4, &ALPHAS, 1e-12).unwrap();
        assert!(r.passed(), "{}", r.to_csv());
        let margins = r.series("margin_alpha_1").unwrap();
        assert!(margins.iter().all(|m| m.abs() < 1e-14));

        let osc: Vec<_> = (0..101).map(|k| w.scaled((k as f64 * 1.3).sin())).collect();
        let r = jensen_check(&p, &osc, dt, 4, &ALPHAS, 1e-12).unwrap();
        assert!(r.passed(), "{}", r.to_csv());
        let margins = r.series("margin_alpha_0.5").unwrap();
        assert!(margins.iter().all(|&m| m > 1e-6), "{margins:?}");
    }

    #[test]
    fn chain_rule_on_manufactured_paths() {
        let g = line();
        let p = Problem::zero_order(g.clone(), PhiSpec::quadratic()).unwrap();
        let w = GridFunction::from_fn(g.clone(), |x| (3.0 * x[0]).cos()).unwrap();
        let constant = vec![w.clone(); 11];
        let r = chain_rule_residuals(&p, &constant, 0.1, None, Quadrature::Right).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));

        let sup = |dt: f64, rule: Quadrature| {
            let k = (1.0 / dt).round() as usize;
            let path: Vec<_> = (0..=k).map(|i| w.scaled((2.0 * i as f64 * dt).sin() + 1.0)).collect();
            let der: Vec<_> = (0..=k).map(|i| w.scaled(2.0 * (2.0 * i as f64 * dt).cos())).collect();
            let res = chain_rule_residuals(&p, &path, dt, Some(&der), rule).unwrap();
            res.into_iter().fold(0.0, f64::max)
        };
        let right = [sup(0.02, Quadrature::Right), sup(0.01, Quadrature::Right)];
        let trap = [sup(0.02, Quadrature::Trapezoid), sup(0.01, Quadrature::Trapezoid)];
        assert!((1.7..2.3).contains(&(right[0] / right[1])), "{right:?}");
        assert!((3.6..4.4).contains(&(trap[0] / trap[1])), "{trap:?}");
    }

    #[test]
    fn chain_rule_along_trajectories_halves() {
        let g = Arc::new(Grid::<f64>::interval(0.0, 1.0, 17).unwrap());
        let p = Problem::builder(g.clone())
            .gradient(PhiSpec::power(3.0).unwrap())
            .zero_order(PhiSpec::power(5.0).unwrap())
            .dirichlet(true)
            .build()
            .unwrap();
        let u0 = GridFunction::from_fn(g, |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
        let mut sups = Vec::new();
        for tau in [0.02, 0.01, 0.005] {
            let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, tau, 0.4).unwrap();
            let r = chain_rule_check(&p, &traj, 1e-10).unwrap();
            assert!(r.passed(), "{}", r.to_csv());
            sups.push(r.series("residual").unwrap().iter().copied().fold(0.0, f64::max));
        }
        for w in sups.windows(2) {
            assert!((1.5..2.5).contains(&(w[0] / w[1])), "{sups:?}");
        }
    }
}
