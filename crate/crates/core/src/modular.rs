//! Discrete modular spaces: integral modulars, Luxemburg norms, conjugate
//! modulars, the duality pairing and checkers for the inequalities relating
//! them.
//!
//! In finite dimensions the small and large modular spaces coincide and the
//! extended duality pairing is the weighted dot product, so both are
//! represented by plain [`GridFunction`]s.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::phi::{LocalPhi, PhiSpec};
use crate::report::{Check, DiagnosticsReport};
use crate::scalar::Real;

/// A modular value in `[0, +inf]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModularValue<T> {
    Finite(T),
    Infinite,
}

impl<T: Real> ModularValue<T> {
    pub fn from_sum(v: T) -> Self {
        if v.is_saturated() {
            ModularValue::Infinite
        } else {
            ModularValue::Finite(v)
        }
    }

    /// The value, with `+inf` for the sentinel.
    pub fn value(self) -> T {
        match self {
            ModularValue::Finite(v) => v,
            ModularValue::Infinite => T::infinity(),
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ModularValue::Finite(_))
    }
}

fn check_grid<T: Real>(grid: &Grid<T>, spec: &PhiSpec<T>, v: &GridFunction<T>) -> Result<()> {
    if **v.grid() != *grid {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            found: v.len(),
        });
    }
    spec.check_sites(grid.len())
}

/// Frozen Φ-functions at every node of `grid`.
pub fn locals<T: Real>(grid: &Grid<T>, spec: &PhiSpec<T>) -> Result<Vec<LocalPhi<T>>> {
    spec.resolve(grid.len())
}

fn modular_sum<T: Real>(weights: &[T], locals: &[LocalPhi<T>], values: &[T], scale: T) -> T {
    let mut acc = T::zero();
    for ((w, m), &v) in weights.iter().zip(locals).zip(values) {
        let term = m.eval(v * scale);
        if term.is_saturated() {
            return T::saturation_cap();
        }
        acc = acc + *w * term;
    }
    acc
}

fn conjugate_sum<T: Real>(
    weights: &[T],
    locals: &[LocalPhi<T>],
    values: &[T],
    scale: T,
) -> Result<T> {
    let mut acc = T::zero();
    for ((w, m), &v) in weights.iter().zip(locals).zip(values) {
        let term = m.conjugate(v * scale)?;
        if term.is_saturated() {
            return Ok(T::saturation_cap());
        }
        acc = acc + *w * term;
    }
    Ok(acc)
}

/// `φ_M(v) = Σ_i w_i M(x_i, v_i)`; `+inf` if any term saturates.
pub fn modular<T: Real>(
    grid: &Grid<T>,
    spec: &PhiSpec<T>,
    v: &GridFunction<T>,
) -> Result<ModularValue<T>> {
    check_grid(grid, spec, v)?;
    let locals = locals(grid, spec)?;
    Ok(ModularValue::from_sum(modular_sum(
        grid.weights(),
        &locals,
        v.values(),
        T::one(),
    )))
}

/// `Σ_i w_i M*(x_i, y_i)`, the nodewise conjugate of the integral modular.
pub fn conjugate_modular<T: Real>(
    grid: &Grid<T>,
    spec: &PhiSpec<T>,
    y: &GridFunction<T>,
) -> Result<ModularValue<T>> {
    check_grid(grid, spec, y)?;
    let locals = locals(grid, spec)?;
    Ok(ModularValue::from_sum(conjugate_sum(
        grid.weights(),
        &locals,
        y.values(),
        T::one(),
    )?))
}

/// `[y, v] = Σ_i w_i y_i v_i`.
pub fn pairing<T: Real>(y: &GridFunction<T>, v: &GridFunction<T>) -> Result<T> {
    y.check_same_grid(v)?;
    Ok(y.values()
        .iter()
        .zip(v.values())
        .zip(y.grid().weights())
        .map(|((&a, &b), &w)| w * a * b)
        .sum())
}

const LUX_MAX_ITER: usize = 200;

/// `inf { λ > 0 : f(1/λ) <= 1 }` for a modular `f` evaluated on the scaled
/// function. Returns the feasible end of the final bracket.
pub(crate) fn luxemburg_by<T: Real>(
    mut scaled_modular: impl FnMut(T) -> Result<T>,
    tol: T,
) -> Result<T> {
    let one = T::one();
    let two = T::lit(2.0);
    let feasible = |v: T| v.is_finite() && !v.is_saturated() && v <= one;
    let mut eval = |lambda: T| -> Result<bool> { Ok(feasible(scaled_modular(lambda.recip())?)) };

    let (mut lo, mut hi);
    if eval(one)? {
        hi = one;
        lo = one / two;
        let mut n = 0;
        while eval(lo)? {
            hi = lo;
            lo = lo / two;
            n += 1;
            if n > 4 * LUX_MAX_ITER || lo == T::zero() {
                return Ok(T::zero());
            }
        }
    } else {
        lo = one;
        hi = two;
        let mut n = 0;
        while !eval(hi)? {
            lo = hi;
            hi = hi * two;
            n += 1;
            if n > 4 * LUX_MAX_ITER || !hi.is_finite() {
                return Err(Error::InvalidInput(
                    "Luxemburg bracket search diverged".into(),
                ));
            }
        }
    }
    let tol = tol.max(T::tol_floor());
    for _ in 0..LUX_MAX_ITER {
        if hi - lo <= tol * hi {
            break;
        }
        let mid = (lo + hi) / two;
        if mid <= lo || mid >= hi {
            break;
        }
        if eval(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Luxemburg norm `‖v‖_φ = inf { λ > 0 : φ(v/λ) <= 1 }` by bracketing and
/// bisection to relative tolerance `tol`.
pub fn luxemburg_norm<T: Real>(
    grid: &Grid<T>,
    spec: &PhiSpec<T>,
    v: &GridFunction<T>,
    tol: T,
) -> Result<T> {
    check_grid(grid, spec, v)?;
    if v.is_zero() {
        return Ok(T::zero());
    }
    let locals = locals(grid, spec)?;
    luxemburg_by(
        |s| Ok(modular_sum(grid.weights(), &locals, v.values(), s)),
        tol,
    )
}

/// Luxemburg norm driven by the conjugate modular.
pub fn lux_norm_conj<T: Real>(
    grid: &Grid<T>,
    spec: &PhiSpec<T>,
    y: &GridFunction<T>,
    tol: T,
) -> Result<T> {
    check_grid(grid, spec, y)?;
    if y.is_zero() {
        return Ok(T::zero());
    }
    let locals = locals(grid, spec)?;
    luxemburg_by(|s| conjugate_sum(grid.weights(), &locals, y.values(), s), tol)
}

/// Outcome of [`check_dual_sandwich`].
#[derive(Clone, Debug)]
pub struct DualSandwich<T> {
    /// `‖y‖_{φ*}`
    pub conj_norm: T,
    /// Best `[y, x]` found over the unit ball of `‖·‖_φ`.
    pub dual_norm: T,
    /// The exact Lagrange maximizer route; the heuristic candidates are
    /// reported separately in `heuristic_best`.
    pub lagrange: T,
    pub heuristic_best: T,
    pub report: DiagnosticsReport,
}

/// `x_i ∈ ∂M*(y_i / μ)`, the maximizers of `[y, x]` on modular level sets.
fn lagrange_candidate<T: Real>(locals: &[LocalPhi<T>], y: &[T], mu: T) -> Result<Vec<T>> {
    locals
        .iter()
        .zip(y)
        .map(|(m, &yi)| Ok(m.conjugate_with_argmax(yi / mu)?.1))
        .collect()
}

/// Estimates the operator dual norm `sup { [y, x] : ‖x‖_φ <= 1 }` and checks
/// `‖y‖_{φ*} <= dual <= 2 ‖y‖_{φ*}`.
///
/// The supremum is computed along the exact Lagrange route (a 1-D search for
/// the multiplier of the modular constraint) and compared against heuristic
/// candidates: the sign pattern of `y`, signed coordinate vectors, and
/// `n_trials` random directions, each normalized to unit Luxemburg norm.
pub fn check_dual_sandwich<T: Real, R: Rng + ?Sized>(
    grid: &Grid<T>,
    spec: &PhiSpec<T>,
    y: &GridFunction<T>,
    n_trials: usize,
    rng: &mut R,
    tol: T,
) -> Result<DualSandwich<T>> {
    check_grid(grid, spec, y)?;
    let mut report = DiagnosticsReport::new("dual_sandwich");
    let conj = lux_norm_conj(grid, spec, y, tol)?;
    if y.is_zero() {
        report
            .push(Check::at_most("lower", 0.0, tol.as_f64()))
            .push(Check::at_most("upper", 0.0, tol.as_f64()));
        return Ok(DualSandwich {
            conj_norm: T::zero(),
            dual_norm: T::zero(),
            lagrange: T::zero(),
            heuristic_best: T::zero(),
            report,
        });
    }
    let locals = locals(grid, spec)?;
    let w = grid.weights();
    let norm_tol = tol.min(T::tol(1e-12));
    let normalized_pairing = |x: Vec<T>| -> Result<T> {
        let xf = y.with_values(x);
        if xf.is_zero() {
            return Ok(T::zero());
        }
        let n = luxemburg_norm(grid, spec, &xf, norm_tol)?;
        Ok(pairing(y, &xf)? / n)
    };

    // Lagrange route: find μ with φ(x(μ)) = 1 by bisection on log μ.
    let level = |mu: T| -> Result<T> {
        let x = lagrange_candidate(&locals, y.values(), mu)?;
        Ok(modular_sum(w, &locals, &x, T::one()))
    };
    let two = T::lit(2.0);
    let (mut lo, mut hi) = (T::one(), T::one());
    while level(lo)? <= T::one() && lo > T::lit(1e-200) {
        lo = lo / two;
    }
    while level(hi)? > T::one() && hi < T::lit(1e200) {
        hi = hi * two;
    }
    for _ in 0..200 {
        if hi - lo <= T::tol(1e-13) * hi {
            break;
        }
        let mid = (lo + hi) / two;
        if level(mid)? > T::one() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lagrange = normalized_pairing(lagrange_candidate(&locals, y.values(), hi)?)?;

    let mut heuristic = normalized_pairing(y.values().iter().map(|v| v.signum()).collect())?;
    for i in 0..y.len() {
        if y.values()[i] != T::zero() {
            let mut e = vec![T::zero(); y.len()];
            e[i] = y.values()[i].signum();
            heuristic = heuristic.max(normalized_pairing(e)?);
        }
    }
    for _ in 0..n_trials {
        let x: Vec<T> = (0..y.len())
            .map(|_| T::lit(rng.gen_range(-1.0..1.0)))
            .collect();
        heuristic = heuristic.max(normalized_pairing(x)?.abs());
    }
    let dual = lagrange.max(heuristic);
    let slack = tol * (T::one() + conj);
    report
        .push(Check::at_most(
            "lower",
            (conj - dual).max(T::zero()).as_f64(),
            slack.as_f64(),
        ))
        .push(Check::at_most(
            "upper",
            (dual - two * conj).max(T::zero()).as_f64(),
            slack.as_f64(),
        ))
        .push(Check::at_most(
            "lagrange_dominates_heuristics",
            (heuristic - lagrange).max(T::zero()).as_f64(),
            (slack * T::lit(10.0)).as_f64(),
        ));
    Ok(DualSandwich {
        conj_norm: conj,
        dual_norm: dual,
        lagrange,
        heuristic_best: heuristic,
        report,
    })
}

/// Norm–modular relations: `‖v‖ < 1 ⇒ φ(v) <= ‖v‖` and
/// `‖v‖ > 1 ⇒ φ(v) >= ‖v‖`, plus the unit-ball property `φ(v/‖v‖) <= 1`.
pub fn check_norm_modular_relations<T: Real>(
    grid: &Grid<T>,
    spec: &PhiSpec<T>,
    v: &GridFunction<T>,
    tol: T,
) -> Result<DiagnosticsReport> {
    let mut report = DiagnosticsReport::new("norm_modular");
    let norm = luxemburg_norm(grid, spec, v, tol.min(T::tol(1e-12)))?;
    let phi = modular(grid, spec, v)?.value();
    let slack = tol * (T::one() + norm);
    let one = T::one();
    let below = if norm < one {
        (phi - norm).max(T::zero())
    } else {
        T::zero()
    };
    let above = if norm > one {
        (norm - phi).max(T::zero())
    } else {
        T::zero()
    };
    report
        .push(Check::at_most(
            "small_norm_bound",
            below.as_f64(),
            slack.as_f64(),
        ))
        .push(Check::at_most(
            "large_norm_bound",
            above.as_f64(),
            slack.as_f64(),
        ));
    if norm > T::zero() {
        let unit = modular(grid, spec, &v.scaled(norm.recip()))?.value();
        report.push(Check::at_most(
            "unit_ball",
            (unit - one).max(T::zero()).as_f64(),
            tol.as_f64(),
        ));
    }
    Ok(report)
}
