//! Generalized strong Φ-functions `M(x, z)`.
//!
//! A [`PhiSpec`] is a declarative description of a family plus its
//! parameters; spatially varying coefficients are sampled at grid nodes.
//! All scalar work happens on a [`LocalPhi`], the one-variable convex
//! function obtained by freezing the spatial point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{saturate, Real};

/// Family tag with its parameters. Field-valued parameters hold one value
/// per evaluation site (usually a grid node).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", bound = "T: Real")]
pub enum PhiFamily<T> {
    /// `|z|^p`
    Power { p: T },
    /// `|z|^{p(x)}`
    VariableExponent { p: Vec<T> },
    /// `|z|^p + a(x) |z|^q`
    DoublePhase { p: T, q: T, a: Vec<T> },
    /// `exp(|z|^p) - 1`
    OrliczExp { p: T },
    /// `(|z| + 1) ln(|z| + 1) - |z|`
    #[serde(rename = "llogl")]
    LLogL,
    /// `w(x) |z|^p`
    Weighted { w: Vec<T>, p: T },
    /// `z^2 / 2`
    Quadratic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct PhiSpecRepr<T> {
    #[serde(flatten)]
    family: PhiFamily<T>,
    #[serde(default = "unit_scale")]
    scale: T,
}

fn unit_scale<T: Real>() -> T {
    T::one()
}

/// A validated Φ-function description: `scale * family(x, z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "PhiSpecRepr<T>",
    into = "PhiSpecRepr<T>",
    bound = "T: Real"
)]
pub struct PhiSpec<T: Real> {
    family: PhiFamily<T>,
    scale: T,
}

impl<T: Real> TryFrom<PhiSpecRepr<T>> for PhiSpec<T> {
    type Error = Error;

    fn try_from(repr: PhiSpecRepr<T>) -> Result<Self> {
        PhiSpec::scaled(repr.family, repr.scale)
    }
}

impl<T: Real> From<PhiSpec<T>> for PhiSpecRepr<T> {
    fn from(spec: PhiSpec<T>) -> Self {
        PhiSpecRepr {
            family: spec.family,
            scale: spec.scale,
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidSpec(msg()))
    }
}

fn check_exponent<T: Real>(p: T, what: &str) -> Result<()> {
    ensure(p.is_finite() && p > T::one(), || {
        format!("{what} must be finite and > 1, got {p}")
    })
}

fn check_field<T: Real>(values: &[T], what: &str, ok: impl Fn(T) -> bool) -> Result<()> {
    ensure(!values.is_empty(), || format!("{what} field is empty"))?;
    match values.iter().position(|&v| !v.is_finite() || !ok(v)) {
        Some(i) => Err(Error::InvalidSpec(format!(
            "{what} field has an invalid value {} at site {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

impl<T: Real> PhiSpec<T> {
    pub fn new(family: PhiFamily<T>) -> Result<Self> {
        Self::scaled(family, T::one())
    }

    /// `scale * family`, with `scale > 0`.
    pub fn scaled(family: PhiFamily<T>, scale: T) -> Result<Self> {
        ensure(scale.is_finite() && scale > T::zero(), || {
            format!("scale must be finite and positive, got {scale}")
        })?;
        match &family {
            PhiFamily::Power { p } => check_exponent(*p, "exponent p")?,
            PhiFamily::VariableExponent { p } => {
                check_field(p, "exponent p(x)", |v| v > T::one())?
            }
            PhiFamily::DoublePhase { p, q, a } => {
                check_exponent(*p, "exponent p")?;
                ensure(q.is_finite() && *q > *p, || {
                    format!("double phase needs p < q < inf, got p = {p}, q = {q}")
                })?;
                check_field(a, "weight a(x)", |v| v >= T::zero())?;
            }
            PhiFamily::OrliczExp { p } => ensure(p.is_finite() && *p >= T::one(), || {
                format!("exponential exponent must be >= 1, got {p}")
            })?,
            PhiFamily::Weighted { w, p } => {
                check_exponent(*p, "exponent p")?;
                check_field(w, "weight w(x)", |v| v > T::zero())?;
            }
            PhiFamily::LLogL | PhiFamily::Quadratic => {}
        }
        Ok(PhiSpec { family, scale })
    }

    pub fn power(p: T) -> Result<Self> {
        Self::new(PhiFamily::Power { p })
    }

    /// `|z|^p / p`, whose conjugate is `|y|^{p'} / p'`.
    pub fn power_normalized(p: T) -> Result<Self> {
        Self::scaled(PhiFamily::Power { p }, T::one() / p)
    }

    pub fn quadratic() -> Self {
        PhiSpec {
            family: PhiFamily::Quadratic,
            scale: T::one(),
        }
    }

    pub fn llogl() -> Self {
        PhiSpec {
            family: PhiFamily::LLogL,
            scale: T::one(),
        }
    }

    pub fn orlicz_exp(p: T) -> Result<Self> {
        Self::new(PhiFamily::OrliczExp { p })
    }

    pub fn variable_exponent(p: Vec<T>) -> Result<Self> {
        Self::new(PhiFamily::VariableExponent { p })
    }

    pub fn double_phase(p: T, q: T, a: Vec<T>) -> Result<Self> {
        Self::new(PhiFamily::DoublePhase { p, q, a })
    }

    pub fn weighted(w: Vec<T>, p: T) -> Result<Self> {
        Self::new(PhiFamily::Weighted { w, p })
    }

    pub fn family(&self) -> &PhiFamily<T> {
        &self.family
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            PhiFamily::Power { .. } => "power",
            PhiFamily::VariableExponent { .. } => "variable_exponent",
            PhiFamily::DoublePhase { .. } => "double_phase",
            PhiFamily::OrliczExp { .. } => "orlicz_exp",
            PhiFamily::LLogL => "llogl",
            PhiFamily::Weighted { .. } => "weighted",
            PhiFamily::Quadratic => "quadratic",
        }
    }

    /// Number of sites carried by the coefficient field, if any.
    pub fn field_len(&self) -> Option<usize> {
        match &self.family {
            PhiFamily::VariableExponent { p } => Some(p.len()),
            PhiFamily::DoublePhase { a, .. } => Some(a.len()),
            PhiFamily::Weighted { w, .. } => Some(w.len()),
            _ => None,
        }
    }

    /// Fails unless the coefficient field (if any) has exactly `n` sites.
    pub fn check_sites(&self, n: usize) -> Result<()> {
        match self.field_len() {
            Some(len) if len != n => Err(Error::GridMismatch {
                expected: n,
                found: len,
            }),
            _ => Ok(()),
        }
    }

    /// Freezes the spatial point.
    pub fn local(&self, site: usize) -> Result<LocalPhi<T>> {
        self.averaged(&[site])
    }

    /// Freezes the spatial point using the mean of the coefficient field over
    /// `sites` (used for cell-based evaluation of gradient terms).
    pub fn averaged(&self, sites: &[usize]) -> Result<LocalPhi<T>> {
        let mean = |field: &[T]| -> Result<T> {
            if sites.is_empty() {
                return Err(Error::InvalidInput("empty site list".into()));
            }
            let mut acc = T::zero();
            for &s in sites {
                acc = acc
                    + *field.get(s).ok_or(Error::GridMismatch {
                        expected: s + 1,
                        found: field.len(),
                    })?;
            }
            Ok(acc / T::lit(sites.len() as f64))
        };
        let c = self.scale;
        let local = match &self.family {
            PhiFamily::Power { p } => LocalPhi::power(*p, c),
            PhiFamily::VariableExponent { p } => LocalPhi::power(mean(p)?, c),
            PhiFamily::DoublePhase { p, q, a } => LocalPhi {
                shape: Shape::DoublePhase {
                    p: *p,
                    q: *q,
                    a: mean(a)?,
                },
                scale: c,
            },
            PhiFamily::OrliczExp { p } => LocalPhi {
                shape: Shape::OrliczExp { p: *p },
                scale: c,
            },
            PhiFamily::LLogL => LocalPhi {
                shape: Shape::LLogL,
                scale: c,
            },
            PhiFamily::Weighted { w, p } => LocalPhi::power(*p, c * mean(w)?),
            PhiFamily::Quadratic => LocalPhi {
                shape: Shape::Quadratic,
                scale: c,
            },
        };
        Ok(local)
    }

    /// Resolves every site `0..n`.
    pub fn resolve(&self, n: usize) -> Result<Vec<LocalPhi<T>>> {
        self.check_sites(n)?;
        (0..n).map(|i| self.local(i)).collect()
    }

    /// Searches `ε = 2^-k` such that `M(x, ε) <= 1 <= M(x, 1/ε)` at every
    /// sampled site (condition (4) of the strong Φ-function definition).
    pub fn unit_crossing(&self, sites: &[usize]) -> Result<Option<T>> {
        let locals = sites
            .iter()
            .map(|&s| self.local(s))
            .collect::<Result<Vec<_>>>()?;
        let mut eps = T::one();
        for _ in 0..64 {
            let ok = locals
                .iter()
                .all(|m| m.eval(eps) <= T::one() && m.eval(eps.recip()) >= T::one());
            if ok {
                return Ok(Some(eps));
            }
            eps = eps * T::lit(0.5);
        }
        Ok(None)
    }
}

/// One-variable shape of a frozen Φ-function (before scaling).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape<T> {
    Power { p: T },
    DoublePhase { p: T, q: T, a: T },
    OrliczExp { p: T },
    LLogL,
    Quadratic,
}

/// `scale * shape(z)`: a convex, even, finite function with `M(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalPhi<T> {
    pub shape: Shape<T>,
    pub scale: T,
}

/// Closed interval `[lower, upper]`, the subdifferential at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubdiffInterval<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Real> SubdiffInterval<T> {
    pub fn point(v: T) -> Self {
        SubdiffInterval { lower: v, upper: v }
    }

    pub fn contains(&self, s: T, tol: T) -> bool {
        s >= self.lower - tol && s <= self.upper + tol
    }

    /// Distance from `s` to the interval.
    pub fn distance(&self, s: T) -> T {
        if s < self.lower {
            self.lower - s
        } else if s > self.upper {
            s - self.upper
        } else {
            T::zero()
        }
    }

    pub fn width(&self) -> T {
        self.upper - self.lower
    }
}

/// Convergence controls for the scalar proximal solver.
#[derive(Clone, Copy, Debug)]
pub struct ProxOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProxOptions {
    fn default() -> Self {
        ProxOptions {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

fn pow_abs<T: Real>(z: T, p: T) -> T {
    if z == T::zero() {
        T::zero()
    } else {
        z.abs().powf(p)
    }
}

fn llogl_abs<T: Real>(a: T) -> T {
    if a < T::lit(1e-3) {
        // sum_{k>=2} (-1)^k a^k / (k (k - 1))
        let mut term = a * a;
        let mut acc = T::zero();
        for k in 2..9 {
            let kf = T::lit(k as f64);
            let sign = if k % 2 == 0 { T::one() } else { -T::one() };
            acc = acc + sign * term / (kf * (kf - T::one()));
            term = term * a;
        }
        acc
    } else {
        (T::one() + a) * a.ln_1p() - a
    }
}

impl<T: Real> LocalPhi<T> {
    pub fn power(p: T, scale: T) -> Self {
        LocalPhi {
            shape: Shape::Power { p },
            scale,
        }
    }

    pub fn quadratic(scale: T) -> Self {
        LocalPhi {
            shape: Shape::Quadratic,
            scale,
        }
    }

    fn shape_eval(&self, a: T) -> T {
        match self.shape {
            Shape::Power { p } => pow_abs(a, p),
            Shape::DoublePhase { p, q, a: w } => pow_abs(a, p) + w * pow_abs(a, q),
            Shape::OrliczExp { p } => pow_abs(a, p).exp_m1(),
            Shape::LLogL => llogl_abs(a),
            Shape::Quadratic => a * a * T::lit(0.5),
        }
    }

    /// Right derivative of the unscaled shape at `a >= 0`.
    fn shape_derivative(&self, a: T) -> T {
        match self.shape {
            Shape::Power { p } => p * pow_abs(a, p - T::one()),
            Shape::DoublePhase { p, q, a: w } => {
                p * pow_abs(a, p - T::one()) + w * q * pow_abs(a, q - T::one())
            }
            Shape::OrliczExp { p } => {
                if p == T::one() {
                    a.exp()
                } else {
                    p * pow_abs(a, p - T::one()) * pow_abs(a, p).exp()
                }
            }
            Shape::LLogL => a.ln_1p(),
            Shape::Quadratic => a,
        }
    }

    fn shape_second(&self, a: T) -> T {
        let one = T::one();
        let two = T::lit(2.0);
        let pow_second = |p: T, a: T| -> T {
            if a == T::zero() {
                if p < two {
                    T::infinity()
                } else if p == two {
                    two
                } else {
                    T::zero()
                }
            } else {
                p * (p - one) * a.powf(p - two)
            }
        };
        match self.shape {
            Shape::Power { p } => pow_second(p, a),
            Shape::DoublePhase { p, q, a: w } => {
                let tail = if w == T::zero() {
                    T::zero()
                } else {
                    w * pow_second(q, a)
                };
                pow_second(p, a) + tail
            }
            Shape::OrliczExp { p } => {
                let s = pow_abs(a, p);
                let d = if p == one {
                    one
                } else {
                    p * pow_abs(a, p - one)
                };
                s.exp() * (pow_second(p, a) * if p == one { T::zero() } else { one } + d * d)
            }
            Shape::LLogL => (one + a).recip(),
            Shape::Quadratic => one,
        }
    }

    /// `M(z)`, saturated at [`Real::saturation_cap`].
    pub fn eval(&self, z: T) -> T {
        saturate(self.scale * self.shape_eval(z.abs()))
    }

    /// `true` when the value hit the saturation sentinel.
    pub fn is_capped(&self, z: T) -> bool {
        self.eval(z).is_saturated()
    }

    /// Half-width of the subdifferential at zero (`0` for `C^1` shapes).
    pub fn kink(&self) -> T {
        match self.shape {
            Shape::OrliczExp { p } if p == T::one() => self.scale,
            _ => T::zero(),
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.kink() == T::zero()
    }

    /// Derivative for `z != 0`; at `z = 0` returns `0` (the center of the
    /// symmetric subdifferential).
    pub fn derivative(&self, z: T) -> T {
        if z == T::zero() {
            return T::zero();
        }
        let d = saturate(self.scale * self.shape_derivative(z.abs()));
        if z < T::zero() {
            -d
        } else {
            d
        }
    }

    pub fn subdiff(&self, z: T) -> SubdiffInterval<T> {
        if z == T::zero() {
            let k = self.kink();
            SubdiffInterval {
                lower: -k,
                upper: k,
            }
        } else {
            SubdiffInterval::point(self.derivative(z))
        }
    }

    /// Second derivative, possibly `+inf` at zero for `p < 2`.
    pub fn second_derivative(&self, z: T) -> T {
        let v = self.scale * self.shape_second(z.abs());
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    }

    /// Convex conjugate `M*(y) = sup_z { y z - M(z) }`.
    pub fn conjugate(&self, y: T) -> Result<T> {
        Ok(self.conjugate_with_argmax(y)?.0)
    }

    /// Conjugate value together with a maximizer `z*`, i.e. `y ∈ ∂M(z*)`.
    pub fn conjugate_with_argmax(&self, y: T) -> Result<(T, T)> {
        let c = self.scale;
        let s = y.abs() / c;
        let sign = if y < T::zero() { -T::one() } else { T::one() };
        if s == T::zero() {
            return Ok((T::zero(), T::zero()));
        }
        let one = T::one();
        let closed = match self.shape {
            Shape::Power { p } => {
                let z = (s / p).powf((p - one).recip());
                Some(((p - one) * pow_abs(z, p), z))
            }
            Shape::Quadratic => Some((s * s * T::lit(0.5), s)),
            Shape::LLogL => Some((s.exp_m1() - s, s.exp_m1())),
            Shape::OrliczExp { p } if p == one => {
                if s <= one {
                    Some((T::zero(), T::zero()))
                } else {
                    Some((s * s.ln() - s + one, s.ln()))
                }
            }
            _ => None,
        };
        let (value, z) = match closed {
            Some(pair) => pair,
            None => self.numeric_conjugate(s)?,
        };
        Ok((saturate(c * value.max(T::zero())), sign * z))
    }

    /// Golden-section maximization of `s z - shape(z)` on an adaptively
    /// doubled bracket `[0, 2 Z]`.
    fn numeric_conjugate(&self, s: T) -> Result<(T, T)> {
        let g = |z: T| s * z - self.shape_eval(z);
        let two = T::lit(2.0);
        let mut zmax = T::one();
        while g(two * zmax) > g(zmax) {
            zmax = two * zmax;
            if zmax > T::saturation_cap() {
                return Err(Error::Unbounded {
                    y: s.as_f64(),
                    bracket: zmax.as_f64(),
                });
            }
        }
        let ratio = T::lit(GOLDEN);
        let (mut lo, mut hi) = (T::zero(), two * zmax);
        let mut x1 = hi - ratio * (hi - lo);
        let mut x2 = lo + ratio * (hi - lo);
        let (mut g1, mut g2) = (g(x1), g(x2));
        let tol = T::tol(1e-10) * hi;
        for _ in 0..200 {
            if hi - lo <= tol {
                break;
            }
            if g1 < g2 {
                lo = x1;
                x1 = x2;
                g1 = g2;
                x2 = lo + ratio * (hi - lo);
                g2 = g(x2);
            } else {
                hi = x2;
                x2 = x1;
                g2 = g1;
                x1 = hi - ratio * (hi - lo);
                g1 = g(x1);
            }
        }
        let (z, v) = if g1 >= g2 { (x1, g1) } else { (x2, g2) };
        if v < T::zero() {
            Ok((T::zero(), T::zero()))
        } else {
            Ok((v, z))
        }
    }

    /// `argmin_z { M(z) + (z - v)^2 / (2 lambda) }`.
    pub fn prox(&self, v: T, lambda: T) -> Result<T> {
        prox_sum(&[(T::one(), *self)], v, lambda, ProxOptions::default())
    }

    /// Power-type lower bound `M(z) >= c |z|^s`, when one holds globally.
    pub fn lower_power_bound(&self) -> Option<(T, T)> {
        let c = self.scale;
        match self.shape {
            Shape::Power { p } | Shape::DoublePhase { p, .. } | Shape::OrliczExp { p } => {
                Some((c, p))
            }
            Shape::Quadratic => Some((c * T::lit(0.5), T::lit(2.0))),
            Shape::LLogL => None,
        }
    }
}

/// Proximal map of a weighted sum of frozen Φ-functions:
/// `argmin_z { sum_j w_j M_j(z) + (z - v)^2 / (2 lambda) }`.
///
/// Safeguarded Newton on the monotone stationarity equation with bisection
/// fallback on `[0, |v|]`.
pub fn prox_sum<T: Real>(
    terms: &[(T, LocalPhi<T>)],
    v: T,
    lambda: T,
    opts: ProxOptions,
) -> Result<T> {
    if !(lambda > T::zero()) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be > 0, got {lambda}")));
    }
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("prox argument not finite: {v}")));
    }
    let a = v.abs();
    if a == T::zero() {
        return Ok(T::zero());
    }
    let kink: T = terms.iter().map(|(w, m)| *w * m.kink()).sum();
    if a <= lambda * kink {
        return Ok(T::zero());
    }
    let h = |z: T| -> T {
        let d: T = terms
            .iter()
            .map(|(w, m)| *w * m.derivative(z.max(T::min_positive_value())))
            .sum();
        lambda * saturate(d) + z - a
    };
    let dh = |z: T| -> T {
        let d: T = terms.iter().map(|(w, m)| *w * m.second_derivative(z)).sum();
        lambda * d + T::one()
    };
    let tol = T::tol(opts.tol).max(T::lit(4.0) * T::epsilon() * a.max(T::one()));
    let (mut lo, mut hi) = (T::zero(), a);
    let hv = h(hi);
    if hv.abs() <= tol {
        return Ok(v.signum() * hi);
    }
    let mut z = a;
    let mut hz = hv;
    for _ in 0..opts.max_iter {
        if hz > T::zero() {
            hi = z;
        } else {
            lo = z;
        }
        let slope = dh(z);
        let newton = z - hz / slope;
        let mid = (lo + hi) * T::lit(0.5);
        let candidate = if slope.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            mid
        };
        let hc = h(candidate);
        // fall back to bisection when Newton fails to halve the residual
        let (next, hn) = if candidate != mid && hc.abs() > T::lit(0.5) * hz.abs() {
            let hm = h(mid);
            if hm.abs() < hc.abs() {
                (mid, hm)
            } else {
                (candidate, hc)
            }
        } else {
            (candidate, hc)
        };
        if hn.abs() <= tol || next == lo || next == hi || hi - lo <= T::epsilon() * hi {
            return Ok(v.signum() * next);
        }
        z = next;
        hz = hn;
    }
    Err(Error::ProxNotConverged {
        lo: lo.as_f64(),
        hi: hi.as_f64(),
        iterations: opts.max_iter,
    })
}

/// `M(x, z)` at site `x`.
pub fn eval_phi<T: Real>(spec: &PhiSpec<T>, x: usize, z: T) -> Result<T> {
    Ok(spec.local(x)?.eval(z))
}

/// `∂M(x, ·)(z)`.
pub fn subdiff<T: Real>(spec: &PhiSpec<T>, x: usize, z: T) -> Result<SubdiffInterval<T>> {
    Ok(spec.local(x)?.subdiff(z))
}

/// `M*(x, y)`.
pub fn conjugate_eval<T: Real>(spec: &PhiSpec<T>, x: usize, y: T) -> Result<T> {
    spec.local(x)?.conjugate(y)
}

/// Pointwise proximal map at site `x`.
pub fn pointwise_prox<T: Real>(spec: &PhiSpec<T>, x: usize, v: T, lambda: T) -> Result<T> {
    spec.local(x)?.prox(v, lambda)
}

/// Sampling plan for the doubling-condition probe.
#[derive(Clone, Debug)]
pub struct DoublingProbe<T> {
    pub z_min: T,
    pub z_max: T,
    pub samples: usize,
    /// Additive slack `h` in `M(2z) <= k M(z) + h`; `0` is the strong form.
    pub slack: T,
    /// Ratio growth across the top decade that counts as unbounded.
    pub growth_limit: T,
}

impl<T: Real> Default for DoublingProbe<T> {
    fn default() -> Self {
        DoublingProbe {
            z_min: T::lit(1e-3),
            z_max: T::lit(1e6),
            samples: 91,
            slack: T::zero(),
            growth_limit: T::lit(2.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DoublingWitness<T> {
    pub site: usize,
    pub z: T,
    /// `M(2z) / M(z)`; `+inf` when `M(2z)` saturated or `M(z) = 0 < M(2z)`.
    pub ratio: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoublingReport<T> {
    pub holds: bool,
    /// Smallest `k` admissible on the finite samples.
    pub best_k: T,
    pub witness: Option<DoublingWitness<T>>,
}

fn log_samples<T: Real>(probe: &DoublingProbe<T>) -> Vec<T> {
    let n = probe.samples.max(2);
    let (l0, l1) = (probe.z_min.ln(), probe.z_max.ln());
    (0..n)
        .map(|i| (l0 + (l1 - l0) * T::lit(i as f64 / (n - 1) as f64)).exp())
        .collect()
}

fn doubling_probe<T: Real>(
    spec: &PhiSpec<T>,
    sites: &[usize],
    probe: &DoublingProbe<T>,
    f: impl Fn(&LocalPhi<T>, T) -> Option<T>,
) -> Result<DoublingReport<T>> {
    let zs = log_samples(probe);
    let mut best = T::zero();
    let mut witness = None;
    let sites: Vec<usize> = if sites.is_empty() { vec![0] } else { sites.to_vec() };
    for &site in &sites {
        let m = spec.local(site)?;
        let mut ratios = Vec::with_capacity(zs.len());
        for &z in &zs {
            let (m1, m2) = (f(&m, z), f(&m, z + z));
            let ratio = match (m1, m2) {
                (Some(a), Some(b)) if !b.is_saturated() => {
                    let excess = b - probe.slack;
                    if excess <= T::zero() {
                        T::zero()
                    } else if a > T::zero() {
                        excess / a
                    } else {
                        T::infinity()
                    }
                }
                _ => T::infinity(),
            };
            if !ratio.is_finite() {
                witness.get_or_insert(DoublingWitness { site, z, ratio });
                break;
            }
            best = best.max(ratio);
            ratios.push((z, ratio));
        }
        if witness.is_none() && ratios.len() >= 2 {
            let (z_top, r_top) = ratios[ratios.len() - 1];
            let decade = z_top * T::lit(0.1);
            if let Some(&(_, r_low)) = ratios.iter().rev().find(|(z, _)| *z <= decade) {
                if r_top > probe.growth_limit * r_low {
                    witness = Some(DoublingWitness {
                        site,
                        z: z_top,
                        ratio: r_top,
                    });
                }
            }
        }
        if witness.is_some() {
            break;
        }
    }
    Ok(DoublingReport {
        holds: witness.is_none(),
        best_k: best,
        witness,
    })
}

/// Empirical strong-Δ₂ probe: `M(x, 2z) <= k M(x, z) + h` over log-spaced
/// `z` and the given sites. A falsification test, not a proof.
pub fn check_delta2<T: Real>(
    spec: &PhiSpec<T>,
    probe: &DoublingProbe<T>,
    sites: &[usize],
) -> Result<DoublingReport<T>> {
    doubling_probe(spec, sites, probe, |m, z| Some(m.eval(z)))
}

/// ∇₂ probe: the Δ₂ probe applied to the conjugate `M*`.
pub fn check_nabla2<T: Real>(
    spec: &PhiSpec<T>,
    probe: &DoublingProbe<T>,
    sites: &[usize],
) -> Result<DoublingReport<T>> {
    doubling_probe(spec, sites, probe, |m, y| m.conjugate(y).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn families() -> Vec<PhiSpec<f64>> {
        vec![
            PhiSpec::power(2.0).unwrap(),
            PhiSpec::power(1.5).unwrap(),
            PhiSpec::power(4.0).unwrap(),
            PhiSpec::double_phase(2.0, 4.0, vec![1.0]).unwrap(),
            PhiSpec::orlicz_exp(1.0).unwrap(),
            PhiSpec::orlicz_exp(2.0).unwrap(),
            PhiSpec::llogl(),
            PhiSpec::weighted(vec![3.0], 3.0).unwrap(),
            PhiSpec::quadratic(),
            PhiSpec::variable_exponent(vec![2.5]).unwrap(),
        ]
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_phi(&PhiSpec::power(2.0).unwrap(), 0, 3.0).unwrap(), 9.0);
        let dp = PhiSpec::double_phase(2.0, 4.0, vec![1.0]).unwrap();
        assert_relative_eq!(eval_phi(&dp, 0, 2.0).unwrap(), 20.0, max_relative = 1e-15);
        for spec in families() {
            assert_eq!(eval_phi(&spec, 0, 0.0).unwrap(), 0.0, "{}", spec.name());
        }
    }

    #[test]
    fn subdiff_examples() {
        let s = subdiff(&PhiSpec::power(2.0).unwrap(), 0, 3.0).unwrap();
        assert_eq!((s.lower, s.upper), (6.0, 6.0));
        let s = subdiff(&PhiSpec::llogl(), 0, 0.0).unwrap();
        assert_eq!((s.lower, s.upper), (0.0, 0.0));
        // -1.5 * sqrt(2), mpmath
        let s = subdiff(&PhiSpec::power(1.5).unwrap(), 0, -2.0).unwrap();
        assert_relative_eq!(s.lower, -2.121_320_343_559_642_6, max_relative = 1e-14);
        assert_eq!(s.lower, s.upper);
        let s = subdiff(&PhiSpec::orlicz_exp(1.0).unwrap(), 0, 0.0).unwrap();
        assert_eq!((s.lower, s.upper), (-1.0, 1.0));
    }

    #[test]
    fn subdiff_matches_central_differences() {
        let h = 1e-5;
        for spec in families() {
            let m = spec.local(0).unwrap();
            for &z in &[-1.3, -0.4, 0.25, 0.9, 1.7] {
                let fd = (m.eval(z + h) - m.eval(z - h)) / (2.0 * h);
                let d = m.derivative(z);
                assert!(
                    (fd - d).abs() <= 1e-7 * (1.0 + d.abs()),
                    "{} z={z}: fd {fd} vs {d}",
                    spec.name()
                );
            }
        }
    }

    #[test]
    fn conjugate_examples() {
        let q = PhiSpec::<f64>::quadratic();
        assert_relative_eq!(conjugate_eval(&q, 0, 3.0).unwrap(), 4.5, max_relative = 1e-15);
        let pn = PhiSpec::power_normalized(3.0).unwrap();
        // 2^1.5 / 1.5, mpmath
        assert_relative_eq!(
            conjugate_eval(&pn, 0, 2.0).unwrap(),
            1.885_618_083_164_126_7,
            max_relative = 1e-13
        );
        for spec in families() {
            assert_eq!(conjugate_eval(&spec, 0, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn numeric_conjugates_match_mpmath() {
        let dp = PhiSpec::double_phase(2.0, 4.0, vec![1.0]).unwrap();
        let (v, z) = dp.local(0).unwrap().conjugate_with_argmax(3.0).unwrap();
        assert_relative_eq!(v, 1.373_132_987_937_327_2, max_relative = 1e-12);
        assert_relative_eq!(z, 0.728_082_123_067_954_2, max_relative = 1e-6);
        let e2 = PhiSpec::orlicz_exp(2.0).unwrap();
        assert_relative_eq!(
            conjugate_eval(&e2, 0, 1.5).unwrap(),
            0.471_777_351_289_841_8,
            max_relative = 1e-12
        );
    }

    #[test]
    fn closed_form_conjugates_agree_with_golden_section() {
        // Compare each closed form against the numeric route on the same shape.
        let cases = [
            LocalPhi::power(3.0, 1.0),
            LocalPhi::power(1.5, 2.0),
            LocalPhi::quadratic(0.5),
            LocalPhi {
                shape: Shape::LLogL,
                scale: 1.0,
            },
            LocalPhi {
                shape: Shape::OrliczExp { p: 1.0 },
                scale: 1.0,
            },
        ];
        for m in cases {
            for &y in &[0.3, 1.0, 2.5, 7.0] {
                let closed = m.conjugate(y).unwrap();
                let (num, _) = m.numeric_conjugate(y / m.scale).unwrap();
                assert_relative_eq!(closed, m.scale * num, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn prox_examples() {
        let q = PhiSpec::<f64>::quadratic();
        assert_relative_eq!(pointwise_prox(&q, 0, 2.0, 1.0).unwrap(), 1.0, max_relative = 1e-14);
        for spec in families() {
            assert_eq!(pointwise_prox(&spec, 0, 0.0, 0.7).unwrap(), 0.0);
        }
        // root of 4 lambda z^3 + z = v at lambda = 1/2, v = 1 (mpmath)
        let p4 = PhiSpec::<f64>::power(4.0).unwrap();
        let z = pointwise_prox(&p4, 0, 1.0, 0.5).unwrap();
        assert!((z - 0.589_754_512_301_458_4).abs() < 1e-12);
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 2.0 * mid.powi(3) + mid - 1.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((z - lo).abs() < 1e-12);
    }

    #[test]
    fn prox_near_infinite_slope_root() {
        let p = PhiSpec::<f64>::power(1.5).unwrap();
        for a in [1e-9, 1e-6, 1e-3] {
            let z = pointwise_prox(&p, 0, a, 1.0).unwrap();
            let h = 1.5 * z.sqrt() + z - a;
            assert!(h.abs() <= 1e-12, "a {a}: z {z:e}, stationarity {h:e}");
        }
    }

    #[test]
    fn prox_respects_kink() {
        let e1 = PhiSpec::<f64>::orlicz_exp(1.0).unwrap();
        assert_eq!(pointwise_prox(&e1, 0, 0.5, 1.0).unwrap(), 0.0);
        let z = pointwise_prox(&e1, 0, 3.0, 1.0).unwrap();
        // stationarity: e^z + z = 3
        assert!((z.exp() + z - 3.0).abs() < 1e-11);
    }

    #[test]
    fn prox_rejects_bad_lambda() {
        let q = PhiSpec::<f64>::quadratic();
        assert!(pointwise_prox(&q, 0, 1.0, 0.0).is_err());
        assert!(pointwise_prox(&q, 0, 1.0, -1.0).is_err());
    }

    #[test]
    fn saturation_is_flagged() {
        let e = PhiSpec::orlicz_exp(1.0).unwrap().local(0).unwrap();
        assert!(e.is_capped(1000.0));
        assert!(!e.is_capped(10.0));
        assert_eq!(e.eval(1e6), f64::saturation_cap());
    }

    #[test]
    fn delta2_examples() {
        let probe = DoublingProbe::default();
        let r = check_delta2(&PhiSpec::power(2.0).unwrap(), &probe, &[0]).unwrap();
        assert!(r.holds);
        assert_relative_eq!(r.best_k, 4.0, max_relative = 1e-12);

        let r = check_delta2(&PhiSpec::orlicz_exp(1.0).unwrap(), &probe, &[0]).unwrap();
        assert!(!r.holds);
        assert!(r.witness.is_some());

        let p: Vec<f64> = (0..11).map(|i| 1.5 + 0.25 * i as f64).collect();
        let spec = PhiSpec::variable_exponent(p).unwrap();
        let sites: Vec<usize> = (0..11).collect();
        let r = check_delta2(&spec, &probe, &sites).unwrap();
        assert!(r.holds);
        assert_relative_eq!(r.best_k, 2f64.powf(4.0), max_relative = 1e-12);

        let r = check_nabla2(&PhiSpec::llogl(), &probe, &[0]).unwrap();
        assert!(!r.holds);
        let r = check_delta2(&PhiSpec::llogl(), &probe, &[0]).unwrap();
        assert!(r.holds);
        let r = check_nabla2(&PhiSpec::power(3.0).unwrap(), &probe, &[0]).unwrap();
        assert!(r.holds);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(PhiSpec::power(1.0).is_err());
        assert!(PhiSpec::double_phase(3.0, 2.0, vec![1.0]).is_err());
        assert!(PhiSpec::double_phase(2.0, 3.0, vec![-1.0]).is_err());
        assert!(PhiSpec::weighted(vec![0.0], 2.0).is_err());
        assert!(PhiSpec::variable_exponent(vec![2.0, 0.9]).is_err());
        assert!(PhiSpec::orlicz_exp(0.5).is_err());
        assert!(PhiSpec::scaled(PhiFamily::Quadratic, -1.0).is_err());
    }

    #[test]
    fn unit_crossing_found() {
        for spec in families() {
            assert!(spec.unit_crossing(&[0]).unwrap().is_some());
        }
    }

    #[test]
    fn serde_round_trip_validates() {
        let spec = PhiSpec::double_phase(2.0, 4.0, vec![0.0, 0.5, 1.0]).unwrap();
        let repr = PhiSpecRepr::from(spec.clone());
        let back = PhiSpec::try_from(repr).unwrap();
        assert_eq!(back, spec);
        let bad = PhiSpecRepr {
            family: PhiFamily::Power { p: 0.5 },
            scale: 1.0,
        };
        assert!(PhiSpec::try_from(bad).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let m = PhiSpec::<f32>::power(3.0).unwrap().local(0).unwrap();
        let z = m.prox(1.0, 0.5).unwrap();
        assert!((1.5 * z * z + z - 1.0).abs() < 1e-5);
        assert!((m.conjugate(2.0).unwrap() - 2.0 * (2.0f32 / 3.0).powf(1.5)).abs() < 1e-5);
    }

    fn family_strategy() -> impl Strategy<Value = PhiSpec<f64>> {
        prop::sample::select(families())
    }

    proptest! {
        #[test]
        fn convex_and_even(spec in family_strategy(), z1 in -3.0..3.0f64, z2 in -3.0..3.0f64, t in 0.0..1.0f64) {
            let m = spec.local(0).unwrap();
            prop_assert_eq!(m.eval(z1), m.eval(-z1));
            let mid = m.eval(t * z1 + (1.0 - t) * z2);
            let chord = t * m.eval(z1) + (1.0 - t) * m.eval(z2);
            prop_assert!(mid <= chord + 1e-12 * (1.0 + chord));
        }

        #[test]
        fn fenchel_young(spec in family_strategy(), z in -2.5..2.5f64, y in -6.0..6.0f64) {
            let m = spec.local(0).unwrap();
            let conj = m.conjugate(y).unwrap();
            prop_assert!(y * z <= m.eval(z) + conj + 1e-9 * (1.0 + conj));
            // equality on the subdifferential
            let s = m.derivative(z);
            let gap = m.eval(z) + m.conjugate(s).unwrap() - s * z;
            prop_assert!(gap.abs() <= 1e-9 * (1.0 + m.eval(z).abs() + (s * z).abs()), "gap {}", gap);
        }

        #[test]
        fn biconjugate_recovers(spec in family_strategy(), z in -2.0..2.0f64) {
            // M**(z) = sup_y { yz - M*(y) } is attained at y = M'(z)
            let m = spec.local(0).unwrap();
            let y = m.derivative(z);
            let best = y * z - m.conjugate(y).unwrap();
            for dy in [-0.1, -0.01, 0.01, 0.1] {
                let other = (y + dy) * z - m.conjugate(y + dy).unwrap();
                prop_assert!(other <= best + 1e-9 * (1.0 + best.abs()));
            }
            prop_assert!((best - m.eval(z)).abs() <= 1e-9 * (1.0 + m.eval(z)));
        }

        #[test]
        fn prox_stationarity(spec in family_strategy(), v in -4.0..4.0f64, lambda in 0.01..5.0f64) {
            let m = spec.local(0).unwrap();
            let z = m.prox(v, lambda).unwrap();
            prop_assert!(z.abs() <= v.abs() + 1e-15);
            prop_assert!(z == 0.0 || z.signum() == v.signum());
            let s = (v - z) / lambda;
            let tol = 1e-9 * (1.0 + s.abs());
            prop_assert!(m.subdiff(z).contains(s, tol), "s = {} not in {:?}", s, m.subdiff(z));
        }
    }
}
