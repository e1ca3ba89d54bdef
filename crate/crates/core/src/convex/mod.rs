//! Discretized convex energies and their Moreau–Yosida machinery.
//!
//! A [`Problem`] is the energy
//!
//! ```text
//! φ(u) = Σ_i w_i N_i(u_i) + Σ_s W_s M_s(|∇_h u|_s) + Σ_{j ∈ Γ} w_j^Γ M_j^Γ(u_j)
//! ```
//!
//! restricted to grid functions vanishing at the Dirichlet nodes, on the
//! Hilbert space of grid functions with the mass inner product
//! `(a, b)_H = Σ_i m_i a_i b_i`.

mod certificate;
mod identities;
mod resolvent;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GradientStencil, Grid, GridFunction};
use crate::modular::ModularValue;
use crate::phi::{LocalPhi, PhiSpec};
use crate::scalar::Real;

pub use certificate::YoungCertificate;
pub use identities::{verify_resolvent_identities, IdentityOptions};
pub use resolvent::{
    default_inner_tol, envelope, resolvent, resolvent_from, yosida, ResolventOptions,
    ResolventResult,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    ReactionDiffusion,
    ZeroOrder,
    MusielakSobolev,
    DynamicBoundary,
    ClassicalVariational,
    Custom,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::ReactionDiffusion => "reaction_diffusion",
            ProblemKind::ZeroOrder => "zero_order",
            ProblemKind::MusielakSobolev => "musielak_sobolev",
            ProblemKind::DynamicBoundary => "dynamic_boundary",
            ProblemKind::ClassicalVariational => "classical_variational",
            ProblemKind::Custom => "custom",
        }
    }
}

/// `Σ_s W_s M_s(|g_s|)` over the samples of a gradient stencil.
#[derive(Clone, Debug)]
pub struct GradientPart<T> {
    pub stencil: GradientStencil<T>,
    pub phis: Vec<LocalPhi<T>>,
}

/// Nodewise integrand: `(weight, M)` pairs acting on a single nodal value.
pub type NodeTerms<T> = Vec<(T, LocalPhi<T>)>;

#[derive(Clone, Debug)]
pub struct Problem<T> {
    grid: Arc<Grid<T>>,
    kind: ProblemKind,
    mass: Vec<T>,
    free: Vec<bool>,
    nodes: Vec<NodeTerms<T>>,
    gradient: Option<GradientPart<T>>,
    coercivity: Option<(T, T)>,
}

/// Assembles a [`Problem`] term by term.
#[derive(Clone, Debug)]
pub struct ProblemBuilder<T: Real> {
    grid: Arc<Grid<T>>,
    kind: ProblemKind,
    zero_order: Option<PhiSpec<T>>,
    gradient: Option<PhiSpec<T>>,
    boundary: Option<PhiSpec<T>>,
    dirichlet: bool,
    coercivity: Option<(T, T)>,
}

impl<T: Real> ProblemBuilder<T> {
    pub fn new(grid: Arc<Grid<T>>) -> Self {
        ProblemBuilder {
            grid,
            kind: ProblemKind::Custom,
            zero_order: None,
            gradient: None,
            boundary: None,
            dirichlet: false,
            coercivity: None,
        }
    }

    pub fn kind(mut self, kind: ProblemKind) -> Self {
        self.kind = kind;
        self
    }

    /// Bulk term `Σ_i w_i N(x_i, u_i)`.
    pub fn zero_order(mut self, spec: PhiSpec<T>) -> Self {
        self.zero_order = Some(spec);
        self
    }

    /// Gradient term; coefficient fields are averaged over each cell.
    pub fn gradient(mut self, spec: PhiSpec<T>) -> Self {
        self.gradient = Some(spec);
        self
    }

    /// Boundary term on the grid's trace. Switches the Hilbert space to the
    /// product `L^2(Ω) × L^2(Γ)`: boundary nodes carry mass `w_i + w_i^Γ`.
    /// Coefficient fields are indexed either by trace position or by bulk
    /// node.
    pub fn boundary(mut self, spec: PhiSpec<T>) -> Self {
        self.boundary = Some(spec);
        self
    }

    /// Pins the boundary nodes to zero.
    pub fn dirichlet(mut self, on: bool) -> Self {
        self.dirichlet = on;
        self
    }

    /// Declared `φ(u) >= c ‖u‖_H^s`.
    pub fn coercivity(mut self, c: T, s: T) -> Self {
        self.coercivity = Some((c, s));
        self
    }

    pub fn build(self) -> Result<Problem<T>> {
        let grid = self.grid;
        let n = grid.len();
        let mut mass = grid.weights().to_vec();
        let mut nodes: Vec<NodeTerms<T>> = vec![Vec::new(); n];
        if let Some(spec) = &self.zero_order {
            for (i, m) in spec.resolve(n)?.into_iter().enumerate() {
                nodes[i].push((grid.weights()[i], m));
            }
        }
        if let Some(spec) = &self.boundary {
            let trace = grid.trace().ok_or_else(|| {
                Error::InvalidInput("boundary term needs a grid with a boundary trace".into())
            })?;
            let by_trace = spec.field_len() == Some(trace.nodes().len());
            if !by_trace {
                spec.check_sites(n)?;
            }
            for (j, (&i, &wg)) in trace.nodes().iter().zip(trace.weights()).enumerate() {
                let m = spec.local(if by_trace { j } else { i })?;
                nodes[i].push((wg, m));
                mass[i] = mass[i] + wg;
            }
        }
        let gradient = match &self.gradient {
            Some(spec) => {
                let stencil = GradientStencil::new(&grid)?;
                spec.check_sites(n)?;
                let phis = stencil
                    .samples()
                    .iter()
                    .map(|s| spec.averaged(&s.cell))
                    .collect::<Result<Vec<_>>>()?;
                if phis.iter().any(|m| !m.is_smooth()) {
                    return Err(Error::InvalidSpec(format!(
                        "gradient integrand {} is not differentiable at 0",
                        spec.name()
                    )));
                }
                Some(GradientPart { stencil, phis })
            }
            None => None,
        };
        let free: Vec<bool> = (0..n)
            .map(|i| !(self.dirichlet && grid.is_boundary(i)))
            .collect();
        if gradient.is_none() {
            if let Some(i) = (0..n).find(|&i| free[i] && nodes[i].is_empty()) {
                return Err(Error::InvalidInput(format!(
                    "node {i} carries no energy term"
                )));
            }
        }
        if let Some((c, s)) = self.coercivity {
            if !(c > T::zero() && s > T::zero() && c.is_finite() && s.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "coercivity needs c, s > 0, got c = {c}, s = {s}"
                )));
            }
        }
        Ok(Problem {
            grid,
            kind: self.kind,
            mass,
            free,
            nodes,
            gradient,
            coercivity: self.coercivity,
        })
    }
}

impl<T: Real> Problem<T> {
    pub fn builder(grid: Arc<Grid<T>>) -> ProblemBuilder<T> {
        ProblemBuilder::new(grid)
    }

    /// Zero-order problem `Σ_i w_i M(x_i, u_i)` with no boundary condition.
    pub fn zero_order(grid: Arc<Grid<T>>, spec: PhiSpec<T>) -> Result<Self> {
        ProblemBuilder::new(grid)
            .kind(ProblemKind::ZeroOrder)
            .zero_order(spec)
            .build()
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Weights of the Hilbert inner product.
    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    /// `false` at Dirichlet nodes.
    pub fn free(&self) -> &[bool] {
        &self.free
    }

    pub fn node_terms(&self) -> &[NodeTerms<T>] {
        &self.nodes
    }

    pub fn gradient_part(&self) -> Option<&GradientPart<T>> {
        self.gradient.as_ref()
    }

    pub fn coercivity(&self) -> Option<(T, T)> {
        self.coercivity
    }

    pub fn is_zero_order(&self) -> bool {
        self.gradient.is_none()
    }

    /// Half-bandwidth of the Hessian in node numbering.
    pub(crate) fn bandwidth(&self) -> usize {
        self.gradient.as_ref().map_or(0, |g| g.stencil.bandwidth())
    }

    fn check(&self, u: &GridFunction<T>) -> Result<()> {
        if **u.grid() != *self.grid {
            return Err(Error::GridMismatch {
                expected: self.len(),
                found: u.len(),
            });
        }
        Ok(())
    }

    /// Zeroes the Dirichlet nodes: the orthogonal projection onto the
    /// constrained subspace.
    pub fn project(&self, u: &GridFunction<T>) -> Result<GridFunction<T>> {
        self.check(u)?;
        Ok(u.with_values(
            u.values()
                .iter()
                .zip(&self.free)
                .map(|(&v, &f)| if f { v } else { T::zero() })
                .collect(),
        ))
    }

    pub fn inner(&self, a: &GridFunction<T>, b: &GridFunction<T>) -> Result<T> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.inner_raw(a.values(), b.values()))
    }

    pub fn norm(&self, a: &GridFunction<T>) -> Result<T> {
        Ok(self.inner(a, a)?.sqrt())
    }

    pub(crate) fn inner_raw(&self, a: &[T], b: &[T]) -> T {
        a.iter()
            .zip(b)
            .zip(&self.mass)
            .map(|((&x, &y), &m)| m * x * y)
            .sum()
    }

    pub(crate) fn norm_raw(&self, a: &[T]) -> T {
        self.inner_raw(a, a).sqrt()
    }

    /// Gradient of every stencil sample.
    pub(crate) fn sample_gradients(&self, u: &[T]) -> Vec<[T; 2]> {
        match &self.gradient {
            Some(g) => (0..g.stencil.len())
                .map(|s| g.stencil.sample_gradient(s, u))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Energy of a raw value vector, ignoring the Dirichlet constraint.
    pub(crate) fn energy_raw(&self, u: &[T]) -> T {
        let mut acc = T::zero();
        for (terms, &v) in self.nodes.iter().zip(u) {
            for (w, m) in terms {
                acc = acc + *w * m.eval(v);
            }
        }
        if let Some(g) = &self.gradient {
            for (s, (sample, m)) in g.stencil.samples().iter().zip(&g.phis).enumerate() {
                let d = g.stencil.sample_gradient(s, u);
                acc = acc + sample.weight * m.eval(norm2(d));
            }
        }
        if acc.is_saturated() || !acc.is_finite() {
            T::saturation_cap()
        } else {
            acc
        }
    }

    /// `φ(u)`; `+inf` outside the constrained subspace or when a term
    /// saturates.
    pub fn evaluate(&self, u: &GridFunction<T>) -> Result<ModularValue<T>> {
        self.check(u)?;
        if u
            .values()
            .iter()
            .zip(&self.free)
            .any(|(&v, &f)| !f && v != T::zero())
        {
            return Ok(ModularValue::Infinite);
        }
        Ok(ModularValue::from_sum(self.energy_raw(u.values())))
    }

    /// Euclidean gradient of the smooth part: nodewise derivatives (with
    /// the center of the subdifferential at kinks) plus `D^T W M'(|g|) ĝ`.
    /// Dirichlet entries are zero.
    pub(crate) fn euclidean_gradient(&self, u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); u.len()];
        for (i, terms) in self.nodes.iter().enumerate() {
            for (w, m) in terms {
                out[i] = out[i] + *w * m.derivative(u[i]);
            }
        }
        if let Some(g) = &self.gradient {
            let flux = self.fluxes(g, u);
            g.stencil.add_adjoint(&flux, &mut out);
        }
        for (o, &f) in out.iter_mut().zip(&self.free) {
            if !f {
                *o = T::zero();
            }
        }
        out
    }

    /// `M_s'(|g_s|) ĝ_s` per sample.
    pub(crate) fn fluxes(&self, g: &GradientPart<T>, u: &[T]) -> Vec<[T; 2]> {
        (0..g.stencil.len())
            .map(|s| {
                let d = g.stencil.sample_gradient(s, u);
                let r = norm2(d);
                if r == T::zero() {
                    [T::zero(); 2]
                } else {
                    let k = g.phis[s].derivative(r) / r;
                    [k * d[0], k * d[1]]
                }
            })
            .collect()
    }

    /// Representative of `∂φ(u)` in `H`: the gradient of the smooth part
    /// divided by the mass, with the kink terms at their center.
    pub fn subgradient(&self, u: &GridFunction<T>) -> Result<GridFunction<T>> {
        self.check(u)?;
        let g = self.euclidean_gradient(u.values());
        Ok(u.with_values(g.iter().zip(&self.mass).map(|(&a, &m)| a / m).collect()))
    }

    /// Euler–Lagrange residual of the resolvent equation
    /// `(y - u)/λ + ∂φ(y) ∋ 0` as an `H`-vector, using the minimal-norm
    /// element of the subdifferential at kinks.
    pub fn resolvent_residual(
        &self,
        y: &GridFunction<T>,
        u: &GridFunction<T>,
        lambda: T,
    ) -> Result<GridFunction<T>> {
        self.check(y)?;
        self.check(u)?;
        let (res, _) = resolvent::residual(self, y.values(), u.values(), lambda);
        Ok(y.with_values(
            res.iter().zip(&self.mass).map(|(&r, &m)| r / m).collect(),
        ))
    }

    /// `c ‖u‖_H^s` for the declared coercivity, if any.
    pub fn coercivity_floor(&self, u: &GridFunction<T>) -> Result<Option<T>> {
        let n = self.norm(u)?;
        Ok(self.coercivity.map(|(c, s)| c * n.powf(s)))
    }

    /// Sum of nodewise kink half-widths at node `i`.
    pub(crate) fn kink_at(&self, i: usize) -> T {
        self.nodes[i].iter().map(|(w, m)| *w * m.kink()).sum()
    }
}

pub(crate) fn norm2<T: Real>(d: [T; 2]) -> T {
    d[0].hypot(d[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Arc<Grid<f64>> {
        Arc::new(Grid::<f64>::interval(0.0, 1.0, n).unwrap())
    }

    #[test]
    fn quadratic_energy_and_gradient() {
        let g = line(11);
        let p = Problem::zero_order(g.clone(), PhiSpec::quadratic()).unwrap();
        let u = GridFunction::from_fn(g.clone(), |x| x[0]).unwrap();
        let phi = p.evaluate(&u).unwrap().value();
        let expect: f64 = u
            .values()
            .iter()
            .zip(g.weights())
            .map(|(v, w)| 0.5 * w * v * v)
            .sum();
        assert!((phi - expect).abs() < 1e-15);
        let xi = p.subgradient(&u).unwrap();
        for (a, b) in xi.values().iter().zip(u.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dirichlet_outside_domain_is_infinite() {
        let g = line(5);
        let p = Problem::builder(g.clone())
            .gradient(PhiSpec::quadratic())
            .dirichlet(true)
            .build()
            .unwrap();
        let u = GridFunction::new(g.clone(), vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p.evaluate(&u).unwrap(), ModularValue::Infinite);
        assert_eq!(
            p.evaluate(&p.project(&u).unwrap()).unwrap(),
            ModularValue::Finite(0.0)
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = Arc::new(Grid::<f64>::rectangle((0.0, 1.0), (0.0, 2.0), 5, 6).unwrap());
        let a: Vec<f64> = g.sample(|x| 1.0 + x[0]);
        let p = Problem::builder(g.clone())
            .zero_order(PhiSpec::power(3.0).unwrap())
            .gradient(PhiSpec::double_phase(2.0, 3.0, a).unwrap())
            .dirichlet(true)
            .build()
            .unwrap();
        let u = p
            .project(&GridFunction::from_fn(g.clone(), |x| (x[0] * 3.0).sin() + x[1] * x[1]).unwrap())
            .unwrap();
        let grad = p.euclidean_gradient(u.values());
        let h = 1e-6;
        for i in 0..g.len() {
            if !p.free()[i] {
                continue;
            }
            let mut up = u.values().to_vec();
            let mut dn = u.values().to_vec();
            up[i] += h;
            dn[i] -= h;
            let fd = (p.energy_raw(&up) - p.energy_raw(&dn)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()), "node {i}");
        }
    }

    #[test]
    fn dynamic_boundary_mass() {
        let g = Arc::new(
            Grid::<f64>::interval(0.0, 1.0, 5)
                .unwrap()
                .with_boundary_trace()
                .unwrap(),
        );
        let p = Problem::builder(g.clone())
            .gradient(PhiSpec::quadratic())
            .zero_order(PhiSpec::quadratic())
            .boundary(PhiSpec::quadratic())
            .build()
            .unwrap();
        assert!((p.mass()[0] - (0.125 + 1.0)).abs() < 1e-15);
        assert!((p.mass()[2] - 0.25).abs() < 1e-15);
        assert!(p.free().iter().all(|&f| f));
    }

    #[test]
    fn rejects_bad_builds() {
        let g = line(5);
        assert!(Problem::builder(g.clone()).build().is_err());
        assert!(Problem::builder(g.clone())
            .gradient(PhiSpec::orlicz_exp(1.0).unwrap())
            .build()
            .is_err());
        assert!(Problem::builder(g.clone())
            .boundary(PhiSpec::quadratic())
            .zero_order(PhiSpec::quadratic())
            .build()
            .is_err());
        assert!(Problem::builder(g)
            .zero_order(PhiSpec::variable_exponent(vec![2.0; 4]).unwrap())
            .build()
            .is_err());
    }
}
