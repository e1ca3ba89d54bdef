//! Structured tensor grids, grid functions and the discrete gradient.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Boundary grid attached to a bulk grid: the boundary nodes of the bulk grid
/// together with their surface quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTrace<T> {
    nodes: Vec<usize>,
    weights: Vec<T>,
}

impl<T: Real> BoundaryTrace<T> {
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn measure(&self) -> T {
        self.weights.iter().copied().sum()
    }
}

/// Uniform tensor grid on an interval or a rectangle with trapezoidal weights.
///
/// Nodes are numbered row-major: `index = iy * nx + ix`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    dim: usize,
    shape: [usize; 2],
    origin: [T; 2],
    spacing: [T; 2],
    weights: Vec<T>,
    boundary: Vec<bool>,
    trace: Option<BoundaryTrace<T>>,
}

fn trapezoid<T: Real>(n: usize, h: T) -> Vec<T> {
    if n == 1 {
        return vec![T::one()];
    }
    let mut w = vec![h; n];
    w[0] = h * T::lit(0.5);
    w[n - 1] = h * T::lit(0.5);
    w
}

impl<T: Real> Grid<T> {
    /// `n >= 2` equispaced nodes on `[a, b]`.
    pub fn interval(a: T, b: T, n: usize) -> Result<Self> {
        if n < 2 || !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput(format!(
                "interval grid needs a < b and n >= 2, got [{a}, {b}] with {n} nodes"
            )));
        }
        let h = (b - a) / T::lit((n - 1) as f64);
        let mut boundary = vec![false; n];
        boundary[0] = true;
        boundary[n - 1] = true;
        Ok(Grid {
            dim: 1,
            shape: [n, 1],
            origin: [a, T::zero()],
            spacing: [h, T::one()],
            weights: trapezoid(n, h),
            boundary,
            trace: None,
        })
    }

    /// A single node of unit weight: the grid of a scalar ODE.
    pub fn single_node() -> Self {
        Grid {
            dim: 1,
            shape: [1, 1],
            origin: [T::zero(), T::zero()],
            spacing: [T::one(), T::one()],
            weights: vec![T::one()],
            boundary: vec![false],
            trace: None,
        }
    }

    /// `nx x ny` nodes on `[ax, bx] x [ay, by]`.
    pub fn rectangle(x: (T, T), y: (T, T), nx: usize, ny: usize) -> Result<Self> {
        let gx = Grid::interval(x.0, x.1, nx)?;
        let gy = Grid::interval(y.0, y.1, ny)?;
        let mut weights = Vec::with_capacity(nx * ny);
        let mut boundary = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                weights.push(gx.weights[ix] * gy.weights[iy]);
                boundary.push(gx.boundary[ix] || gy.boundary[iy]);
            }
        }
        Ok(Grid {
            dim: 2,
            shape: [nx, ny],
            origin: [x.0, y.0],
            spacing: [gx.spacing[0], gy.spacing[0]],
            weights,
            boundary,
            trace: None,
        })
    }

    /// Attaches the boundary grid: both endpoints with unit (counting) weight
    /// in 1-D; the perimeter with arc-length trapezoidal weights in 2-D.
    pub fn with_boundary_trace(mut self) -> Result<Self> {
        let nodes: Vec<usize> = (0..self.len()).filter(|&i| self.boundary[i]).collect();
        if nodes.is_empty() {
            return Err(Error::InvalidInput("grid has no boundary nodes".into()));
        }
        let weights = match self.dim {
            1 => vec![T::one(); nodes.len()],
            _ => {
                let [nx, ny] = self.shape;
                let [hx, hy] = self.spacing;
                let half = T::lit(0.5);
                nodes
                    .iter()
                    .map(|&i| {
                        let (ix, iy) = (i % nx, i / nx);
                        let on_x_edge = iy == 0 || iy == ny - 1;
                        let on_y_edge = ix == 0 || ix == nx - 1;
                        match (on_x_edge, on_y_edge) {
                            (true, true) => half * (hx + hy),
                            (true, false) => hx,
                            _ => hy,
                        }
                    })
                    .collect()
            }
        };
        self.trace = Some(BoundaryTrace { nodes, weights });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn spacing(&self) -> [T; 2] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// `sum of weights = |Ω|`.
    pub fn measure(&self) -> T {
        self.weights.iter().copied().sum()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn trace(&self) -> Option<&BoundaryTrace<T>> {
        self.trace.as_ref()
    }

    /// Coordinates of node `i` (second entry is `0` in 1-D).
    pub fn point(&self, i: usize) -> [T; 2] {
        let nx = self.shape[0];
        let (ix, iy) = (i % nx, i / nx);
        [
            self.origin[0] + self.spacing[0] * T::lit(ix as f64),
            self.origin[1] + self.spacing[1] * T::lit(iy as f64),
        ]
    }

    /// Index of the node mirrored through the grid center along axis `axis`.
    pub fn mirror(&self, i: usize, axis: usize) -> usize {
        let [nx, ny] = self.shape;
        let (ix, iy) = (i % nx, i / nx);
        if axis == 0 {
            iy * nx + (nx - 1 - ix)
        } else {
            (ny - 1 - iy) * nx + ix
        }
    }

    /// Samples a function of the node coordinates.
    pub fn sample(&self, f: impl Fn([T; 2]) -> T) -> Vec<T> {
        (0..self.len()).map(|i| f(self.point(i))).collect()
    }
}

/// Values of a scalar field on a grid; the discrete proxy for `L^2(Ω)`.
#[derive(Clone, Debug)]
pub struct GridFunction<T> {
    grid: Arc<Grid<T>>,
    values: Vec<T>,
}

impl<T: Real> PartialEq for GridFunction<T> {
    fn eq(&self, other: &Self) -> bool {
        same_grid(&self.grid, &other.grid) && self.values == other.values
    }
}

pub(crate) fn same_grid<T: Real>(a: &Arc<Grid<T>>, b: &Arc<Grid<T>>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl<T: Real> GridFunction<T> {
    pub fn new(grid: Arc<Grid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "grid function value at node {i} is not finite"
            )));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn zeros(grid: Arc<Grid<T>>) -> Self {
        let values = vec![T::zero(); grid.len()];
        GridFunction { grid, values }
    }

    pub fn from_fn(grid: Arc<Grid<T>>, f: impl Fn([T; 2]) -> T) -> Result<Self> {
        let values = grid.sample(f);
        GridFunction::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    /// Same grid, new values; no finiteness check.
    pub(crate) fn with_values(&self, values: Vec<T>) -> Self {
        debug_assert_eq!(values.len(), self.grid.len());
        GridFunction {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: T) -> Self {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: T, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + c * b)
                .collect(),
        ))
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if same_grid(&self.grid, &other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: self.grid.len(),
                found: other.grid.len(),
            })
        }
    }

    /// Discrete `L^2` norm with the grid's quadrature weights.
    pub fn l2_norm(&self) -> T {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(&v, &w)| w * v * v)
            .sum::<T>()
            .sqrt()
    }
}

/// One quadrature sample of the discrete gradient: up to two forward
/// differences sharing a weight.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSample<T> {
    pub weight: T,
    /// `(tail, head, 1/h)` per component.
    pub components: Vec<(usize, usize, T)>,
    /// Nodes of the supporting cell, for coefficient averaging.
    pub cell: Vec<usize>,
}

/// Forward-difference gradient on a tensor grid.
///
/// In 1-D each cell carries one sample with weight `h`. In 2-D each cell
/// carries four vertex samples with weight `hx hy / 4`; the sample at a
/// vertex uses the two cell edges meeting there, which makes the discrete
/// energy reflection-symmetric and reduces to the five-point Laplacian for
/// quadratic integrands.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientStencil<T> {
    dim: usize,
    nodes: usize,
    bandwidth: usize,
    samples: Vec<GradientSample<T>>,
}

impl<T: Real> GradientStencil<T> {
    pub fn new(grid: &Grid<T>) -> Result<Self> {
        let [nx, ny] = grid.shape();
        let [hx, hy] = grid.spacing();
        let mut samples = Vec::new();
        match grid.dim() {
            1 => {
                if nx < 2 {
                    return Err(Error::InvalidInput(
                        "discrete gradient needs at least two nodes".into(),
                    ));
                }
                for c in 0..nx - 1 {
                    samples.push(GradientSample {
                        weight: hx,
                        components: vec![(c, c + 1, hx.recip())],
                        cell: vec![c, c + 1],
                    });
                }
            }
            _ => {
                let w = hx * hy * T::lit(0.25);
                let id = |ix: usize, iy: usize| iy * nx + ix;
                for j in 0..ny - 1 {
                    for i in 0..nx - 1 {
                        let cell = vec![id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1)];
                        for (cx, cy) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                            samples.push(GradientSample {
                                weight: w,
                                components: vec![
                                    (id(i, cy), id(i + 1, cy), hx.recip()),
                                    (id(cx, j), id(cx, j + 1), hy.recip()),
                                ],
                                cell: cell.clone(),
                            });
                        }
                    }
                }
            }
        }
        let bandwidth = if grid.dim() == 1 { 1 } else { nx + 1 };
        Ok(GradientStencil {
            dim: grid.dim(),
            nodes: grid.len(),
            bandwidth,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[GradientSample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Half-bandwidth of `D^T W D` in node numbering.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Gradient components of sample `s`.
    pub fn sample_gradient(&self, s: usize, u: &[T]) -> [T; 2] {
        let mut g = [T::zero(); 2];
        for (k, &(a, b, ih)) in self.samples[s].components.iter().enumerate() {
            g[k] = (u[b] - u[a]) * ih;
        }
        g
    }

    /// Adds `D^T (w * eta)` to `out`, the Euclidean adjoint weighted by the
    /// sample quadrature.
    pub fn add_adjoint(&self, eta: &[[T; 2]], out: &mut [T]) {
        for (sample, e) in self.samples.iter().zip(eta) {
            for (k, &(a, b, ih)) in sample.components.iter().enumerate() {
                let flux = sample.weight * e[k] * ih;
                out[b] = out[b] + flux;
                out[a] = out[a] - flux;
            }
        }
    }

    /// Discrete divergence `div_h eta = -M^{-1} D^T W eta` for the mass
    /// weights `mass` (summation by parts).
    pub fn divergence(&self, eta: &[[T; 2]], mass: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.nodes];
        self.add_adjoint(eta, &mut out);
        out.iter().zip(mass).map(|(&v, &m)| -v / m).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_weights_sum_to_measure() {
        let g = Grid::<f64>::interval(0.0, 2.0, 11).unwrap();
        assert!((g.measure() - 2.0).abs() < 1e-14);
        let r = Grid::<f64>::rectangle((0.0, 1.0), (0.0, 3.0), 5, 7).unwrap();
        assert!((r.measure() - 3.0).abs() < 1e-14);
        assert!(r.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn boundary_traces() {
        let g = Grid::<f64>::interval(0.0, 1.0, 5)
            .unwrap()
            .with_boundary_trace()
            .unwrap();
        assert_eq!(g.trace().unwrap().nodes(), &[0, 4]);
        let r = Grid::<f64>::rectangle((0.0, 2.0), (0.0, 1.0), 5, 3)
            .unwrap()
            .with_boundary_trace()
            .unwrap();
        let t = r.trace().unwrap();
        assert!((t.measure() - 6.0).abs() < 1e-14);
        let mut sorted = t.nodes().to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), t.nodes().len());
    }

    #[test]
    fn grid_function_checks() {
        let g = Arc::new(Grid::<f64>::interval(0.0, 1.0, 4).unwrap());
        assert!(GridFunction::new(g.clone(), vec![0.0; 3]).is_err());
        assert!(GridFunction::new(g.clone(), vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        let one = GridFunction::new(g.clone(), vec![1.0; 4]).unwrap();
        assert!((one.l2_norm() - 1.0).abs() < 1e-15);
    }

    fn energy(stencil: &GradientStencil<f64>, u: &[f64]) -> f64 {
        (0..stencil.len())
            .map(|s| {
                let g = stencil.sample_gradient(s, u);
                stencil.samples()[s].weight * (g[0] * g[0] + g[1] * g[1])
            })
            .sum()
    }

    #[test]
    fn adjoint_is_gradient_of_quadratic_energy() {
        let grid = Grid::<f64>::rectangle((0.0, 1.0), (0.0, 1.0), 4, 5).unwrap();
        let st = GradientStencil::new(&grid).unwrap();
        let u: Vec<f64> = (0..grid.len()).map(|i| ((i * 7 % 5) as f64).sin()).collect();
        let eta: Vec<[f64; 2]> = (0..st.len()).map(|s| st.sample_gradient(s, &u)).collect();
        let mut grad = vec![0.0; grid.len()];
        st.add_adjoint(&eta, &mut grad);
        let h = 1e-6;
        for i in 0..grid.len() {
            let mut up = u.clone();
            up[i] += h;
            let mut dn = u.clone();
            dn[i] -= h;
            let fd = (energy(&st, &up) - energy(&st, &dn)) / (2.0 * h) * 0.5;
            assert!((fd - grad[i]).abs() < 1e-6, "node {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn quadratic_energy_is_five_point_inside() {
        // interior node of the 2-D stencil sees the standard Laplacian
        let grid = Grid::<f64>::rectangle((0.0, 1.0), (0.0, 1.0), 5, 5).unwrap();
        let st = GradientStencil::new(&grid).unwrap();
        let mut u = vec![0.0; 25];
        u[12] = 1.0;
        let eta: Vec<[f64; 2]> = (0..st.len()).map(|s| st.sample_gradient(s, &u)).collect();
        let lap = st.divergence(&eta, grid.weights());
        let h2 = 0.25f64 * 0.25;
        assert!((lap[12] + 4.0 / h2).abs() < 1e-9);
        assert!((lap[11] - 1.0 / h2).abs() < 1e-9);
        assert!((lap[7] - 1.0 / h2).abs() < 1e-9);
        assert!(lap[6].abs() < 1e-9);
    }
}
