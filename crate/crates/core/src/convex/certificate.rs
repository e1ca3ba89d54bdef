use crate::banded::BandedSpd;
use crate::error::Result;
use crate::grid::GridFunction;
use crate::scalar::Real;

use super::{norm2, Problem};

/// Young-equality certificate for a claimed subgradient `ξ ∈ ∂φ(u)`.
///
/// `conj_upper` is the value of an explicit dual decomposition of `ξ`, so it
/// bounds `φ*(ξ)` from above; `gap = φ(u) + conj_upper - (ξ, u)_H` is then an
/// upper bound on the Fenchel–Young residual and vanishes exactly when `ξ` is
/// a subgradient and the decomposition is optimal. It is accumulated term by
/// term, each term being a nonnegative scalar Young gap.
#[derive(Clone, Debug, PartialEq)]
pub struct YoungCertificate<T> {
    pub phi: T,
    pub conj_upper: T,
    pub pairing: T,
    pub gap: T,
}

impl<T: Real> Problem<T> {
    /// Decomposes `m ξ = Σ_k w_k a_k + D^T W η` with `η_s = M_s'(|g_s|) ĝ_s`
    /// and evaluates the termwise Young gaps. Components at Dirichlet nodes
    /// are ignored: the constraint absorbs them.
    pub fn young_certificate(
        &self,
        u: &GridFunction<T>,
        xi: &GridFunction<T>,
    ) -> Result<YoungCertificate<T>> {
        self.check(u)?;
        self.check(xi)?;
        let uv = u.values();
        let n = uv.len();
        let phi = self.evaluate(u)?.value();
        let pairing: T = (0..n)
            .filter(|&i| self.free[i])
            .map(|i| self.mass[i] * xi.values()[i] * uv[i])
            .sum();
        if !phi.is_finite() {
            return Ok(YoungCertificate {
                phi,
                conj_upper: T::infinity(),
                pairing,
                gap: T::infinity(),
            });
        }
        let target: Vec<T> = (0..n)
            .map(|i| {
                if self.free[i] {
                    self.mass[i] * xi.values()[i]
                } else {
                    T::zero()
                }
            })
            .collect();

        let mut flux = match &self.gradient {
            Some(g) => self.fluxes(g, uv),
            None => Vec::new(),
        };
        let remainder = |flux: &[[T; 2]]| -> Vec<T> {
            let mut b = vec![T::zero(); n];
            if let Some(g) = &self.gradient {
                g.stencil.add_adjoint(flux, &mut b);
            }
            (0..n).map(|i| target[i] - b[i]).collect()
        };
        let mut rem = remainder(&flux);

        // Nodes without a nodewise term can only be balanced by the flux.
        let open: Vec<bool> = (0..n)
            .map(|i| self.free[i] && self.nodes[i].is_empty())
            .collect();
        if let (true, Some(g)) = (open.iter().any(|&o| o), &self.gradient) {
            let mut k = BandedSpd::zeros(n, g.stencil.bandwidth());
            for sample in g.stencil.samples() {
                for &(a, b, ih) in &sample.components {
                    let c = sample.weight * ih * ih;
                    k.add(a, a, c);
                    k.add(b, b, c);
                    k.add(a.max(b), a.min(b), -c);
                }
            }
            for (i, &o) in open.iter().enumerate() {
                if !o {
                    k.pin(i);
                }
            }
            let rhs: Vec<T> = (0..n)
                .map(|i| if open[i] { rem[i] } else { T::zero() })
                .collect();
            if let Some(chol) = k.cholesky() {
                let delta = chol.solve(&rhs);
                for (s, f) in flux.iter_mut().enumerate() {
                    let d = g.stencil.sample_gradient(s, &delta);
                    f[0] = f[0] + d[0];
                    f[1] = f[1] + d[1];
                }
                rem = remainder(&flux);
            }
        }

        // rounding level of the balance at each node
        let mut noise: Vec<T> = target.iter().map(|t| t.abs()).collect();
        if let Some(g) = &self.gradient {
            for (sample, e) in g.stencil.samples().iter().zip(&flux) {
                for (k, &(a, b, ih)) in sample.components.iter().enumerate() {
                    let f = (sample.weight * e[k] * ih).abs();
                    noise[a] = noise[a] + f;
                    noise[b] = noise[b] + f;
                }
            }
        }
        let eps = T::epsilon() * T::lit(64.0);

        let mut conj = T::zero();
        let mut gap = T::zero();
        for i in 0..n {
            if !self.free[i] {
                continue;
            }
            let terms = &self.nodes[i];
            let z = uv[i];
            if terms.is_empty() {
                // a residue above rounding has no finite conjugate; below it,
                // it only perturbs the pairing
                let r = rem[i].abs();
                if r > eps * noise[i] {
                    gap = gap + r * T::saturation_cap();
                    conj = T::infinity();
                } else {
                    gap = gap + r * z.abs();
                }
                continue;
            }
            let total: T = terms.iter().map(|(w, _)| *w).sum();
            let mut rest = rem[i];
            let mut slopes = Vec::with_capacity(terms.len());
            for (w, m) in terms.iter().skip(1) {
                let a = if z != T::zero() {
                    m.derivative(z)
                } else {
                    let k = m.kink();
                    (rem[i] / total).max(-k).min(k)
                };
                rest = rest - *w * a;
                slopes.push(a);
            }
            slopes.insert(0, rest / terms[0].0);
            for ((w, m), &a) in terms.iter().zip(&slopes) {
                let c = m.conjugate(a)?;
                conj = conj + *w * c;
                gap = gap + *w * (m.eval(z) + c - a * z);
            }
        }
        if let Some(g) = &self.gradient {
            for (s, (sample, m)) in g.stencil.samples().iter().zip(&g.phis).enumerate() {
                let d = g.stencil.sample_gradient(s, uv);
                let e = flux[s];
                let c = m.conjugate(norm2(e))?;
                conj = conj + sample.weight * c;
                gap = gap + sample.weight * (m.eval(norm2(d)) + c - (e[0] * d[0] + e[1] * d[1]));
            }
        }
        Ok(YoungCertificate {
            phi,
            conj_upper: conj,
            pairing,
            gap,
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::convex::Problem;
    use crate::grid::{Grid, GridFunction};
    use crate::phi::PhiSpec;
    use std::sync::Arc;

    #[test]
    fn exact_subgradient_has_zero_gap() {
        let g = Arc::new(Grid::<f64>::interval(0.0, 1.0, 31).unwrap());
        let a: Vec<f64> = g.sample(|x| x[0]);
        let p = Problem::builder(g.clone())
            .gradient(PhiSpec::double_phase(2.0, 3.0, a).unwrap())
            .zero_order(PhiSpec::llogl())
            .dirichlet(true)
            .build()
            .unwrap();
        let u = p
            .project(&GridFunction::from_fn(g.clone(), |x| (5.0 * x[0]).sin()).unwrap())
            .unwrap();
        let xi = p.subgradient(&u).unwrap();
        let c = p.young_certificate(&u, &xi).unwrap();
        assert!(c.gap.abs() < 1e-10, "{c:?}");
        let off = xi.map(|v| v + 0.5);
        let c2 = p.young_certificate(&u, &off).unwrap();
        assert!(c2.gap > 1e-3, "{c2:?}");
    }

    #[test]
    fn gradient_only_uses_flux_correction() {
        let g = Arc::new(Grid::<f64>::rectangle((0.0, 1.0), (0.0, 1.0), 9, 9).unwrap());
        let p = Problem::builder(g.clone())
            .gradient(PhiSpec::power(3.0).unwrap())
            .dirichlet(true)
            .build()
            .unwrap();
        let u = p
            .project(&GridFunction::from_fn(g.clone(), |x| x[0] * (1.0 - x[1])).unwrap())
            .unwrap();
        let xi = p.subgradient(&u).unwrap();
        let c = p.young_certificate(&u, &xi).unwrap();
        assert!(c.gap.abs() < 1e-10, "{c:?}");
        let bumped = xi.map(|v| 1.01 * v + 0.1);
        assert!(p.young_certificate(&u, &bumped).unwrap().gap > 1e-6);
    }

    #[test]
    fn zero_pair() {
        let g = Arc::new(Grid::<f64>::interval(0.0, 1.0, 5).unwrap());
        let p = Problem::zero_order(g.clone(), PhiSpec::orlicz_exp(2.0).unwrap()).unwrap();
        let z = GridFunction::zeros(g);
        let c = p.young_certificate(&z, &z).unwrap();
        assert_eq!(c.gap, 0.0);
    }
}
