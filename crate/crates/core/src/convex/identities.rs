use rand::Rng;

use crate::error::Result;
use crate::grid::GridFunction;
use crate::report::{Check, DiagnosticsReport};
use crate::scalar::Real;

use super::resolvent::resolvent;
use super::Problem;

#[derive(Clone, Debug)]
pub struct IdentityOptions {
    /// Samples are uniform in `[-amplitude, amplitude]` at free nodes.
    pub amplitude: f64,
    /// Tolerance for the inequalities, relative to `1 + φ(u)` or the
    /// natural scale of each side.
    pub tol: f64,
    /// Tolerance for the Young-equality gap of `(J_λ u, A_λ u)`.
    pub young_tol: f64,
    /// Number of samples on which the envelope gradient is compared with
    /// finite differences.
    pub gradient_samples: usize,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        IdentityOptions {
            amplitude: 1.0,
            tol: 1e-8,
            young_tol: 1e-6,
            gradient_samples: 3,
        }
    }
}

fn random_state<T: Real, R: Rng + ?Sized>(
    problem: &Problem<T>,
    amp: f64,
    rng: &mut R,
) -> GridFunction<T> {
    let v = (0..problem.len())
        .map(|i| {
            if problem.free()[i] {
                T::lit(amp * rng.gen_range(-1.0..1.0))
            } else {
                T::zero()
            }
        })
        .collect();
    GridFunction::zeros(problem.grid().clone()).with_values(v)
}

#[derive(Default)]
struct Worst {
    value: f64,
}

impl Worst {
    fn see(&mut self, v: f64) {
        if v.is_nan() || v > self.value {
            self.value = if v.is_nan() { f64::INFINITY } else { v };
        }
    }
}

/// Checks, on random states and for every `λ` in `lambdas`:
/// the sandwich `φ(J_λ u) <= φ_λ(u) <= φ(u)`, monotone convergence of
/// `φ_λ(u)` as `λ` decreases, nonexpansiveness and firm nonexpansiveness of
/// `J_λ`, the `1/λ`-Lipschitz bound of `A_λ`, `λ ‖A_λ u‖^2 <= 2 φ(u)`, the
/// Young equality certifying `A_λ u ∈ ∂φ(J_λ u)`, and `Dφ_λ = A_λ` by finite
/// differences.
pub fn verify_resolvent_identities<T: Real, R: Rng + ?Sized>(
    problem: &Problem<T>,
    n_trials: usize,
    lambdas: &[T],
    rng: &mut R,
    opts: &IdentityOptions,
) -> Result<DiagnosticsReport> {
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(|a, b| b.partial_cmp(a).expect("finite lambda"));
    let two = T::lit(2.0);
    let mut lower = Worst::default();
    let mut upper = Worst::default();
    let mut monotone = Worst::default();
    let mut nonexp = Worst::default();
    let mut firm = Worst::default();
    let mut lipschitz = Worst::default();
    let mut yosida_bound = Worst::default();
    let mut young = Worst::default();
    let mut grad = Worst::default();

    for trial in 0..n_trials {
        let u = random_state(problem, opts.amplitude, rng);
        let v = random_state(problem, opts.amplitude, rng);
        let phi_u = problem.evaluate(&u)?.value();
        let scale = 1.0 + phi_u.as_f64();
        let mut prev_env: Option<T> = None;
        for &lam in &lambdas {
            let ru = resolvent(problem, &u, lam, None)?;
            let rv = resolvent(problem, &v, lam, None)?;
            let ju = ru.j_lambda_u.values();
            let jv = rv.j_lambda_u.values();
            let phi_j = problem.energy_raw(ju);
            let du: Vec<T> = u.values().iter().zip(ju).map(|(&a, &b)| a - b).collect();
            let env = phi_j + problem.inner_raw(&du, &du) / (two * lam);
            lower.see((phi_j - env).as_f64() / scale);
            upper.see((env - phi_u).as_f64() / scale);
            if let Some(p) = prev_env {
                monotone.see((p - env).as_f64() / scale);
            }
            prev_env = Some(env);

            let dj: Vec<T> = ju.iter().zip(jv).map(|(&a, &b)| a - b).collect();
            let dx: Vec<T> = u.values().iter().zip(v.values()).map(|(&a, &b)| a - b).collect();
            let nj = problem.norm_raw(&dj);
            let nx = problem.norm_raw(&dx);
            let nscale = (T::one() + nx).as_f64();
            nonexp.see((nj - nx).as_f64() / nscale);
            firm.see((nj * nj - problem.inner_raw(&dj, &dx)).as_f64() / (nscale * nscale));
            let da: Vec<T> = ru
                .a_lambda_u
                .values()
                .iter()
                .zip(rv.a_lambda_u.values())
                .map(|(&a, &b)| a - b)
                .collect();
            let lip = nx / lam;
            lipschitz.see((problem.norm_raw(&da) - lip).as_f64() / (1.0 + lip.as_f64()));
            let na = problem.norm_raw(ru.a_lambda_u.values());
            yosida_bound.see((lam * na * na - two * phi_u).as_f64() / scale);

            let cert = problem.young_certificate(&ru.j_lambda_u, &ru.a_lambda_u)?;
            young.see(cert.gap.abs().as_f64() / (1.0 + phi_j.as_f64()));

            if trial < opts.gradient_samples {
                let dir = random_state(problem, 1.0, rng);
                let h = T::tol(1e-5) * (T::one() + problem.norm_raw(u.values()));
                let up = u.axpy(h, &dir)?;
                let dn = u.axpy(-h, &dir)?;
                let fd = (super::envelope(problem, &up, lam, None)?
                    - super::envelope(problem, &dn, lam, None)?)
                    / (two * h);
                let exact = problem.inner_raw(ru.a_lambda_u.values(), dir.values());
                let rel = (fd - exact).abs() / (T::one() + exact.abs());
                grad.see(rel.as_f64());
            }
        }
    }
    let tol = opts.tol;
    let mut report = DiagnosticsReport::new("resolvent_identities");
    report
        .push(Check::at_most("sandwich_lower", lower.value, tol))
        .push(Check::at_most("sandwich_upper", upper.value, tol))
        .push(Check::at_most("envelope_monotone", monotone.value, tol))
        .push(Check::at_most("nonexpansive", nonexp.value, tol))
        .push(Check::at_most("firmly_nonexpansive", firm.value, tol))
        .push(Check::at_most("yosida_lipschitz", lipschitz.value, tol))
        .push(Check::at_most("yosida_energy_bound", yosida_bound.value, tol))
        .push(Check::at_most("young_equality", young.value, opts.young_tol));
    if opts.gradient_samples > 0 && n_trials > 0 {
        report.push(Check::at_most("envelope_gradient", grad.value, 1e-4));
    }
    Ok(report)
}
