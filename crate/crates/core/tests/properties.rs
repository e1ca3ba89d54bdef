use std::sync::Arc;

use proptest::prelude::*;
use varflow::flow::ZeroForcing;
use varflow::instances::{make_instance, preset};
use varflow::{
    luxemburg_norm, modular, resolvent, solve_implicit_euler, Grid, GridFunction, PhiSpec, Problem,
};

const N: usize = 9;

fn grid() -> Arc<Grid<f64>> {
    Arc::new(Grid::interval(0.0, 1.0, N).unwrap())
}

fn values(scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, N)
}

fn specs() -> Vec<PhiSpec<f64>> {
    vec![
        PhiSpec::power(1.5).unwrap(),
        PhiSpec::power(3.0).unwrap(),
        PhiSpec::orlicz_exp(2.0).unwrap(),
        PhiSpec::llogl(),
        PhiSpec::variable_exponent((0..N).map(|i| 1.5 + 0.25 * i as f64).collect()).unwrap(),
    ]
}

fn diff_norm(p: &Problem<f64>, a: &GridFunction<f64>, b: &GridFunction<f64>) -> f64 {
    p.norm(&a.axpy(-1.0, b).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn luxemburg_norm_is_homogeneous(v in values(2.0), c in -4.0f64..4.0, k in 0usize..5) {
        let g = grid();
        let spec = &specs()[k];
        let v = GridFunction::new(g.clone(), v).unwrap();
        let base = luxemburg_norm(&g, spec, &v, 1e-12).unwrap();
        let scaled = luxemburg_norm(&g, spec, &v.scaled(c), 1e-12).unwrap();
        prop_assert!((scaled - c.abs() * base).abs() <= 1e-9 * (1.0 + scaled));
    }

    #[test]
    fn modular_is_midpoint_convex(a in values(1.5), b in values(1.5), k in 0usize..5) {
        let g = grid();
        let spec = &specs()[k];
        let a = GridFunction::new(g.clone(), a).unwrap();
        let b = GridFunction::new(g.clone(), b).unwrap();
        let mid = a.axpy(1.0, &b).unwrap().scaled(0.5);
        let fa = modular(&g, spec, &a).unwrap().value();
        let fb = modular(&g, spec, &b).unwrap().value();
        let fm = modular(&g, spec, &mid).unwrap().value();
        prop_assert!(fm <= 0.5 * (fa + fb) + 1e-12 * (1.0 + fa + fb));
    }

    #[test]
    fn resolvent_is_nonexpansive(
        u in values(1.0),
        v in values(1.0),
        lambda in 0.005f64..1.0,
        name in prop::sample::select(vec!["reaction_diffusion", "zero_order_exp", "musielak_sobolev"]),
    ) {
        let p = make_instance(&preset::<f64>(name).unwrap()).unwrap();
        let g = p.grid().clone();
        let sample = |vals: &[f64]| {
            GridFunction::from_fn(g.clone(), |x| {
                let t = x[0] * (N - 1) as f64;
                let i = (t.round() as usize).min(N - 1);
                vals[i] * (std::f64::consts::PI * x[0]).sin()
            })
            .unwrap()
        };
        let (u, v) = (sample(&u), sample(&v));
        let ju = resolvent(&p, &u, lambda, None).unwrap().j_lambda_u;
        let jv = resolvent(&p, &v, lambda, None).unwrap().j_lambda_u;
        prop_assert!(diff_norm(&p, &ju, &jv) <= diff_norm(&p, &u, &v) * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn implicit_euler_energy_decreases(u0 in values(1.0), k in 0usize..5) {
        let g = grid();
        let p = Problem::zero_order(g.clone(), specs()[k].clone()).unwrap();
        let u0 = GridFunction::new(g, u0).unwrap();
        let traj = solve_implicit_euler(&p, &u0, &ZeroForcing, 0.05, 0.5).unwrap();
        let energy: Vec<f64> = traj.states.iter().map(|u| p.evaluate(u).unwrap().value()).collect();
        for w in energy.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0]), "{energy:?}");
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let p64 = make_instance(&preset::<f64>("reaction_diffusion").unwrap()).unwrap();
    let p32 = make_instance(&preset::<f32>("reaction_diffusion").unwrap()).unwrap();
    let u64_ = GridFunction::from_fn(p64.grid().clone(), |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
    let u32_ = GridFunction::from_fn(p32.grid().clone(), |x| (std::f32::consts::PI * x[0]).sin()).unwrap();
    let a = solve_implicit_euler(&p64, &u64_, &ZeroForcing, 0.01, 0.1).unwrap();
    let b = solve_implicit_euler(&p32, &u32_, &ZeroForcing, 0.01f32, 0.1).unwrap();
    assert_eq!(a.states.len(), b.states.len());
    for (x, y) in a.final_state().values().iter().zip(b.final_state().values()) {
        assert!((x - *y as f64).abs() < 1e-4, "{x} vs {y}");
    }
}
