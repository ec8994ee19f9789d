use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varda_core::ad::{self, linearize, value_and_grad, SharedMap, DEFAULT_DENSE_CAP};
use varda_core::assim::{GaussianDiag, ObservationBatch, WindowProblem};
use varda_core::integrate::{Dynamics, Integrator};
use varda_core::models::{L96Tangent, Lorenz96, Lorenz96Params, QgModel, QgParams};
use varda_core::obsgen::{draw_network, sample_obs};
use varda_core::surrogate::{build_reservoir, train_readout, ReservoirSpec};

fn l96(dim: usize) -> Integrator<Lorenz96<f64>> {
    Lorenz96::integrator(Lorenz96Params { dim, forcing: 8.0 }, 0.01).unwrap()
}

fn attractor_state(model: &Integrator<Lorenz96<f64>>, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<f64> = (0..model.dim())
        .map(|_| 8.0 + rng.random_range(-1.0..1.0))
        .collect();
    model.forecast(&x0, 1000).unwrap().last().unwrap().to_vec()
}

fn window_problem(
    model: &Integrator<Lorenz96<f64>>,
    seed: u64,
) -> WindowProblem<'_, f64, Integrator<Lorenz96<f64>>> {
    let dim = model.dim();
    let truth = model.forecast(&attractor_state(model, seed), 10).unwrap();
    let net = draw_network(dim, dim / 2, 5, 0.5, seed).unwrap();
    let r = GaussianDiag::uniform(dim / 2, 0.25).unwrap();
    let obs = sample_obs(&truth, &net, 0, 10, 0, r).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let xb: Vec<f64> = truth
        .state(0)
        .iter()
        .map(|v| v + rng.random_range(-1.0..1.0))
        .collect();
    WindowProblem::new(model, xb, GaussianDiag::uniform(dim, 0.3).unwrap(), obs, 10).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-300);
    num / den
}

// pins a closure to the higher-ranked signature the ad entry points expect
fn hr<F: for<'t> Fn(ad::Var<'t, f64>) -> ad::Var<'t, f64>>(f: F) -> F {
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn cost_gradient_matches_central_differences() {
    for dim in [6, 36] {
        let model = l96(dim);
        let prob = window_problem(&model, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(dim as u64);
        for _ in 0..20 {
            let x: Vec<f64> = prob
                .background
                .iter()
                .map(|v| v + rng.random_range(-0.5..0.5))
                .collect();
            let (j, g) = value_and_grad(|v| prob.cost_var(v), &x).unwrap();
            assert!((j - prob.cost(&x).unwrap()).abs() <= 1e-10 * j.abs());
            let h = 1e-5;
            let fd: Vec<f64> = (0..dim)
                .map(|i| {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    (prob.cost(&xp).unwrap() - prob.cost(&xm).unwrap()) / (2.0 * h)
                })
                .collect();
            let e = rel_err(&g, &fd);
            assert!(e < 1e-6, "dim {dim}: relative gradient error {e:e}");
        }
    }
}

#[test]
fn observation_map_passes_dot_product_test() {
    let model = l96(36);
    let prob = window_problem(&model, 5);
    let lin = linearize(|v| prob.obs_map_var(v), &prob.background).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let v: Vec<f64> = (0..lin.input_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let w: Vec<f64> = (0..lin.output_len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let lhs = dot(&lin.jvp(&v).unwrap(), &w);
        let rhs = dot(&v, &lin.vjp(&w).unwrap());
        assert!(
            (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()),
            "{lhs} vs {rhs}"
        );
    }
}

#[test]
fn analytic_tangent_and_adjoint_match_autodiff() {
    let model = l96(20);
    let x0 = attractor_state(&model, 9);
    let tangent = L96Tangent::new(&model, &x0, 15).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();

    let fwd = hr(|x| *model.rollout_var(x, 15).last().unwrap());
    let jv = ad::jvp(&fwd, &x0, &v).unwrap();
    let tl = tangent.tangent(&v).unwrap();
    assert!(rel_err(tl.last().unwrap(), &jv) < 1e-12);

    let vj = ad::vjp(&fwd, &x0, &w).unwrap();
    let adj = tangent.adjoint(&[(15, w.clone())]).unwrap();
    assert!(rel_err(&adj, &vj) < 1e-12);

    // tangent against a finite difference of the nonlinear model
    let eps = 1e-6;
    let xp: Vec<f64> = x0.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
    let xm: Vec<f64> = x0.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
    let fp = model.forecast(&xp, 15).unwrap();
    let fm = model.forecast(&xm, 15).unwrap();
    let fd: Vec<f64> = fp
        .last()
        .unwrap()
        .iter()
        .zip(fm.last().unwrap())
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect();
    assert!(rel_err(tl.last().unwrap(), &fd) < 1e-7);

    // dense propagator and its matrix-free adjoint
    let arc = Arc::new(tangent);
    let prop: SharedMap<f64> = arc.propagator();
    let dense = arc.propagator_dense();
    assert!(rel_err(&prop.apply_vec(&v), &dense.matvec(&v)) < 1e-13);
    assert!(rel_err(&prop.apply_adjoint_vec(&w), &dense.matvec_transpose(&w)) < 1e-13);
}

#[test]
fn hessian_is_symmetric_and_matches_gradient_differences() {
    let model = l96(6);
    let prob = window_problem(&model, 11);
    let x = prob.background.clone();
    let (_, g, h) = ad::value_grad_hessian(|v| prob.cost_var(v), &x, DEFAULT_DENSE_CAP).unwrap();
    assert!(h.asymmetry() < 1e-9 * h.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let eps = 1e-6;
    for j in 0..6 {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += eps;
        xm[j] -= eps;
        let gp = ad::grad(|v| prob.cost_var(v), &xp).unwrap();
        let gm = ad::grad(|v| prob.cost_var(v), &xm).unwrap();
        let col: Vec<f64> = gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        let hcol: Vec<f64> = (0..6).map(|i| h[(i, j)]).collect();
        assert!(rel_err(&hcol, &col) < 1e-6);
    }
    assert_eq!(g.len(), 6);
}

#[test]
fn qg_window_gradient_matches_directional_difference() {
    let model = QgModel::<f64>::integrator(QgParams::pyqg_defaults(8), 7200.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q0 = model.tendency().random_initial(&mut rng, 1e-6);
    let truth = model.forecast(&q0, 6).unwrap();
    let dim = model.dim();
    let net = draw_network(dim, dim / 2, 3, 1e-7, 1).unwrap();
    let obs = sample_obs(
        &truth,
        &net,
        0,
        6,
        0,
        GaussianDiag::uniform(dim / 2, 1e-14).unwrap(),
    )
    .unwrap();
    let xb: Vec<f64> = q0.iter().map(|v| v * 1.1).collect();
    let prob = WindowProblem::new(
        &model,
        xb,
        GaussianDiag::uniform(dim, 1e-14).unwrap(),
        obs,
        6,
    )
    .unwrap();
    let (_, g) = value_and_grad(|v| prob.cost_var(v), &q0).unwrap();
    let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-1e-7..1e-7)).collect();
    let eps = 1e-3;
    let xp: Vec<f64> = q0.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
    let xm: Vec<f64> = q0.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
    let fd = (prob.cost(&xp).unwrap() - prob.cost(&xm).unwrap()) / (2.0 * eps);
    let an = dot(&g, &d);
    assert!((fd - an).abs() < 1e-6 * an.abs(), "{fd} vs {an}");
}

#[test]
fn surrogate_forecast_gradient_matches_finite_differences() {
    let l = l96(6);
    let data = l.forecast(&attractor_state(&l, 1), 3000).unwrap();
    let spec = ReservoirSpec {
        n_reservoir: 60,
        sparsity: 0.9,
        ..ReservoirSpec::for_input(6, 5)
    };
    let mut rc = build_reservoir::<f64>(&spec, 6).unwrap();
    train_readout(&mut rc, &data.segment(0..2999), &data.segment(1..3000), 100).unwrap();
    let r0 = rc.synchronize(&data.segment(0..500)).unwrap();
    let w = rc.readout_map().unwrap();
    let functional = hr(|r| {
        let states = rc.rollout_var(r, 5);
        states[5].apply(&w).square().sum()
    });
    let g = ad::grad(functional, &r0).unwrap();
    let f = |r: &[f64]| -> f64 {
        let tr = rc.forecast_system(r, 5).unwrap();
        tr.state(5).iter().map(|v| v * v).sum()
    };
    let eps = 1e-6;
    let fd: Vec<f64> = (0..r0.len())
        .map(|i| {
            let mut p = r0.clone();
            let mut m = r0.clone();
            p[i] += eps;
            m[i] -= eps;
            (f(&p) - f(&m)) / (2.0 * eps)
        })
        .collect();
    assert!(rel_err(&g, &fd) < 1e-5);
}

#[test]
fn perfect_observations_give_zero_gradient_at_truth() {
    let model = l96(12);
    let truth = model.forecast(&attractor_state(&model, 2), 10).unwrap();
    let net = draw_network(12, 12, 2, 0.0, 1).unwrap();
    let obs = sample_obs(
        &truth,
        &net,
        0,
        10,
        0,
        GaussianDiag::uniform(12, 1.0).unwrap(),
    )
    .unwrap();
    let prob = WindowProblem::new(
        &model,
        truth.state(0).to_vec(),
        GaussianDiag::uniform(12, 1.0).unwrap(),
        obs,
        10,
    )
    .unwrap();
    let (j, g) = value_and_grad(|v| prob.cost_var(v), truth.state(0)).unwrap();
    assert!(j.abs() < 1e-20);
    assert!(g.iter().all(|v| v.abs() < 1e-10));
    let _: &ObservationBatch<f64> = &prob.obs;
}
