use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varda_core::ad::{DenseMap, SharedMap};
use varda_core::assim::{
    backprop_4dvar, backprop_4dvar_capped, cycle_da, gauss_newton_4dvar, incremental_4dvar,
    AutodiffLinearizer, CycleConfig, GaussianDiag, HessianMode, L96AnalyticLinearizer, LrSchedule,
    Method, WindowProblem,
};
use varda_core::integrate::{Dynamics, Integrator, LinearModel};
use varda_core::models::{Lorenz96, Lorenz96Params};
use varda_core::obsgen::{draw_network, perturb_ic, sample_obs, ObsTiming};
use varda_core::solvers::BicgstabSettings;
use varda_core::Error;

fn tight() -> BicgstabSettings {
    BicgstabSettings {
        tol: 1e-13,
        max_iter: Some(2000),
    }
}

fn random_linear_model(n: usize, seed: u64) -> (LinearModel<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // near-identity so powers stay well scaled
    let m = DMatrix::from_fn(n, n, |i, j| {
        let noise: f64 = rng.random_range(-1.0..1.0);
        if i == j {
            0.95 + 0.1 * noise
        } else {
            0.15 * noise / (n as f64).sqrt()
        }
    });
    let data: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    let map: SharedMap<f64> = Arc::new(DenseMap::new(n, n, data));
    (LinearModel::new(map).unwrap(), m)
}

/// Dense normal-equation solution of the quadratic 4D-Var cost.
fn dense_oracle(prob: &WindowProblem<'_, f64, LinearModel<f64>>, m: &DMatrix<f64>) -> DVector<f64> {
    let n = prob.dim();
    let binv = DVector::from_vec(prob.b.inverse());
    let mut a = DMatrix::from_diagonal(&binv);
    let mut rhs = binv.component_mul(&DVector::from_vec(prob.background.clone()));
    let rinv = prob.obs.noise.inverse();
    let p = prob.obs.indices.len();
    for (ti, &t) in prob.obs.times.iter().enumerate() {
        let mt = m.pow(t as u32);
        let mut s = DMatrix::zeros(p, n);
        for (r, &i) in prob.obs.indices.iter().enumerate() {
            s[(r, i)] = 1.0;
        }
        let g = &s * mt;
        let rw = DMatrix::from_diagonal(&DVector::from_vec(rinv.clone()));
        a += g.transpose() * &rw * &g;
        rhs += g.transpose() * &rw * DVector::from_row_slice(prob.obs.row(ti));
    }
    a.lu().solve(&rhs).unwrap()
}

fn linear_problem(
    model: &LinearModel<f64>,
    seed: u64,
    timing: ObsTiming,
    every_k: usize,
    window: usize,
) -> WindowProblem<'_, f64, LinearModel<f64>> {
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let truth = model.forecast(&x0, window).unwrap();
    let mut net = draw_network(n, n / 2, every_k, 0.3, seed).unwrap();
    net.timing = timing;
    let obs = sample_obs(
        &truth,
        &net,
        0,
        window,
        0,
        GaussianDiag::uniform(n / 2, 0.09).unwrap(),
    )
    .unwrap();
    let xb = perturb_ic(&x0, 0.5, seed + 1).unwrap();
    WindowProblem::new(
        model,
        xb,
        GaussianDiag::uniform(n, 0.25).unwrap(),
        obs,
        window,
    )
    .unwrap()
}

fn max_rel(a: &[f64], b: &DVector<f64>) -> f64 {
    let scale = b.amax().max(1e-300);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

#[test]
fn linear_problem_solvers_match_dense_normal_equations() {
    let (model, m) = random_linear_model(20, 7);
    for seed in 0..5 {
        let prob = linear_problem(&model, seed, ObsTiming::AfterStart, 2, 8);
        let oracle = dense_oracle(&prob, &m);

        let gn = gauss_newton_4dvar(&prob, 1, &tight()).unwrap();
        assert!(max_rel(&gn.analysis, &oracle) < 1e-6, "gauss-newton");

        let inc = incremental_4dvar(&prob, 1, &tight(), &AutodiffLinearizer).unwrap();
        assert!(max_rel(&inc.analysis, &oracle) < 1e-6, "incremental");

        let exact = backprop_4dvar(
            &prob,
            1,
            &LrSchedule::default(),
            HessianMode::Exact,
            &tight(),
        )
        .unwrap();
        assert!(max_rel(&exact.analysis, &oracle) < 1e-6, "exact backprop");

        // a second step from the optimum stays there
        let gn2 = gauss_newton_4dvar(&prob, 2, &tight()).unwrap();
        assert!(max_rel(&gn2.analysis, &oracle) < 1e-6);
        assert!(gn2.cost_history.last().unwrap() <= &(gn2.cost_history[0] + 1e-12));
    }
}

#[test]
fn approximate_hessian_is_exact_when_only_the_start_is_observed() {
    let n = 12;
    let eye: Vec<f64> = (0..n * n)
        .map(|k| if k / n == k % n { 1.0 } else { 0.0 })
        .collect();
    let model = LinearModel::new(Arc::new(DenseMap::new(n, n, eye)) as SharedMap<f64>).unwrap();
    let prob = linear_problem(&model, 3, ObsTiming::FromStart, 10, 4);
    assert_eq!(prob.obs.times, vec![0]);
    let oracle = dense_oracle(&prob, &DMatrix::identity(n, n));
    let lr = LrSchedule {
        alpha0: 1.0,
        decay: 0.5,
    };
    let res = backprop_4dvar(&prob, 1, &lr, HessianMode::Approximate, &tight()).unwrap();
    assert!(max_rel(&res.analysis, &oracle) < 1e-8);
}

#[test]
fn gradient_descent_decreases_cost_on_quadratic() {
    let (model, _) = random_linear_model(10, 2);
    let prob = linear_problem(&model, 1, ObsTiming::AfterStart, 1, 3);
    let lr = LrSchedule {
        alpha0: 0.01,
        decay: 0.99,
    };
    let res = backprop_4dvar(&prob, 10, &lr, HessianMode::Identity, &tight()).unwrap();
    for w in res.cost_history.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn exact_hessian_refuses_beyond_cap() {
    let (model, _) = random_linear_model(10, 2);
    let prob = linear_problem(&model, 1, ObsTiming::AfterStart, 1, 3);
    let err = backprop_4dvar_capped(
        &prob,
        1,
        &LrSchedule::default(),
        HessianMode::Exact,
        &tight(),
        8,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Resource { dim: 10, cap: 8 }));
}

fn l96_setup(dim: usize) -> (Integrator<Lorenz96<f64>>, varda_core::Trajectory<f64>) {
    let model = Lorenz96::integrator(Lorenz96Params { dim, forcing: 8.0 }, 0.01).unwrap();
    let x0: Vec<f64> = (0..dim)
        .map(|i| 8.0 + if i == 0 { 0.01 } else { 0.0 })
        .collect();
    let spun = model.forecast(&x0, 2000).unwrap();
    let nature = model.forecast(spun.last().unwrap(), 400).unwrap();
    (model, nature)
}

#[test]
fn analytic_and_autodiff_incremental_agree() {
    let (model, nature) = l96_setup(20);
    let net = draw_network(20, 10, 5, 0.5, 4).unwrap();
    let obs = sample_obs(
        &nature,
        &net,
        0,
        10,
        0,
        GaussianDiag::uniform(10, 0.25).unwrap(),
    )
    .unwrap();
    let xb = perturb_ic(nature.state(0), 0.5, 9).unwrap();
    let prob = WindowProblem::new(
        &model,
        xb,
        GaussianDiag::uniform(20, 0.25).unwrap(),
        obs,
        10,
    )
    .unwrap();
    let a = incremental_4dvar(&prob, 3, &tight(), &AutodiffLinearizer).unwrap();
    let b = incremental_4dvar(&prob, 3, &tight(), &L96AnalyticLinearizer).unwrap();
    let diff = a
        .analysis
        .iter()
        .zip(&b.analysis)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-8, "{diff}");
    // the analysis fits the data better than the background
    assert!(a.cost_history.last().unwrap() < &a.cost_history[0]);
}

fn cycle_config(method: Method) -> CycleConfig<f64> {
    let net = draw_network(20, 10, 5, 0.5, 11).unwrap();
    CycleConfig::new(
        10,
        30,
        net,
        GaussianDiag::uniform(20, 0.25).unwrap(),
        GaussianDiag::uniform(10, 0.25).unwrap(),
        method,
    )
}

#[test]
fn cycling_is_deterministic_and_beats_free_run() {
    let (model, nature) = l96_setup(20);
    let bg = perturb_ic(nature.state(0), 1.0, 5).unwrap();
    let cfg = cycle_config(Method::Incremental);
    let a = cycle_da(&model, &nature, &bg, &cfg, &L96AnalyticLinearizer, None).unwrap();
    let b = cycle_da(&model, &nature, &bg, &cfg, &L96AnalyticLinearizer, None).unwrap();
    assert_eq!(a.estimates.as_flat(), b.estimates.as_flat());
    assert_eq!(a.rmse, b.rmse);
    assert_eq!(a.estimates.len(), 301);
    assert!(a.failed_windows.is_empty());

    let free = cycle_da(
        &model,
        &nature,
        &bg,
        &cycle_config(Method::None),
        &L96AnalyticLinearizer,
        None,
    )
    .unwrap();
    let tail = |r: &[f64]| r[200..].iter().sum::<f64>() / r[200..].len() as f64;
    assert!(
        tail(&a.rmse) < 0.5 * tail(&free.rmse),
        "{} vs {}",
        tail(&a.rmse),
        tail(&free.rmse)
    );

    // B-only preconditioning wants the tighter background / inflated R used by the experiments
    let mut bp = cycle_config(Method::BackpropApprox);
    bp.b = GaussianDiag::uniform(20, (0.5f64 / 1.5).powi(2)).unwrap();
    bp.r = GaussianDiag::uniform(10, 0.625f64.powi(2)).unwrap();
    bp.lr = LrSchedule {
        alpha0: 1.0,
        decay: 0.5,
    };
    let c = cycle_da(&model, &nature, &bg, &bp, &AutodiffLinearizer, None).unwrap();
    assert!(
        tail(&c.rmse) < 0.5 * tail(&free.rmse),
        "{} vs {} (inc {})",
        tail(&c.rmse),
        tail(&free.rmse),
        tail(&a.rmse)
    );
}

#[test]
fn cycle_rejects_short_nature_run() {
    let (model, nature) = l96_setup(20);
    let mut cfg = cycle_config(Method::Incremental);
    cfg.n_windows = 100;
    assert!(cycle_da(
        &model,
        &nature,
        nature.state(0),
        &cfg,
        &L96AnalyticLinearizer,
        None
    )
    .is_err());
}
