use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varda_core::integrate::Dynamics;
use varda_core::models::{Lorenz96, Lorenz96Params};
use varda_core::surrogate::{
    build_reservoir, ridge_solve, train_readout, ReservoirModel, ReservoirSpec,
};
use varda_core::{Error, Trajectory};

fn spec(n: usize, seed: u64) -> ReservoirSpec {
    ReservoirSpec {
        n_reservoir: n,
        ..ReservoirSpec::for_input(3, seed)
    }
}

fn random_inputs(dim: usize, len: usize, seed: u64) -> Trajectory<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Trajectory::from_flat(
        dim,
        (0..dim * len)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect(),
    )
    .unwrap()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn adjacency_density_matches_sparsity() {
    let rc = build_reservoir::<f64>(&spec(1000, 1), 3).unwrap();
    let density = rc.adjacency().nnz() as f64 / 1e6;
    assert!((density / 0.01 - 1.0).abs() < 0.05, "{density}");
}

#[test]
fn spectral_radius_matches_power_growth_rate() {
    for seed in 0..3 {
        let mut s = spec(80, seed);
        s.sparsity = 0.9;
        let rc = build_reservoir::<f64>(&s, 3).unwrap();
        let a = DMatrix::from_row_slice(80, 80, &rc.adjacency().to_dense());
        // Gelfand: ‖Aᵏv‖ grows like ρᵏ; compare two late iterates so that
        // polynomial prefactors and transients cancel
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = nalgebra::DVector::from_fn(80, |_, _| rng.random_range(-1.0..1.0));
        let (k1, k2) = (300, 1500);
        let mut log_norm = 0.0;
        let mut at_k1 = 0.0;
        for k in 1..=k2 {
            v = &a * v;
            let nv = v.norm();
            log_norm += nv.ln();
            v /= nv;
            if k == k1 {
                at_k1 = log_norm;
            }
        }
        let rho = ((log_norm - at_k1) / (k2 - k1) as f64).exp();
        assert!((rho - 0.9).abs() < 0.9 * 0.02, "seed {seed}: {rho}");
    }
}

#[test]
fn ridge_solution_satisfies_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = DMatrix::from_fn(300, 40, |_, _| rng.random_range(-1.0..1.0));
    let u = DMatrix::from_fn(300, 5, |_, _| rng.random_range(-1.0..1.0));
    for lambda in [1e-6, 1e-2, 1.0] {
        let x = ridge_solve(&g, &u, lambda).unwrap();
        let gram = g.transpose() * &g + DMatrix::identity(40, 40) * lambda;
        let resid = &gram * &x - g.transpose() * &u;
        assert!(resid.norm() / (g.transpose() * &u).norm() < 1e-8);
    }
}

#[test]
fn unregularized_square_system_is_solved_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = DMatrix::from_fn(12, 12, |i, j| {
        if i == j {
            3.0
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    let x_true = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
    let u = &g * &x_true;
    let x = ridge_solve(&g, &u, 0.0).unwrap();
    assert!((x - x_true).amax() < 1e-10);
}

#[test]
fn rank_deficient_unregularized_fit_is_refused() {
    let g = DMatrix::from_fn(10, 4, |i, j| if j == 3 { 0.0 } else { (i + j) as f64 });
    let u = DMatrix::from_element(10, 1, 1.0);
    assert!(matches!(ridge_solve(&g, &u, 0.0), Err(Error::Singular(_))));
    assert!(ridge_solve(&g, &u, 1e-3).is_ok());
}

#[test]
fn reservoir_state_stays_bounded_over_long_drives() {
    let rc = build_reservoir::<f64>(&spec(200, 2), 3).unwrap();
    let inputs = random_inputs(3, 100_000, 3);
    let states = rc.drive(&vec![0.0; 200], &inputs).unwrap();
    let max = states.as_flat().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max <= 1.0);
}

#[test]
fn echo_state_property_forgets_initial_state() {
    let rc = build_reservoir::<f64>(&spec(200, 7), 3).unwrap();
    let inputs = random_inputs(3, 600, 8);
    let a = rc.drive(&vec![0.0; 200], &inputs).unwrap();
    let b = rc.drive(&vec![0.9; 200], &inputs).unwrap();
    let gap0 = norm(
        &a.state(0)
            .iter()
            .zip(b.state(0))
            .map(|(x, y)| x - y)
            .collect::<Vec<_>>(),
    );
    let gap = norm(
        &a.last()
            .unwrap()
            .iter()
            .zip(b.last().unwrap())
            .map(|(x, y)| x - y)
            .collect::<Vec<_>>(),
    );
    assert!(gap < 1e-8 * gap0, "{gap} from {gap0}");
}

fn trained_l96(n: usize) -> (ReservoirModel<f64>, Trajectory<f64>) {
    let l = Lorenz96::integrator(
        Lorenz96Params {
            dim: 4,
            forcing: 8.0,
        },
        0.01,
    )
    .unwrap();
    let x0 = l
        .forecast(&[8.0, 8.01, 7.9, 8.0], 500)
        .unwrap()
        .last()
        .unwrap()
        .to_vec();
    let data = l.forecast(&x0, 4000).unwrap();
    let mut rc = build_reservoir::<f64>(&spec(n, 9), 4).unwrap();
    train_readout(&mut rc, &data.segment(0..3000), &data.segment(1..3001), 100).unwrap();
    (rc, data)
}

#[test]
fn synchronization_is_deterministic_and_noise_sensitive() {
    let (rc, data) = trained_l96(100);
    let window = data.segment(3000..3300);
    let a = rc.synchronize(&window).unwrap();
    assert_eq!(a, rc.synchronize(&window).unwrap());
    let n1 = rc.synchronize_noisy(&window, 0.01, 1).unwrap();
    assert_eq!(n1, rc.synchronize_noisy(&window, 0.01, 1).unwrap());
    assert_ne!(n1, rc.synchronize_noisy(&window, 0.01, 2).unwrap());
    assert_ne!(n1, a);
    // zero noise reduces to the clean synchronisation
    assert_eq!(rc.synchronize_noisy(&window, 0.0, 5).unwrap(), a);
}

#[test]
fn forecasts_compose() {
    let (rc, data) = trained_l96(100);
    let r0 = rc.synchronize(&data.segment(3000..3300)).unwrap();
    let whole = Dynamics::forecast(&rc, &r0, 30).unwrap();
    let first = Dynamics::forecast(&rc, &r0, 12).unwrap();
    let rest = Dynamics::forecast(&rc, first.last().unwrap(), 18).unwrap();
    assert_eq!(whole.last().unwrap(), rest.last().unwrap());
    let zero = rc.forecast_system(&r0, 0).unwrap();
    assert_eq!(zero.len(), 1);
    assert_eq!(zero.dim(), 4);
}

#[test]
fn readout_fits_one_step_targets() {
    let (rc, data) = trained_l96(300);
    let (_, sd) = data.component_stats();
    let r0 = rc.synchronize(&data.segment(3000..3500)).unwrap();
    // the reservoir state after inputs up to k predicts u(k + 1)
    let pred = rc.readout_map().unwrap().apply_vec(&r0);
    let truth = data.state(3500);
    for i in 0..4 {
        assert!(
            (pred[i] - truth[i]).abs() < 0.1 * sd[i],
            "{pred:?} vs {truth:?}"
        );
    }
}

#[test]
fn saved_reservoir_reproduces_forecasts() {
    let (rc, data) = trained_l96(80);
    let dir = tempfile::tempdir().unwrap();
    rc.save(dir.path()).unwrap();
    let back = ReservoirModel::<f64>::load(dir.path()).unwrap();
    let r0 = rc.synchronize(&data.segment(3000..3200)).unwrap();
    assert_eq!(
        rc.forecast_system(&r0, 20).unwrap(),
        back.forecast_system(&r0, 20).unwrap()
    );
}
