use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use varda_core::integrate::Dynamics;
use varda_core::models::{QgModel, QgParams};

fn inviscid(n: usize) -> QgParams {
    let mut p = QgParams::pyqg_defaults(n);
    p.u1 = 0.0;
    p.u2 = 0.0;
    p.rek = 0.0;
    p.filter.enabled = false;
    p
}

/// Barotropic plane wave `ψ = A cos(kx + ly − ωt)` in both layers, as PV.
fn rossby_wave(p: &QgParams, mx: i32, my: i32, t: f64) -> Vec<f64> {
    let k = 2.0 * PI * mx as f64 / p.lx;
    let l = 2.0 * PI * my as f64 / p.ly;
    let k2 = k * k + l * l;
    let omega = -p.beta * k / k2;
    let amp = 1e4;
    let (dx, dy) = (p.lx / p.nx as f64, p.ly / p.ny as f64);
    let plane: Vec<f64> = (0..p.ny)
        .flat_map(|j| (0..p.nx).map(move |i| (i, j)))
        .map(|(i, j)| -k2 * amp * (k * i as f64 * dx + l * j as f64 * dy - omega * t).cos())
        .collect();
    [plane.clone(), plane].concat()
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

#[test]
fn barotropic_rossby_wave_has_analytic_phase_speed() {
    let p = inviscid(16);
    let steps = |dt: f64| (8.0 * 86400.0 / dt).round() as usize;
    let mut errs = Vec::new();
    for dt in [7200.0, 3600.0, 1800.0] {
        let model = QgModel::<f64>::integrator(p, dt).unwrap();
        let n = steps(dt);
        let q0 = rossby_wave(&p, 1, 1, 0.0);
        let q = model.forecast(&q0, n).unwrap();
        let exact = rossby_wave(&p, 1, 1, n as f64 * dt);
        errs.push(max_err(q.last().unwrap(), &exact));
    }
    assert!(errs[2] < 1e-6, "{errs:?}");
    // AB3 is third order: halving dt cuts the error by about 8
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((6.0..10.0).contains(&ratio), "{errs:?}");
    }
    // the wave actually moved by a sizeable phase
    let q0 = rossby_wave(&p, 1, 1, 0.0);
    let moved = rossby_wave(&p, 1, 1, 8.0 * 86400.0);
    assert!(max_err(&q0, &moved) > 0.3);
}

#[test]
fn inviscid_flow_without_beta_conserves_layer_enstrophy() {
    let mut p = inviscid(16);
    p.beta = 0.0;
    let model = QgModel::<f64>::integrator(p, 600.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q0 = model.tendency().random_initial(&mut rng, 1e-6);
    let z0 = model.tendency().layer_enstrophy(&q0);
    let traj = model.forecast(&q0, 400).unwrap();
    let z1 = model.tendency().layer_enstrophy(traj.last().unwrap());
    for layer in 0..2 {
        let drift = (z1[layer] - z0[layer]).abs() / z0[layer];
        assert!(drift < 1e-6, "layer {layer}: {drift:e}");
    }
    // the flow evolved nonlinearly
    assert!(max_err(traj.last().unwrap(), &q0) > 1e-3);
}

#[test]
fn bottom_drag_and_filter_remove_enstrophy() {
    let mut p = QgParams::pyqg_defaults(16);
    p.u1 = 0.0;
    p.beta = 0.0;
    let model = QgModel::<f64>::integrator(p, 7200.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q0 = model.tendency().random_initial(&mut rng, 1e-6);
    let traj = model.forecast(&q0, 200).unwrap();
    let total = |q: &[f64]| model.tendency().layer_enstrophy(q).iter().sum::<f64>();
    assert!(total(traj.last().unwrap()) < total(&q0));
}

#[test]
fn baroclinic_defaults_grow_small_perturbations() {
    // at 32² the deformation scale is resolved well enough for linear growth
    let model = QgModel::<f64>::integrator(QgParams::pyqg_defaults(32), 7200.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q0 = model.tendency().random_initial(&mut rng, 1e-9);
    let traj = model.forecast(&q0, 6000).unwrap();
    assert!(rms(traj.last().unwrap()) > 5.0 * rms(&q0));
}

#[test]
fn finite_amplitude_flow_is_sustained_at_coarse_resolution() {
    let model = QgModel::<f64>::integrator(QgParams::pyqg_defaults(16), 7200.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let q0 = model.tendency().random_initial(&mut rng, 2e-6);
    let traj = model.forecast(&q0, 8000).unwrap();
    let late = rms(traj.last().unwrap());
    assert!(late > rms(&q0) && late < 1e-4, "{late:e}");
}

fn rms(q: &[f64]) -> f64 {
    (q.iter().map(|v| v * v).sum::<f64>() / q.len() as f64).sqrt()
}
