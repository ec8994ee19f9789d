use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use varda_core::assim::GaussianDiag;
use varda_core::metrics::{
    loglog_slope, mean_ci95, paired_t_test, regularized_incomplete_beta, student_t_two_sided_p,
    time_block,
};
use varda_core::obsgen::{draw_network, perturb_ic, sample_obs};
use varda_core::Trajectory;

#[test]
fn t_distribution_tail_matches_statrs() {
    for &nu in &[1.0, 2.0, 3.5, 9.0, 29.0, 200.0] {
        let dist = StudentsT::new(0.0, 1.0, nu).unwrap();
        for &t in &[0.0, 0.1, 0.7, 1.5, 2.2, 4.0, 9.0] {
            let oracle = 2.0 * (1.0 - dist.cdf(t));
            let p = student_t_two_sided_p(t, nu);
            assert!(
                (p - oracle).abs() < 1e-10,
                "nu {nu}, t {t}: {p} vs {oracle}"
            );
        }
    }
}

#[test]
fn incomplete_beta_symmetry_and_closed_forms() {
    for &(a, b) in &[(0.5, 0.5), (2.0, 3.0), (7.5, 1.25)] {
        for &x in &[0.05, 0.3, 0.5, 0.91] {
            let lhs = regularized_incomplete_beta(x, a, b);
            let rhs = 1.0 - regularized_incomplete_beta(1.0 - x, b, a);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
    // I_x(1, b) = 1 − (1 − x)^b
    for &x in &[0.1, 0.6] {
        assert!(
            (regularized_incomplete_beta(x, 1.0, 3.0) - (1.0 - (1.0 - x).powi(3))).abs() < 1e-13
        );
    }
}

#[test]
fn paired_t_test_textbook_case() {
    // differences 1..=5: mean 3, sd √2.5, t = 3 / (√2.5/√5) = 3√2
    let x = [2.0, 4.0, 6.0, 8.0, 10.0];
    let y = [1.0, 2.0, 3.0, 4.0, 5.0];
    let r = paired_t_test(&x, &y, 0.05).unwrap();
    assert!((r.t - 3.0 * 2f64.sqrt()).abs() < 1e-12);
    let oracle = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 4.0).unwrap().cdf(r.t));
    assert!((r.p - oracle).abs() < 1e-10);
    assert!(r.significant);
    assert!(!paired_t_test(&x, &y, 1e-3).unwrap().significant);
}

#[test]
fn paired_t_test_degenerate_inputs() {
    let same = paired_t_test(&[1.0, 2.0], &[1.0, 2.0], 0.05).unwrap();
    assert_eq!(same.p, 1.0);
    let shifted = paired_t_test(&[2.0, 3.0], &[1.0, 2.0], 0.05).unwrap();
    assert!(shifted.degenerate && shifted.significant);
    assert!(paired_t_test(&[1.0], &[2.0], 0.05).is_err());
    assert!(paired_t_test(&[1.0, 2.0], &[2.0], 0.05).is_err());
}

#[test]
fn network_draws_are_uniform_over_components() {
    let (dim, n_obs, draws) = (20, 5, 4000);
    let mut counts = vec![0usize; dim];
    for seed in 0..draws {
        for i in draw_network(dim, n_obs, 1, 0.1, seed).unwrap().indices {
            counts[i] += 1;
        }
    }
    let expected = (draws as usize * n_obs) as f64 / dim as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new((dim - 1) as f64)
        .unwrap()
        .inverse_cdf(0.999);
    assert!(chi2 < critical, "chi² {chi2} ≥ {critical}");
}

#[test]
fn observation_noise_has_requested_sd_and_zero_mean() {
    let dim = 50;
    let nature = Trajectory::from_flat(dim, vec![0.0; dim * 11]).unwrap();
    let net = draw_network(dim, dim, 1, 0.7, 3).unwrap();
    let mut values = Vec::new();
    for w in 0..100 {
        let batch = sample_obs(
            &nature,
            &net,
            0,
            10,
            w,
            GaussianDiag::uniform(dim, 0.49).unwrap(),
        )
        .unwrap();
        values.extend(batch.values);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd / 0.7 - 1.0).abs() < 0.02, "{sd}");
    assert!(mean.abs() < 3.0 * 0.7 / n.sqrt());
}

#[test]
fn ic_perturbation_is_unbiased() {
    let truth = vec![3.0; 20_000];
    let x = perturb_ic(&truth, 0.5, 42).unwrap();
    let d: Vec<f64> = x.iter().zip(&truth).map(|(a, b)| a - b).collect();
    let ci = mean_ci95(&d);
    let se = 0.5 / (d.len() as f64).sqrt();
    assert!(ci.mean.abs() < 3.0 * se);
    // distinct seeds, distinct draws
    assert_ne!(x, perturb_ic(&truth, 0.5, 43).unwrap());
    assert_eq!(x, perturb_ic(&truth, 0.5, 42).unwrap());
}

#[test]
fn timer_measures_sleeps() {
    let (v, secs) = time_block("sleep", || {
        std::thread::sleep(std::time::Duration::from_millis(30));
        7
    });
    assert_eq!(v, 7);
    assert!((0.03..1.0).contains(&secs));
}

#[test]
fn loglog_slope_recovers_power_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (1..20).map(|i| i as f64 * 10.0).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| 0.3 * v.powf(1.7) * (1.0 + 1e-3 * rng.random_range(-1.0..1.0)))
        .collect();
    assert!((loglog_slope(&x, &y).unwrap() - 1.7).abs() < 1e-2);
}
