//! Evaluation statistics: RMSE, paired t-tests, timing, confidence intervals.

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

/// Per-trial outcome of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub method: String,
    pub rmse_series: Vec<f64>,
    pub aggregate_rmse: f64,
    pub wall_time_s: f64,
    pub diverged_windows: usize,
}

/// Spatial RMSE between two states.
pub fn rmse_state<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().max(1) as f64;
    (a.iter()
        .zip(b)
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Per-step RMSE over `range` and the aggregate `√(mean over steps of the
/// squared per-step RMSE)`.
pub fn rmse<T: Scalar>(
    a: &Trajectory<T>,
    b: &Trajectory<T>,
    range: Range<usize>,
) -> Result<(Vec<f64>, f64)> {
    check_len("trajectory dimension", a.dim(), b.dim())?;
    if range.end > a.len() || range.end > b.len() || range.is_empty() {
        return Err(Error::contract(format!(
            "RMSE range {range:?} outside trajectories of {} and {} states",
            a.len(),
            b.len()
        )));
    }
    let series: Vec<f64> = range.map(|i| rmse_state(a.state(i), b.state(i))).collect();
    let agg = aggregate(&series);
    Ok((series, agg))
}

/// Root of the mean of squared per-step errors.
pub fn aggregate(series: &[f64]) -> f64 {
    if series.is_empty() {
        return f64::NAN;
    }
    (series.iter().map(|v| v * v).sum::<f64>() / series.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub significant: bool,
    /// All differences equal but nonzero: the statistic is unbounded.
    pub degenerate: bool,
}

/// Two-sided paired Student's t-test on `x − y` with `n − 1` degrees of
/// freedom.
pub fn paired_t_test(x: &[f64], y: &[f64], alpha: f64) -> Result<TTest> {
    check_len("paired samples", x.len(), y.len())?;
    let n = x.len();
    if n < 2 {
        return Err(Error::contract("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                significant: false,
                degenerate: false,
            }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                p: 0.0,
                significant: true,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let p = student_t_two_sided_p(t, (n - 1) as f64);
    Ok(TTest {
        t,
        p,
        significant: p < alpha,
        degenerate: false,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `nu` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, nu: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    regularized_incomplete_beta(nu / (nu + t * t), 0.5 * nu, 0.5).clamp(0.0, 1.0)
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularised incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Mean of `|a − b| / b`: the relative difference normalised by the
/// reference sample `b`.
pub fn mean_normalized_difference(a: &[f64], reference: &[f64]) -> f64 {
    let n = a.len().min(reference.len()).max(1) as f64;
    a.iter()
        .zip(reference)
        .map(|(x, r)| (x - r).abs() / r)
        .sum::<f64>()
        / n
}

/// Runs `f` and returns its result with the elapsed wall time (s).
pub fn time_block<R>(label: &str, f: impl FnOnce() -> R) -> (R, f64) {
    let start = Instant::now();
    let out = f();
    let secs = start.elapsed().as_secs_f64();
    log::trace!("{label}: {secs:.6} s");
    (out, secs)
}

/// Mean with a normal-approximation 95% confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

pub fn mean_ci95(x: &[f64]) -> MeanCi {
    let n = x.len();
    if n == 0 {
        return MeanCi {
            mean: f64::NAN,
            half_width: f64::NAN,
            n,
        };
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let half_width = if n > 1 {
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.959_963_984_540_054 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanCi {
        mean,
        half_width,
        n,
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len("log-log samples", x.len(), y.len())?;
    if x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::contract("log-log fit needs ≥ 2 positive points"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("log-log fit needs distinct x values"));
    }
    Ok(sxy / sxx)
}
