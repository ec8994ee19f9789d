//! Two-layer quasi-geostrophic model on a doubly periodic β-plane,
//! pseudo-spectral with 2/3-rule dealiasing and an exponential small-scale
//! filter. The state is the gridded potential vorticity of both layers,
//! laid out `[layer][y][x]`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::ad::{
    ComplexDiagonal, Compose, Fft2, FftScalar, LayerCoupling, LinearMap, RealEmbed, RealPart,
    SharedMap, Tape, Var,
};
use crate::error::{check_len, Error, Result};
use crate::integrate::{Integrator, Scheme, Tendency};

/// Scale-selective exponential filter `exp(−fac·(κ̃ − cutoff)⁴)` for
/// `κ̃ > cutoff`, where `κ̃ = √((k·dx)² + (l·dy)²)` is the grid-scaled
/// wavenumber.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralFilter {
    pub enabled: bool,
    pub cutoff: f64,
    pub factor: f64,
}

impl Default for SpectralFilter {
    fn default() -> Self {
        Self {
            enabled: true,
            cutoff: 0.65 * PI,
            factor: 23.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QgParams {
    pub nx: usize,
    pub ny: usize,
    /// Domain size in x and y (m).
    pub lx: f64,
    pub ly: f64,
    pub beta: f64,
    /// Bottom drag rate (1/s).
    pub rek: f64,
    /// Deformation radius (m); `kd² = 1/rd²`.
    pub rd: f64,
    /// Layer depth ratio `H1/H2`.
    pub delta: f64,
    pub u1: f64,
    pub u2: f64,
    pub filter: SpectralFilter,
    pub dealias: bool,
}

/// Default step of the "PyQG defaults" profile (s).
pub const QG_DEFAULT_DT: f64 = 7200.0;

impl QgParams {
    /// The "PyQG defaults" profile at an `n × n` resolution.
    pub fn pyqg_defaults(n: usize) -> Self {
        Self {
            nx: n,
            ny: n,
            lx: 1e6,
            ly: 1e6,
            beta: 1.5e-11,
            rek: 5.787e-7,
            rd: 15_000.0,
            delta: 0.25,
            u1: 0.025,
            u2: 0.0,
            filter: SpectralFilter::default(),
            dealias: true,
        }
    }

    /// Resolution whose gridded state has `dim = 2·n²` entries.
    pub fn for_state_dim(dim: usize) -> Result<Self> {
        let n = ((dim / 2) as f64).sqrt().round() as usize;
        if n < 4 || 2 * n * n != dim {
            return Err(Error::contract(format!(
                "QG state dimension {dim} is not 2·n² for a grid of n ≥ 4"
            )));
        }
        Ok(Self::pyqg_defaults(n))
    }

    pub fn state_dim(&self) -> usize {
        2 * self.nx * self.ny
    }

    pub fn kd2(&self) -> f64 {
        1.0 / (self.rd * self.rd)
    }

    pub fn f1(&self) -> f64 {
        self.kd2() / (1.0 + self.delta)
    }

    pub fn f2(&self) -> f64 {
        self.delta * self.f1()
    }

    /// Mean PV gradients `β₁, β₂`.
    pub fn beta1(&self) -> f64 {
        self.beta + self.f1() * (self.u1 - self.u2)
    }

    pub fn beta2(&self) -> f64 {
        self.beta - self.f2() * (self.u1 - self.u2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || self.ny < 4 {
            return Err(Error::contract("QG grid needs at least 4 points per side"));
        }
        let positive = [self.lx, self.ly, self.rd, self.delta];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::contract("QG lengths, rd and delta must be positive"));
        }
        let finite = [
            self.beta,
            self.rek,
            self.u1,
            self.u2,
            self.beta1(),
            self.beta2(),
        ];
        if finite.iter().any(|v| !v.is_finite()) || self.rek < 0.0 {
            return Err(Error::contract("QG parameters must be finite with rek ≥ 0"));
        }
        Ok(())
    }
}

/// Signed FFT index for position `i` of an `n`-point transform.
fn signed_index(i: usize, n: usize) -> isize {
    if i < n.div_ceil(2) {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Differentiable two-layer QG tendency with its spectral operators.
pub struct QgModel<T: FftScalar> {
    params: QgParams,
    /// Per-mode wavenumbers `(k, l)` over one layer plane.
    wavenumbers: Vec<(f64, f64)>,
    grid_to_spec: SharedMap<T>,
    spec_to_grid: SharedMap<T>,
    inversion: Arc<LayerCoupling<T>>,
    linear: SharedMap<T>,
    velocity_u: SharedMap<T>,
    velocity_v: SharedMap<T>,
    flux_x: SharedMap<T>,
    flux_y: SharedMap<T>,
    filter: Option<SharedMap<T>>,
}

impl<T: FftScalar> QgModel<T> {
    pub fn new(params: QgParams) -> Result<Self> {
        params.validate()?;
        let (nx, ny) = (params.nx, params.ny);
        let plane = nx * ny;
        let n = 2 * plane;
        let c = |re: f64, im: f64| Complex::new(T::lit(re), T::lit(im));
        let zero = c(0.0, 0.0);

        let mut wavenumbers = Vec::with_capacity(plane);
        let mut keep = Vec::with_capacity(plane);
        for iy in 0..ny {
            for ix in 0..nx {
                let (sx, sy) = (signed_index(ix, nx), signed_index(iy, ny));
                wavenumbers.push((
                    2.0 * PI / params.lx * sx as f64,
                    2.0 * PI / params.ly * sy as f64,
                ));
                let inside = 3 * sx.unsigned_abs() < nx && 3 * sy.unsigned_abs() < ny;
                keep.push(!params.dealias || inside);
            }
        }

        let (f1, f2) = (params.f1(), params.f2());
        let inv_blocks: Vec<[Complex<f64>; 4]> = wavenumbers
            .iter()
            .map(|&(k, l)| {
                let k2 = k * k + l * l;
                if k2 == 0.0 {
                    return [Complex::new(0.0, 0.0); 4];
                }
                let det = k2 * (k2 + f1 + f2);
                [
                    Complex::new((-k2 - f2) / det, 0.0),
                    Complex::new(-f1 / det, 0.0),
                    Complex::new(-f2 / det, 0.0),
                    Complex::new((-k2 - f1) / det, 0.0),
                ]
            })
            .collect();
        let to_t = |b: &[Complex<f64>; 4]| b.map(|z| c(z.re, z.im));

        let per_layer = |f: &dyn Fn(f64, f64) -> Complex<f64>| -> Vec<[Complex<T>; 4]> {
            wavenumbers
                .iter()
                .zip(&inv_blocks)
                .map(|(&(k, l), inv)| {
                    let d = f(k, l);
                    to_t(&[d * inv[0], d * inv[1], d * inv[2], d * inv[3]])
                })
                .collect()
        };
        // u = −∂ψ/∂y, v = ∂ψ/∂x
        let velocity_u = LayerCoupling::new(per_layer(&|_, l| Complex::new(0.0, -l)));
        let velocity_v = LayerCoupling::new(per_layer(&|k, _| Complex::new(0.0, k)));

        let (b1, b2) = (params.beta1(), params.beta2());
        let linear_blocks = wavenumbers
            .iter()
            .zip(&inv_blocks)
            .map(|(&(k, l), inv)| {
                let k2 = k * k + l * l;
                // −ikβᵢψᵢ (+ r_ek κ² ψ₂ on the bottom layer) − ikUᵢqᵢ
                let p1 = Complex::new(0.0, -k * b1);
                let p2 = Complex::new(params.rek * k2, -k * b2);
                to_t(&[
                    p1 * inv[0] + Complex::new(0.0, -k * params.u1),
                    p1 * inv[1],
                    p2 * inv[2],
                    p2 * inv[3] + Complex::new(0.0, -k * params.u2),
                ])
            })
            .collect();

        let fft_fwd: SharedMap<T> = Arc::new(Fft2::forward(nx, ny, 2));
        let fft_inv: SharedMap<T> = Arc::new(Fft2::inverse(nx, ny, 2));
        let grid_to_spec: SharedMap<T> =
            Arc::new(Compose::new(vec![Arc::new(RealEmbed(n)), fft_fwd]));
        let spec_to_grid: SharedMap<T> =
            Arc::new(Compose::new(vec![fft_inv, Arc::new(RealPart(n))]));
        let two_layers = |f: &dyn Fn(usize) -> Complex<T>| -> Vec<Complex<T>> {
            (0..2).flat_map(|_| (0..plane).map(f)).collect()
        };
        let deriv = |select_x: bool| -> SharedMap<T> {
            Arc::new(ComplexDiagonal(two_layers(&|m| {
                let (k, l) = wavenumbers[m];
                if !keep[m] {
                    zero
                } else if select_x {
                    c(0.0, k)
                } else {
                    c(0.0, l)
                }
            })))
        };
        let flux_x: SharedMap<T> = Arc::new(Compose::new(vec![grid_to_spec.clone(), deriv(true)]));
        let flux_y: SharedMap<T> = Arc::new(Compose::new(vec![grid_to_spec.clone(), deriv(false)]));

        let filter = params.filter.enabled.then(|| {
            let (dx, dy) = (params.lx / nx as f64, params.ly / ny as f64);
            let weights = two_layers(&|m| {
                let (k, l) = wavenumbers[m];
                let w = ((k * dx).powi(2) + (l * dy).powi(2)).sqrt();
                let f = if w > params.filter.cutoff {
                    (-params.filter.factor * (w - params.filter.cutoff).powi(4)).exp()
                } else {
                    1.0
                };
                c(f, 0.0)
            });
            Arc::new(Compose::new(vec![
                grid_to_spec.clone(),
                Arc::new(ComplexDiagonal(weights)),
                spec_to_grid.clone(),
            ])) as SharedMap<T>
        });

        let inversion = Arc::new(LayerCoupling::new(inv_blocks.iter().map(to_t).collect()));
        Ok(Self {
            params,
            wavenumbers,
            grid_to_spec,
            spec_to_grid: spec_to_grid.clone(),
            inversion,
            linear: Arc::new(LayerCoupling::new(linear_blocks)),
            velocity_u: Arc::new(Compose::new(vec![
                Arc::new(velocity_u),
                spec_to_grid.clone(),
            ])),
            velocity_v: Arc::new(Compose::new(vec![Arc::new(velocity_v), spec_to_grid])),
            flux_x,
            flux_y,
            filter,
        })
    }

    pub fn params(&self) -> &QgParams {
        &self.params
    }

    pub fn state_dim(&self) -> usize {
        self.params.state_dim()
    }

    /// `(k, l)` of every mode of one layer, in storage order.
    pub fn wavenumbers(&self) -> &[(f64, f64)] {
        &self.wavenumbers
    }

    /// The standard configuration: AB3 (RK4 startup) at `dt`.
    pub fn integrator(params: QgParams, dt: f64) -> Result<Integrator<Self>> {
        Integrator::new(Self::new(params)?, Scheme::Ab3, dt)
    }

    /// Gridded state to interleaved spectral coefficients (unnormalised DFT).
    pub fn to_spectral(&self, q: &[T]) -> Result<Vec<Complex<T>>> {
        check_len("QG gridded state", self.state_dim(), q.len())?;
        Ok(interleaved_to_complex(&self.grid_to_spec.apply_vec(q)))
    }

    /// Real part of the inverse transform of spectral coefficients.
    pub fn to_grid(&self, qh: &[Complex<T>]) -> Result<Vec<T>> {
        check_len("QG spectral state", self.state_dim(), qh.len())?;
        Ok(self.spec_to_grid.apply_vec(&complex_to_interleaved(qh)))
    }

    /// Streamfunction coefficients from PV coefficients, mode by mode; the
    /// mean mode is set to zero.
    pub fn invert(&self, qh: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        check_len("QG spectral state", self.state_dim(), qh.len())?;
        Ok(interleaved_to_complex(
            &self.inversion.apply_vec(&complex_to_interleaved(qh)),
        ))
    }

    /// PV coefficients from streamfunction coefficients: `q₁ = −κ²ψ₁ + F₁(ψ₂ − ψ₁)`,
    /// `q₂ = −κ²ψ₂ + F₂(ψ₁ − ψ₂)`.
    pub fn pv_from_streamfunction(&self, psih: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        check_len("QG spectral streamfunction", self.state_dim(), psih.len())?;
        let plane = self.wavenumbers.len();
        let (f1, f2) = (T::lit(self.params.f1()), T::lit(self.params.f2()));
        let mut q = vec![Complex::new(T::zero(), T::zero()); 2 * plane];
        for (m, &(k, l)) in self.wavenumbers.iter().enumerate() {
            let k2 = T::lit(k * k + l * l);
            let (p1, p2) = (psih[m], psih[plane + m]);
            q[m] = p1 * (-k2) + (p2 - p1) * f1;
            q[plane + m] = p2 * (-k2) + (p1 - p2) * f2;
        }
        Ok(q)
    }

    /// Spectral tendency (before the final inverse transform), recorded.
    pub fn spectral_tendency<'t>(&self, q: Var<'t, T>) -> Var<'t, T> {
        let qh = q.apply(&self.grid_to_spec);
        let u = qh.apply(&self.velocity_u);
        let v = qh.apply(&self.velocity_v);
        let advection = (u * q).apply(&self.flux_x) + (v * q).apply(&self.flux_y);
        qh.apply(&self.linear) - advection
    }

    /// Numeric tendency at `q`.
    pub fn tendency(&self, q: &[T]) -> Result<Vec<T>> {
        check_len("QG gridded state", self.state_dim(), q.len())?;
        let tape = Tape::new();
        Ok(self.eval(tape.constant(q.to_vec())).value())
    }

    /// Per-layer enstrophy `½ Σ q²` of a gridded state.
    pub fn layer_enstrophy(&self, q: &[T]) -> [T; 2] {
        let plane = q.len() / 2;
        let half = T::lit(0.5);
        let e = |s: &[T]| s.iter().map(|&v| v * v).sum::<T>() * half;
        [e(&q[..plane]), e(&q[plane..])]
    }

    /// Band-limited Gaussian noise with grid RMS `amplitude`, used as a
    /// random initial condition. Energy sits in wavenumber indices
    /// `1 ≤ |κ| ≤ n/4` of both layers.
    pub fn random_initial<R: Rng + ?Sized>(&self, rng: &mut R, amplitude: f64) -> Vec<T> {
        let (nx, ny) = (self.params.nx, self.params.ny);
        let plane = nx * ny;
        let mut field: Vec<T> = (0..2 * plane)
            .map(|_| T::lit(rng.sample(StandardNormal)))
            .collect();
        let mut spec = self.to_spectral(&field).expect("length matches");
        let band = (nx.min(ny) / 4).max(1) as f64;
        for (m, z) in spec.iter_mut().enumerate() {
            let mm = m % plane;
            let (sx, sy) = (signed_index(mm % nx, nx), signed_index(mm / nx, ny));
            let r = ((sx * sx + sy * sy) as f64).sqrt();
            if !(1.0..=band).contains(&r) {
                *z = Complex::new(T::zero(), T::zero());
            }
        }
        field = self.to_grid(&spec).expect("length matches");
        let rms =
            (field.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / field.len() as f64).sqrt();
        let scale = if rms > 0.0 { amplitude / rms } else { 0.0 };
        field.iter_mut().for_each(|v| *v *= T::lit(scale));
        field
    }
}

impl<T: FftScalar> Tendency<T> for QgModel<T> {
    fn dim(&self) -> usize {
        self.state_dim()
    }

    fn eval<'t>(&self, q: Var<'t, T>) -> Var<'t, T> {
        self.spectral_tendency(q).apply(&self.spec_to_grid)
    }

    fn post_step<'t>(&self, q: Var<'t, T>) -> Var<'t, T> {
        match &self.filter {
            Some(f) => q.apply(f),
            None => q,
        }
    }
}

pub fn interleaved_to_complex<T: FftScalar>(x: &[T]) -> Vec<Complex<T>> {
    x.chunks_exact(2)
        .map(|c| Complex::new(c[0], c[1]))
        .collect()
}

pub fn complex_to_interleaved<T: FftScalar>(z: &[Complex<T>]) -> Vec<T> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inviscid(n: usize) -> QgParams {
        QgParams {
            beta: 0.0,
            rek: 0.0,
            u1: 0.0,
            u2: 0.0,
            filter: SpectralFilter {
                enabled: false,
                ..Default::default()
            },
            ..QgParams::pyqg_defaults(n)
        }
    }

    #[test]
    fn rest_state_has_zero_tendency() {
        let model = QgModel::<f64>::new(QgParams::pyqg_defaults(16)).unwrap();
        assert!(model
            .tendency(&vec![0.0; 512])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn derived_coefficients() {
        let p = QgParams::pyqg_defaults(16);
        assert!((p.f2() - p.delta * p.f1()).abs() < 1e-30);
        assert!((p.beta1() - (p.beta + p.f1() * p.u1)).abs() < 1e-25);
        assert_eq!(QgParams::for_state_dim(2048).unwrap().nx, 32);
        assert!(QgParams::for_state_dim(100).is_err());
    }

    #[test]
    fn single_mode_inversion_is_the_analytic_2x2_solve() {
        let p = QgParams::pyqg_defaults(16);
        let model = QgModel::<f64>::new(p).unwrap();
        let plane = 256;
        let m = 3 * 16 + 2; // l index 3, k index 2
        let (k, l) = model.wavenumbers()[m];
        let k2 = k * k + l * l;
        let mut qh = vec![Complex::new(0.0, 0.0); 2 * plane];
        qh[m] = Complex::new(1.0, 0.5);
        qh[plane + m] = Complex::new(-0.25, 2.0);
        let psi = model.invert(&qh).unwrap();
        // Cramer's rule on [−κ²−F1, F1; F2, −κ²−F2] ψ = q
        let (a, b, c, d) = (-k2 - p.f1(), p.f1(), p.f2(), -k2 - p.f2());
        let det = a * d - b * c;
        let e1 = (qh[m] * d - qh[plane + m] * b) / det;
        let e2 = (qh[plane + m] * a - qh[m] * c) / det;
        assert!((psi[m] - e1).norm() < 1e-12 * e1.norm());
        assert!((psi[plane + m] - e2).norm() < 1e-12 * e2.norm());
        assert!(psi
            .iter()
            .enumerate()
            .all(|(i, z)| i == m || i == plane + m || z.norm() == 0.0));
    }

    #[test]
    fn inversion_round_trip_and_zero() {
        let model = QgModel::<f64>::new(QgParams::pyqg_defaults(16)).unwrap();
        assert!(model
            .invert(&vec![Complex::new(0.0, 0.0); 512])
            .unwrap()
            .iter()
            .all(|z| z.norm() == 0.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        let psi_grid: Vec<f64> = (0..512).map(|_| rng.sample(StandardNormal)).collect();
        let mut psih = model.to_spectral(&psi_grid).unwrap();
        psih[0] = Complex::new(0.0, 0.0);
        psih[256] = Complex::new(0.0, 0.0);
        let back = model
            .invert(&model.pv_from_streamfunction(&psih).unwrap())
            .unwrap();
        let scale = psih.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in back.iter().zip(&psih) {
            assert!((a - b).norm() < 1e-10 * scale);
        }
    }

    #[test]
    fn laplacian_eigenfunction_has_no_self_advection() {
        let n = 16;
        let model = QgModel::<f64>::new(inviscid(n)).unwrap();
        let plane = n * n;
        let mut q = vec![0.0; 2 * plane];
        for iy in 0..n {
            for ix in 0..n {
                let (x, y) = (
                    2.0 * PI * ix as f64 / n as f64,
                    2.0 * PI * iy as f64 / n as f64,
                );
                // |κ| index 5 shell: (3,4), (4,3), (5,0)
                let v = (3.0 * x + 4.0 * y).cos()
                    + 0.7 * (4.0 * x - 3.0 * y).sin()
                    + 0.3 * (5.0 * y).cos();
                q[iy * n + ix] = v * 1e-6;
                q[plane + iy * n + ix] = v * 1e-6;
            }
        }
        let t = model.tendency(&q).unwrap();
        let scale = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            t.iter().all(|v| v.abs() < 1e-12 * scale),
            "max {}",
            t.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        );
    }

    #[test]
    fn spectral_tendency_keeps_conjugate_symmetry() {
        let n = 16;
        let model = QgModel::<f64>::new(QgParams::pyqg_defaults(n)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        use rand::SeedableRng;
        let q = model.random_initial(&mut rng, 1e-5);
        let tape = Tape::new();
        let th = interleaved_to_complex(&model.spectral_tendency(tape.constant(q)).value());
        let plane = n * n;
        let scale = th.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        for layer in 0..2 {
            for iy in 0..n {
                for ix in 0..n {
                    if ix == n / 2 || iy == n / 2 {
                        continue;
                    }
                    let a = th[layer * plane + iy * n + ix];
                    let b = th[layer * plane + ((n - iy) % n) * n + (n - ix) % n];
                    assert!((a - b.conj()).norm() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn filter_damps_small_scales_and_keeps_large_ones() {
        let model = QgModel::<f64>::new(QgParams::pyqg_defaults(16)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        use rand::SeedableRng;
        let q: Vec<f64> = (0..512).map(|_| rng.sample(StandardNormal)).collect();
        let tape = Tape::new();
        let filtered = model.post_step(tape.constant(q.clone())).value();
        let e0: f64 = q.iter().map(|v| v * v).sum();
        let e1: f64 = filtered.iter().map(|v| v * v).sum();
        assert!(e1 < e0 && e1 > 0.0);
        let smooth = model.random_initial(&mut rng, 1.0);
        let kept = model.post_step(tape.constant(smooth.clone())).value();
        for (a, b) in kept.iter().zip(&smooth) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
