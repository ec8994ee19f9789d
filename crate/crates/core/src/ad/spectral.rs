//! Spectral linear primitives for doubly periodic fields.
//!
//! Complex arrays are stored interleaved (`re, im, re, im, …`) so that they
//! live on the same real-valued tape as everything else. Adjoints are taken
//! with respect to the real inner product `Σ re·re' + im·im'`.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftNum, FftPlanner};

use super::linear::LinearMap;
use crate::scalar::Scalar;

/// Scalars that can go through `rustfft`.
pub trait FftScalar: Scalar + FftNum {}
impl<T: Scalar + FftNum> FftScalar for T {}

/// Stacked 2-D DFT over `layers` fields of size `ny × nx`, scaled by `scale`.
pub struct Fft2<T: FftScalar> {
    nx: usize,
    ny: usize,
    layers: usize,
    scale: T,
    /// Row/column plans for the map itself and for its adjoint (the
    /// opposite direction).
    plans: [(Arc<dyn Fft<T>>, Arc<dyn Fft<T>>); 2],
}

impl<T: FftScalar> Fft2<T> {
    fn with(nx: usize, ny: usize, layers: usize, direction: FftDirection, scale: T) -> Self {
        let mut planner = FftPlanner::new();
        let opposite = match direction {
            FftDirection::Forward => FftDirection::Inverse,
            FftDirection::Inverse => FftDirection::Forward,
        };
        let mut plan = |d| (planner.plan_fft(nx, d), planner.plan_fft(ny, d));
        let plans = [plan(direction), plan(opposite)];
        Self {
            nx,
            ny,
            layers,
            scale,
            plans,
        }
    }

    /// Unnormalised forward transform.
    pub fn forward(nx: usize, ny: usize, layers: usize) -> Self {
        Self::with(nx, ny, layers, FftDirection::Forward, T::one())
    }

    /// Inverse transform normalised by `1/(nx·ny)`.
    pub fn inverse(nx: usize, ny: usize, layers: usize) -> Self {
        let n = T::from_usize(nx * ny).unwrap();
        Self::with(nx, ny, layers, FftDirection::Inverse, T::one() / n)
    }

    fn transform(&self, which: usize, x: &[T], out: &mut [T]) {
        let (row, col) = &self.plans[which];
        let plane = self.nx * self.ny;
        let mut buf: Vec<Complex<T>> = x
            .chunks_exact(2)
            .map(|c| Complex::new(c[0], c[1]))
            .collect();
        let mut column = vec![Complex::new(T::zero(), T::zero()); self.ny];
        let scratch_len = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); scratch_len];
        for layer in buf.chunks_exact_mut(plane) {
            for r in layer.chunks_exact_mut(self.nx) {
                row.process_with_scratch(r, &mut scratch);
            }
            for ix in 0..self.nx {
                for (iy, c) in column.iter_mut().enumerate() {
                    *c = layer[iy * self.nx + ix];
                }
                col.process_with_scratch(&mut column, &mut scratch);
                for (iy, c) in column.iter().enumerate() {
                    layer[iy * self.nx + ix] = *c;
                }
            }
        }
        for (o, c) in out.chunks_exact_mut(2).zip(&buf) {
            o[0] = c.re * self.scale;
            o[1] = c.im * self.scale;
        }
    }
}

impl<T: FftScalar> LinearMap<T> for Fft2<T> {
    fn input_len(&self) -> usize {
        2 * self.nx * self.ny * self.layers
    }
    fn output_len(&self) -> usize {
        self.input_len()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        self.transform(0, x, out)
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        // (s·F)ᴴ = s·Fᴴ and Fᴴ is the unnormalised transform in the other direction.
        self.transform(1, y, out)
    }
    fn name(&self) -> &'static str {
        "fft2"
    }
}

/// Real vector of length n into interleaved complex with zero imaginary part.
#[derive(Clone, Copy, Debug)]
pub struct RealEmbed(pub usize);

impl<T: Scalar> LinearMap<T> for RealEmbed {
    fn input_len(&self) -> usize {
        self.0
    }
    fn output_len(&self) -> usize {
        2 * self.0
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        for (o, &xi) in out.chunks_exact_mut(2).zip(x) {
            o[0] = xi;
            o[1] = T::zero();
        }
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        for (o, c) in out.iter_mut().zip(y.chunks_exact(2)) {
            *o = c[0];
        }
    }
    fn name(&self) -> &'static str {
        "real-embed"
    }
}

/// Real part of an interleaved complex vector of n entries.
#[derive(Clone, Copy, Debug)]
pub struct RealPart(pub usize);

impl<T: Scalar> LinearMap<T> for RealPart {
    fn input_len(&self) -> usize {
        2 * self.0
    }
    fn output_len(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        RealEmbed(self.0).apply_adjoint(x, out)
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        RealEmbed(self.0).apply(y, out)
    }
    fn name(&self) -> &'static str {
        "real-part"
    }
}

/// Elementwise complex multiplication by fixed coefficients.
#[derive(Clone, Debug)]
pub struct ComplexDiagonal<T>(pub Vec<Complex<T>>);

impl<T: Scalar> LinearMap<T> for ComplexDiagonal<T> {
    fn input_len(&self) -> usize {
        2 * self.0.len()
    }
    fn output_len(&self) -> usize {
        2 * self.0.len()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        for ((o, z), c) in out.chunks_exact_mut(2).zip(x.chunks_exact(2)).zip(&self.0) {
            o[0] = c.re * z[0] - c.im * z[1];
            o[1] = c.re * z[1] + c.im * z[0];
        }
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        for ((o, z), c) in out.chunks_exact_mut(2).zip(y.chunks_exact(2)).zip(&self.0) {
            o[0] = c.re * z[0] + c.im * z[1];
            o[1] = c.re * z[1] - c.im * z[0];
        }
    }
    fn name(&self) -> &'static str {
        "complex-diagonal"
    }
}

/// Per-wavenumber 2×2 complex coupling of two stacked layers:
/// `out₁ = a·x₁ + b·x₂`, `out₂ = c·x₁ + d·x₂` with `[a, b, c, d]` per mode.
#[derive(Clone, Debug)]
pub struct LayerCoupling<T> {
    blocks: Vec<[Complex<T>; 4]>,
}

impl<T: Scalar> LayerCoupling<T> {
    pub fn new(blocks: Vec<[Complex<T>; 4]>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[[Complex<T>; 4]] {
        &self.blocks
    }

    fn modes(&self) -> usize {
        self.blocks.len()
    }
}

#[inline]
fn cmul<T: Scalar>(c: Complex<T>, re: T, im: T) -> (T, T) {
    (c.re * re - c.im * im, c.re * im + c.im * re)
}

impl<T: Scalar> LinearMap<T> for LayerCoupling<T> {
    fn input_len(&self) -> usize {
        4 * self.modes()
    }
    fn output_len(&self) -> usize {
        4 * self.modes()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        let n = self.modes();
        for (m, [a, b, c, d]) in self.blocks.iter().enumerate() {
            let (x1r, x1i) = (x[2 * m], x[2 * m + 1]);
            let (x2r, x2i) = (x[2 * (n + m)], x[2 * (n + m) + 1]);
            let (ar, ai) = cmul(*a, x1r, x1i);
            let (br, bi) = cmul(*b, x2r, x2i);
            let (cr, ci) = cmul(*c, x1r, x1i);
            let (dr, di) = cmul(*d, x2r, x2i);
            out[2 * m] = ar + br;
            out[2 * m + 1] = ai + bi;
            out[2 * (n + m)] = cr + dr;
            out[2 * (n + m) + 1] = ci + di;
        }
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        let n = self.modes();
        for (m, [a, b, c, d]) in self.blocks.iter().enumerate() {
            let (y1r, y1i) = (y[2 * m], y[2 * m + 1]);
            let (y2r, y2i) = (y[2 * (n + m)], y[2 * (n + m) + 1]);
            let (ar, ai) = cmul(a.conj(), y1r, y1i);
            let (cr, ci) = cmul(c.conj(), y2r, y2i);
            let (br, bi) = cmul(b.conj(), y1r, y1i);
            let (dr, di) = cmul(d.conj(), y2r, y2i);
            out[2 * m] = ar + cr;
            out[2 * m + 1] = ai + ci;
            out[2 * (n + m)] = br + dr;
            out[2 * (n + m) + 1] = bi + di;
        }
    }
    fn name(&self) -> &'static str {
        "layer-coupling"
    }
}
