//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A function to differentiate is any closure `for<'t> Fn(Var<'t, T>) -> Var<'t, T>`
//! built from [`Var`] arithmetic and registered [`LinearMap`] primitives. Each
//! call records a fresh [`Tape`]; reverse sweeps give VJPs and gradients,
//! forward sweeps give JVPs, and recording the reverse sweep itself
//! ([`Tape::gradient_vars`]) gives Hessians.

pub mod linear;
pub mod spectral;
mod tape;

use rayon::prelude::*;

pub use linear::{
    to_dense, Adjoint, Compose, CsrMap, CyclicShift, DenseMap, Diagonal, LinearMap, Selection,
    SharedMap,
};
pub use spectral::{ComplexDiagonal, Fft2, FftScalar, LayerCoupling, RealEmbed, RealPart};
pub use tape::{Graph, NodeId, Tape, Var};

use crate::error::{check_len, Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// Default upper bound on either side of a dense Jacobian or Hessian.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// A function recorded once at a point, ready for repeated tangent-linear
/// (`jvp`) and adjoint (`vjp`) applications about that point.
pub struct Linearization<T: Scalar> {
    graph: Graph<T>,
    input: NodeId,
    output: NodeId,
    input_len: usize,
}

impl<T: Scalar> Linearization<T> {
    pub fn value(&self) -> &[T] {
        self.graph.value(self.output)
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.value().len()
    }

    pub fn jvp(&self, v: &[T]) -> Result<Vec<T>> {
        check_len("jvp tangent", self.input_len, v.len())?;
        Ok(self
            .graph
            .jvp(&[(self.input, v)], &[self.output])
            .pop()
            .unwrap())
    }

    pub fn vjp(&self, w: &[T]) -> Result<Vec<T>> {
        check_len("vjp cotangent", self.output_len(), w.len())?;
        Ok(self
            .graph
            .vjp(&[(self.output, w)], &[self.input])
            .pop()
            .unwrap())
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }
}

/// Records `f` at `x`.
pub fn linearize<T, F>(f: F, x: &[T]) -> Result<Linearization<T>>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    let tape = Tape::new();
    let input = tape.input(x.to_vec());
    let output = f(input);
    let (input, output) = (input.id(), output.id());
    tape.check_finite()?;
    let graph = tape.freeze();
    Ok(Linearization {
        graph,
        input,
        output,
        input_len: x.len(),
    })
}

/// Evaluates a scalar function and its gradient in one recording.
pub fn value_and_grad<T, F>(f: F, x: &[T]) -> Result<(T, Vec<T>)>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    let tape = Tape::new();
    let input = tape.input(x.to_vec());
    let y = f(input);
    tape.check_finite()?;
    if y.len() != 1 {
        return Err(Error::contract(format!(
            "gradient requested of a function with {} outputs",
            y.len()
        )));
    }
    let value = y.scalar_value();
    let g = tape
        .vjp(&[(y.id(), &[T::one()])], &[input.id()])
        .pop()
        .unwrap();
    if !crate::scalar::all_finite(&g) {
        return Err(Error::NonFinite {
            node: input.id().0,
            op: "gradient",
        });
    }
    Ok((value, g))
}

pub fn grad<T, F>(f: F, x: &[T]) -> Result<Vec<T>>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    value_and_grad(f, x).map(|(_, g)| g)
}

/// `vᵀ ∂f(x)`.
pub fn vjp<T, F>(f: F, x: &[T], v: &[T]) -> Result<Vec<T>>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    linearize(f, x)?.vjp(v)
}

/// `∂f(x) v`.
pub fn jvp<T, F>(f: F, x: &[T], v: &[T]) -> Result<Vec<T>>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    linearize(f, x)?.jvp(v)
}

/// Dense Jacobian, assembled one row (one VJP) at a time.
pub fn jacobian<T, F>(f: F, x: &[T], cap: usize) -> Result<DenseMatrix<T>>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    if x.len() > cap {
        return Err(Error::Resource { dim: x.len(), cap });
    }
    let lin = linearize(f, x)?;
    let m = lin.output_len();
    if m > cap {
        return Err(Error::Resource { dim: m, cap });
    }
    let rows: Vec<Vec<T>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![T::zero(); m];
            e[i] = T::one();
            lin.graph
                .vjp(&[(lin.output, &e)], &[lin.input])
                .pop()
                .unwrap()
        })
        .collect();
    Ok(DenseMatrix::from_rows(&rows))
}

/// Dense Hessian of a scalar function: the Jacobian of the recorded gradient
/// (reverse-over-reverse).
pub fn hessian<T, F>(f: F, x: &[T], cap: usize) -> Result<DenseMatrix<T>>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    value_grad_hessian(f, x, cap).map(|(_, _, h)| h)
}

/// Value, gradient and dense Hessian from a single recording.
pub fn value_grad_hessian<T, F>(f: F, x: &[T], cap: usize) -> Result<(T, Vec<T>, DenseMatrix<T>)>
where
    T: Scalar,
    F: for<'t> Fn(Var<'t, T>) -> Var<'t, T>,
{
    let n = x.len();
    if n > cap {
        return Err(Error::Resource { dim: n, cap });
    }
    let tape = Tape::new();
    let input = tape.input(x.to_vec());
    let y = f(input);
    if y.len() != 1 {
        return Err(Error::contract("hessian of a non-scalar function"));
    }
    let g = tape.gradient_vars(y, &[input])[0];
    tape.check_finite()?;
    let (value, gradient, input, g) = (y.scalar_value(), g.value(), input.id(), g.id());
    let graph = tape.freeze();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![T::zero(); n];
            e[i] = T::one();
            graph.vjp(&[(g, &e)], &[input]).pop().unwrap()
        })
        .collect();
    let h = DenseMatrix::from_rows(&rows);
    if h.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node: g.0,
            op: "hessian",
        });
    }
    Ok((value, gradient, h))
}
