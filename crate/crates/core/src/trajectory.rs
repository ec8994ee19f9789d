use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::scalar::Scalar;

/// Time-indexed sequence of equally sized states, stored contiguously.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, states: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * states),
        }
    }

    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(crate::Error::contract(format!(
                "flat buffer of {} values is not a whole number of {dim}-dimensional states",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_states(states: &[Vec<T>]) -> Result<Self> {
        let dim = states.first().map_or(0, Vec::len);
        let mut t = Self::with_capacity(dim, states.len());
        for s in states {
            t.push(s)?;
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of states.
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, state: &[T]) -> Result<()> {
        check_len("trajectory state", self.dim, state.len())?;
        self.data.extend_from_slice(state);
        Ok(())
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> Option<&[T]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<T> {
        self.data
    }

    /// Copy of the states in `range`.
    pub fn segment(&self, range: Range<usize>) -> Self {
        assert!(
            range.end <= self.len(),
            "segment {range:?} beyond {} states",
            self.len()
        );
        Self {
            dim: self.dim,
            data: self.data[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }

    /// Appends `other`, skipping its first state (the shared boundary).
    pub fn extend_continuing(&mut self, other: &Self) -> Result<()> {
        check_len("trajectory continuation", self.dim, other.dim)?;
        if other.len() > 1 {
            self.data.extend_from_slice(&other.data[self.dim..]);
        }
        Ok(())
    }

    /// Per-component mean and standard deviation (population) over all states.
    pub fn component_stats(&self) -> (Vec<T>, Vec<T>) {
        let n = T::from_usize(self.len().max(1)).unwrap();
        let mut mean = vec![T::zero(); self.dim];
        for s in self.states() {
            crate::scalar::axpy(T::one(), s, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![T::zero(); self.dim];
        for s in self.states() {
            for ((v, &x), &m) in var.iter_mut().zip(s).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let sd = var.into_iter().map(|v| (v / n).sqrt()).collect();
        (mean, sd)
    }

    pub fn map_states(&self, dim: usize, f: impl Fn(&[T]) -> Vec<T>) -> Result<Self> {
        let mut out = Self::with_capacity(dim, self.len());
        for s in self.states() {
            out.push(&f(s))?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_and_segments() {
        let t = Trajectory::from_states(&[vec![1.0, 0.0], vec![3.0, 0.0], vec![5.0, 3.0]]).unwrap();
        assert_eq!(t.len(), 3);
        let (mean, sd) = t.component_stats();
        assert_eq!(mean, vec![3.0, 1.0]);
        assert!((sd[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert_eq!(t.segment(1..3).state(0), &[3.0, 0.0]);
        assert!(Trajectory::<f64>::from_flat(2, vec![1.0; 3]).is_err());
    }
}
