//! Linear primitives: maps with an analytically known adjoint.
//!
//! A [`LinearMap`] enters the tape as a single node. Its tangent rule is the
//! map itself and its cotangent rule is the adjoint, so large structured
//! operators (selections, FFTs, sparse matrices) never get traced element by
//! element.

use std::sync::Arc;

use crate::scalar::Scalar;

pub trait LinearMap<T: Scalar>: Send + Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;

    /// `out = A x`. `out` is overwritten.
    fn apply(&self, x: &[T], out: &mut [T]);

    /// `out = Aᵀ y`. `out` is overwritten.
    fn apply_adjoint(&self, y: &[T], out: &mut [T]);

    fn name(&self) -> &'static str {
        "linear"
    }

    fn apply_vec(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.output_len()];
        self.apply(x, &mut out);
        out
    }

    fn apply_adjoint_vec(&self, y: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.input_len()];
        self.apply_adjoint(y, &mut out);
        out
    }
}

pub type SharedMap<T> = Arc<dyn LinearMap<T>>;

/// The transpose of another map.
pub struct Adjoint<T: Scalar>(pub SharedMap<T>);

impl<T: Scalar> LinearMap<T> for Adjoint<T> {
    fn input_len(&self) -> usize {
        self.0.output_len()
    }
    fn output_len(&self) -> usize {
        self.0.input_len()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        self.0.apply_adjoint(x, out)
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        self.0.apply(y, out)
    }
    fn name(&self) -> &'static str {
        "adjoint"
    }
}

/// Dense row-major matrix as a linear map.
#[derive(Clone, Debug)]
pub struct DenseMap<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMap<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "dense map storage size");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

impl<T: Scalar> LinearMap<T> for DenseMap<T> {
    fn input_len(&self) -> usize {
        self.cols
    }
    fn output_len(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = crate::scalar::dot(row, x);
        }
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            crate::scalar::axpy(yi, row, out);
        }
    }
    fn name(&self) -> &'static str {
        "dense"
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct CsrMap<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMap<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&mut self, factor: T) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            d[r * self.cols + c] += v;
        }
        d
    }
}

impl<T: Scalar> LinearMap<T> for CsrMap<T> {
    fn input_len(&self) -> usize {
        self.cols
    }
    fn output_len(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (r, &yr) in y.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[k]] += self.values[k] * yr;
            }
        }
    }
    fn name(&self) -> &'static str {
        "csr"
    }
}

/// Gathers `indices` out of a vector of length `input_len`. The adjoint scatters.
#[derive(Clone, Debug)]
pub struct Selection {
    input_len: usize,
    indices: Vec<usize>,
}

impl Selection {
    pub fn new(input_len: usize, indices: Vec<usize>) -> Self {
        assert!(
            indices.iter().all(|&i| i < input_len),
            "selection index out of range"
        );
        Self { input_len, indices }
    }

    pub fn range(input_len: usize, start: usize, len: usize) -> Self {
        Self::new(input_len, (start..start + len).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl<T: Scalar> LinearMap<T> for Selection {
    fn input_len(&self) -> usize {
        self.input_len
    }
    fn output_len(&self) -> usize {
        self.indices.len()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        for (o, &i) in out.iter_mut().zip(&self.indices) {
            *o = x[i];
        }
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (&yi, &i) in y.iter().zip(&self.indices) {
            out[i] += yi;
        }
    }
    fn name(&self) -> &'static str {
        "selection"
    }
}

/// Elementwise scaling by a fixed vector.
#[derive(Clone, Debug)]
pub struct Diagonal<T>(pub Vec<T>);

impl<T: Scalar> LinearMap<T> for Diagonal<T> {
    fn input_len(&self) -> usize {
        self.0.len()
    }
    fn output_len(&self) -> usize {
        self.0.len()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        for ((o, &xi), &d) in out.iter_mut().zip(x).zip(&self.0) {
            *o = d * xi;
        }
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        self.apply(y, out)
    }
    fn name(&self) -> &'static str {
        "diagonal"
    }
}

/// `out[k] = x[(k + offset) mod n]`, i.e. `offset = -1` reads the left neighbour.
#[derive(Clone, Copy, Debug)]
pub struct CyclicShift {
    len: usize,
    offset: isize,
}

impl CyclicShift {
    pub fn new(len: usize, offset: isize) -> Self {
        assert!(len > 0);
        Self { len, offset }
    }

    #[inline]
    fn source(&self, k: usize) -> usize {
        (k as isize + self.offset).rem_euclid(self.len as isize) as usize
    }
}

impl<T: Scalar> LinearMap<T> for CyclicShift {
    fn input_len(&self) -> usize {
        self.len
    }
    fn output_len(&self) -> usize {
        self.len
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = x[self.source(k)];
        }
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        for (k, &yk) in y.iter().enumerate() {
            out[self.source(k)] = yk;
        }
    }
    fn name(&self) -> &'static str {
        "cyclic-shift"
    }
}

/// `maps[last] ∘ … ∘ maps[0]`: the first entry is applied first.
pub struct Compose<T: Scalar> {
    maps: Vec<SharedMap<T>>,
}

impl<T: Scalar> Compose<T> {
    pub fn new(maps: Vec<SharedMap<T>>) -> Self {
        assert!(!maps.is_empty());
        for w in maps.windows(2) {
            assert_eq!(
                w[0].output_len(),
                w[1].input_len(),
                "composition of {} into {}",
                w[0].name(),
                w[1].name()
            );
        }
        Self { maps }
    }
}

impl<T: Scalar> LinearMap<T> for Compose<T> {
    fn input_len(&self) -> usize {
        self.maps[0].input_len()
    }
    fn output_len(&self) -> usize {
        self.maps.last().unwrap().output_len()
    }
    fn apply(&self, x: &[T], out: &mut [T]) {
        let mut cur = x.to_vec();
        let (last, init) = self.maps.split_last().unwrap();
        for m in init {
            cur = m.apply_vec(&cur);
        }
        last.apply(&cur, out);
    }
    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        let mut cur = y.to_vec();
        let (first, rest) = self.maps.split_first().unwrap();
        for m in rest.iter().rev() {
            cur = m.apply_adjoint_vec(&cur);
        }
        first.apply_adjoint(&cur, out);
    }
    fn name(&self) -> &'static str {
        "compose"
    }
}

/// Materialises a map as a dense row-major matrix by probing unit vectors.
pub fn to_dense<T: Scalar>(map: &dyn LinearMap<T>) -> Vec<T> {
    let (m, n) = (map.output_len(), map.input_len());
    let mut dense = vec![T::zero(); m * n];
    let mut e = vec![T::zero(); n];
    let mut col = vec![T::zero(); m];
    for j in 0..n {
        e[j] = T::one();
        map.apply(&e, &mut col);
        for i in 0..m {
            dense[i * n + j] = col[i];
        }
        e[j] = T::zero();
    }
    dense
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot_test(map: &dyn LinearMap<f64>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let x = random_vec(&mut rng, map.input_len());
            let v = random_vec(&mut rng, map.output_len());
            let lhs = crate::scalar::dot(&map.apply_vec(&x), &v);
            let rhs = crate::scalar::dot(&x, &map.apply_adjoint_vec(&v));
            assert!(
                (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()),
                "{}: {lhs} vs {rhs}",
                map.name()
            );
        }
    }

    #[test]
    fn adjoint_identity_holds_for_every_primitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dense = DenseMap::new(4, 6, random_vec(&mut rng, 24));
        let csr = CsrMap::from_triplets(
            5,
            5,
            vec![
                (0, 1, 0.5),
                (2, 2, -1.0),
                (4, 0, 2.0),
                (4, 0, 1.0),
                (3, 4, 0.25),
            ],
        );
        let sel = Selection::new(7, vec![1, 3, 6]);
        let diag = Diagonal(vec![1.0, -2.0, 3.0]);
        let shift = CyclicShift::new(6, -2);
        let composed: Compose<f64> = Compose::new(vec![
            Arc::new(CyclicShift::new(7, 1)) as SharedMap<f64>,
            Arc::new(sel.clone()),
            Arc::new(Diagonal(vec![2.0, 0.5, -1.0])),
        ]);
        dot_test(&dense, 1);
        dot_test(&csr, 2);
        dot_test(&sel, 3);
        dot_test(&diag, 4);
        dot_test(&shift, 5);
        dot_test(&composed, 6);
        dot_test(&Adjoint(Arc::new(dense.clone())), 7);
    }

    #[test]
    fn csr_sums_duplicates_and_matches_dense() {
        let csr = CsrMap::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(csr.nnz(), 2);
        assert_eq!(csr.to_dense(), vec![3.0, 0.0, 4.0, 0.0]);
        assert_eq!(to_dense(&csr), csr.to_dense());
    }

    #[test]
    fn cyclic_shift_reads_neighbours() {
        let s = CyclicShift::new(4, -1);
        assert_eq!(s.apply_vec(&[1.0, 2.0, 3.0, 4.0]), vec![4.0, 1.0, 2.0, 3.0]);
        let s = CyclicShift::new(4, 2);
        assert_eq!(s.apply_vec(&[1.0, 2.0, 3.0, 4.0]), vec![3.0, 4.0, 1.0, 2.0]);
    }
}
