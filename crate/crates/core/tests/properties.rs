use std::sync::Arc;

use proptest::prelude::*;
use varda_core::ad::{
    ComplexDiagonal, Compose, CsrMap, CyclicShift, DenseMap, Diagonal, Fft2, LinearMap, RealEmbed,
    RealPart, Selection, SharedMap,
};
use varda_core::assim::GaussianDiag;
use varda_core::data::DatasetSplit;
use varda_core::metrics::{paired_t_test, rmse_state};
use varda_core::obsgen::{draw_network, sample_obs};
use varda_core::Trajectory;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn adjoint_gap(map: &dyn LinearMap<f64>, v: &[f64], w: &[f64]) -> f64 {
    let lhs = dot(&map.apply_vec(v), w);
    let rhs = dot(v, &map.apply_adjoint_vec(w));
    (lhs - rhs).abs() / (1.0 + lhs.abs().max(rhs.abs()))
}

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    #[test]
    fn dense_and_sparse_maps_satisfy_adjoint_identity(
        (rows, cols, data, v, w) in (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), vec_of(r * c), vec_of(c), vec_of(r))
        })
    ) {
        let dense = DenseMap::new(rows, cols, data.clone());
        prop_assert!(adjoint_gap(&dense, &v, &w) < 1e-12);
        let triplets: Vec<_> = data.iter().enumerate()
            .filter(|(k, _)| k % 3 != 0)
            .map(|(k, &x)| (k / cols, k % cols, x))
            .collect();
        let sparse = CsrMap::from_triplets(rows, cols, triplets);
        prop_assert!(adjoint_gap(&sparse, &v, &w) < 1e-12);
    }

    #[test]
    fn structural_maps_satisfy_adjoint_identity(
        (n, v, w, shift, d) in (2usize..20).prop_flat_map(|n| {
            (Just(n), vec_of(n), vec_of(n), -25isize..25, vec_of(n))
        })
    ) {
        prop_assert!(adjoint_gap(&CyclicShift::new(n, shift), &v, &w) < 1e-12);
        prop_assert!(adjoint_gap(&Diagonal(d.clone()), &v, &w) < 1e-12);
        let idx: Vec<usize> = (0..n).step_by(2).collect();
        let sel = Selection::new(n, idx.clone());
        prop_assert!(adjoint_gap(&sel, &v, &w[..idx.len()]) < 1e-12);
        let chain = Compose::new(vec![
            Arc::new(CyclicShift::new(n, shift)) as SharedMap<f64>,
            Arc::new(Diagonal(d)),
            Arc::new(Selection::new(n, idx.clone())),
        ]);
        prop_assert!(adjoint_gap(&chain, &v, &w[..idx.len()]) < 1e-12);
    }

    #[test]
    fn spectral_maps_satisfy_adjoint_identity(
        (nx, ny, seed) in (2usize..7, 2usize..7, any::<u64>())
    ) {
        let n = 2 * nx * ny;
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let v: Vec<f64> = (0..n).map(|_| next()).collect();
        let vc: Vec<f64> = (0..2 * n).map(|_| next()).collect();
        let wc: Vec<f64> = (0..2 * n).map(|_| next()).collect();
        let fwd = Fft2::<f64>::forward(nx, ny, 2);
        let inv = Fft2::<f64>::inverse(nx, ny, 2);
        prop_assert!(adjoint_gap(&fwd, &vc, &wc) < 1e-10);
        prop_assert!(adjoint_gap(&inv, &vc, &wc) < 1e-10);
        prop_assert!(adjoint_gap(&RealEmbed(n), &v, &wc) < 1e-12);
        prop_assert!(adjoint_gap(&RealPart(n), &vc, &v) < 1e-12);
        let diag: Vec<_> = (0..n).map(|_| rustfft::num_complex::Complex::new(next(), next())).collect();
        prop_assert!(adjoint_gap(&ComplexDiagonal(diag), &vc, &wc) < 1e-12);
    }

    #[test]
    fn rmse_is_permutation_invariant(
        (a, b, perm) in (1usize..30).prop_flat_map(|n| {
            (vec_of(n), vec_of(n), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let pa: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        prop_assert!((rmse_state(&a, &b) - rmse_state(&pa, &pb)).abs() < 1e-12);
        prop_assert!((rmse_state(&a, &b) - rmse_state(&b, &a)).abs() < 1e-15);
        prop_assert!(rmse_state(&a, &a) == 0.0);
    }

    #[test]
    fn t_test_is_antisymmetric(
        (x, y) in (2usize..30).prop_flat_map(|n| (vec_of(n), vec_of(n)))
    ) {
        let xy = paired_t_test(&x, &y, 0.05).unwrap();
        let yx = paired_t_test(&y, &x, 0.05).unwrap();
        prop_assert!((xy.t + yx.t).abs() < 1e-9 * (1.0 + xy.t.abs()) || (xy.degenerate && yx.degenerate));
        prop_assert!((xy.p - yx.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&xy.p));
    }

    #[test]
    fn splits_are_contiguous(train in 0usize..500, val in 1usize..500, transient in 0usize..500, test in 1usize..500) {
        let s = DatasetSplit::from_lengths(train, val, transient, test);
        prop_assert!(s.validate().is_ok());
        prop_assert_eq!(s.train.end, s.validation.start);
        prop_assert_eq!(s.validation.end, s.transient.start);
        prop_assert_eq!(s.transient.end, s.test.start);
        prop_assert_eq!(s.total(), train + val + transient + test);
    }

    #[test]
    fn networks_are_sorted_unique_and_reproducible(dim in 1usize..200, frac in 0.01f64..1.0, seed in any::<u64>()) {
        let n_obs = ((dim as f64 * frac).ceil() as usize).clamp(1, dim);
        let net = draw_network(dim, n_obs, 1, 0.1, seed).unwrap();
        prop_assert_eq!(net.indices.len(), n_obs);
        prop_assert!(net.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*net.indices.last().unwrap() < dim);
        prop_assert_eq!(net, draw_network(dim, n_obs, 1, 0.1, seed).unwrap());
    }

    #[test]
    fn same_window_gives_same_batch(seed in any::<u64>(), window in 0u64..1000, every_k in 1usize..5) {
        let dim = 10;
        let nature = Trajectory::from_flat(dim, (0..dim * 21).map(|k| k as f64).collect()).unwrap();
        let net = draw_network(dim, 4, every_k, 0.3, seed).unwrap();
        let r = GaussianDiag::uniform(4, 0.09).unwrap();
        let a = sample_obs(&nature, &net, 5, 10, window, r.clone()).unwrap();
        let b = sample_obs(&nature, &net, 5, 10, window, r.clone()).unwrap();
        prop_assert_eq!(&a.values, &b.values);
        let c = sample_obs(&nature, &net, 5, 10, window + 1, r).unwrap();
        prop_assert_ne!(&a.values, &c.values);
    }
}
