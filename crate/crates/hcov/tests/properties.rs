//! Property tests of the structural invariants: permutation bijectivity,
//! leaf partitioning, admissibility symmetry, and kernel bounds.

use std::sync::Arc;

use proptest::prelude::*;

use hcov::geometry::{
    build_block_cluster_tree, build_cluster_tree, is_admissible, BoundingBox, PermDirection,
    PointSet,
};
use hcov::kernel::{matern_cov, MaternParams};

fn point_set_strategy(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-5.0..5.0f64, 2),
        1..max_n,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutations_are_mutually_inverse_bijections(
        pts in point_set_strategy(120),
        n_min in 1usize..16,
    ) {
        let ps = PointSet::new(&pts).unwrap();
        let n = ps.len();
        let ct = build_cluster_tree(&ps, n_min).unwrap();

        let mut seen = vec![false; n];
        for e in 0..n {
            let i = ct.perm_e2i()[e];
            prop_assert!(i < n);
            prop_assert!(!seen[i]);
            seen[i] = true;
            prop_assert_eq!(ct.perm_i2e()[i], e);
        }

        let data: Vec<f64> = (0..n).map(|i| i as f64 * 1.37 - 3.0).collect();
        let fwd = ct.apply_permutation(&data, PermDirection::E2I).unwrap();
        let back = ct.apply_permutation(&fwd, PermDirection::I2E).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn block_leaves_partition_the_product(
        pts in point_set_strategy(80),
        n_min in 1usize..12,
        eta in 0.5..4.0f64
    ) {
        let ps = PointSet::new(&pts).unwrap();
        let n = ps.len();
        let ct = Arc::new(build_cluster_tree(&ps, n_min).unwrap());
        let bct = build_block_cluster_tree(&ct, eta);
        let mut area = 0usize;
        for id in bct.leaves() {
            area += bct.row_range(id).len() * bct.col_range(id).len();
        }
        prop_assert_eq!(area, n * n);
    }

    #[test]
    fn admissibility_is_symmetric(
        a_lo in prop::collection::vec(-5.0..5.0f64, 2),
        a_ext in prop::collection::vec(0.0..3.0f64, 2),
        b_lo in prop::collection::vec(-5.0..5.0f64, 2),
        b_ext in prop::collection::vec(0.0..3.0f64, 2),
        eta in 0.1..5.0f64
    ) {
        let a_hi: Vec<f64> = a_lo.iter().zip(&a_ext).map(|(l, e)| l + e).collect();
        let b_hi: Vec<f64> = b_lo.iter().zip(&b_ext).map(|(l, e)| l + e).collect();
        let a = BoundingBox::new(a_lo, a_hi).unwrap();
        let b = BoundingBox::new(b_lo, b_hi).unwrap();
        prop_assert_eq!(is_admissible(&a, &b, eta), is_admissible(&b, &a, eta));
    }

    #[test]
    fn matern_stays_within_its_bounds(
        h in 0.0..50.0f64,
        sigma2 in 0.05..10.0f64,
        ell in 0.05..5.0f64,
        nu_choice in 0usize..3
    ) {
        let nu = [0.5, 1.5, 2.5][nu_choice];
        let p = MaternParams::with_nugget(sigma2, ell, nu, 0.0).unwrap();
        let c = matern_cov(h, &p);
        // positive until the exponential tail underflows in f64
        let scaled = (2.0 * nu).sqrt() * h / ell;
        prop_assert!(c > 0.0 || scaled > 700.0, "vanished early at h={h}");
        prop_assert!(c <= sigma2 * (1.0 + 1e-12));
    }
}
