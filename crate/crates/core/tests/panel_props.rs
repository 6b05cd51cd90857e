use nalgebra::DMatrix;
use panelfill_core::{build_locators, destandardize, standardize, PanelMatrix, TransformMode};
use proptest::prelude::*;

fn panel_strategy() -> impl Strategy<Value = PanelMatrix> {
    (2usize..9, 2usize..9).prop_flat_map(|(t, n)| {
        (
            proptest::collection::vec(-50.0f64..50.0, t * n),
            proptest::collection::vec(proptest::bool::weighted(0.8), t * n),
        )
            .prop_map(move |(v, m)| {
                let mut mask = DMatrix::from_vec(t, n, m);
                // keep at least two observations per series
                for i in 0..n {
                    mask[(0, i)] = true;
                    mask[(1, i)] = true;
                }
                PanelMatrix::new(DMatrix::from_vec(t, n, v), mask).unwrap()
            })
    })
}

proptest! {
    #[test]
    fn count_identities(p in panel_strategy()) {
        let loc = build_locators(&p);
        let total = p.observed_count();
        prop_assert_eq!(loc.n_ot.iter().sum::<usize>(), total);
        prop_assert_eq!(loc.t_oi.iter().sum::<usize>(), total);
        prop_assert!(loc.n_o <= *loc.n_ot.iter().min().unwrap());
        prop_assert!(loc.t_o <= *loc.t_oi.iter().min().unwrap());
        prop_assert_eq!(build_locators(&p), loc);
    }

    #[test]
    fn permutation_equivariance(p in panel_strategy(), shift in 0usize..8) {
        let n = p.n();
        let perm: Vec<usize> = (0..n).map(|k| (k + shift) % n).collect();
        let q = PanelMatrix::new(p.values().select_columns(perm.iter()), p.mask().select_columns(perm.iter())).unwrap();
        let a = build_locators(&p);
        let b = build_locators(&q);
        for (k, &src) in perm.iter().enumerate() {
            prop_assert_eq!(b.t_oi[k], a.t_oi[src]);
        }
    }

    #[test]
    fn standardize_round_trip(p in panel_strategy()) {
        for mode in [TransformMode::Raw, TransformMode::Demean, TransformMode::Standardize] {
            let Ok((s, rec)) = standardize(&p, mode) else { continue };
            let back = destandardize(&s, &rec).unwrap();
            for i in 0..p.n() {
                for t in 0..p.t() {
                    if let Some(x) = p.get(t, i) {
                        let y = back.get(t, i).unwrap();
                        prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
                    }
                }
            }
        }
    }
}
