use proptest::prelude::*;

use protodiv::diversity::psi;
use protodiv::ndgrad::Tensor;
use protodiv::objective::{pdl, PdlVariant};

fn counts_strategy() -> impl Strategy<Value = (Vec<usize>, usize)> {
    (1usize..7).prop_flat_map(|bins| {
        (prop::collection::vec(0usize..6, bins), Just(bins))
            .prop_filter("m > 0", |(c, _)| c.iter().sum::<usize>() > 0)
    })
}

proptest! {
    #[test]
    fn psi_ignores_bin_order((counts, bins) in counts_strategy(), rot in 0usize..6) {
        let m: usize = counts.iter().sum();
        let mut shuffled = counts.clone();
        shuffled.rotate_left(rot % counts.len());
        shuffled.reverse();
        let a = psi(&counts, m, bins).unwrap();
        let b = psi(&shuffled, m, bins).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn spreading_never_lowers_psi((counts, bins) in counts_strategy(), from in 0usize..6, to in 0usize..6) {
        let m: usize = counts.iter().sum();
        let (from, to) = (from % bins, to % bins);
        prop_assume!(counts[from] > counts[to]);
        let mut moved = counts.clone();
        moved[from] -= 1;
        moved[to] += 1;
        prop_assert!(psi(&moved, m, bins).unwrap() >= psi(&counts, m, bins).unwrap() - 1e-12);
    }

    #[test]
    fn psi_is_at_most_one((counts, bins) in counts_strategy()) {
        let m: usize = counts.iter().sum();
        let v = psi(&counts, m, bins).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0 + 1e-12);
    }

    #[test]
    fn pdl_does_not_grow_under_dilation(
        data in prop::collection::vec(-3.0f64..3.0, 12),
        scale in 1.0f64..10.0,
    ) {
        let p = Tensor::matrix(4, 3, data.clone()).unwrap();
        let wider = Tensor::matrix(4, 3, data.iter().map(|v| v * scale).collect()).unwrap();
        let before = pdl(&p, 1e-6, PdlVariant::Shifted).unwrap();
        let after = pdl(&wider, 1e-6, PdlVariant::Shifted).unwrap();
        prop_assert!(before > 0.0 && before <= 1e6);
        prop_assert!(after <= before * (1.0 + 1e-12));
    }

    #[test]
    fn pdl_decreases_with_mean_nearest_distance(
        a in prop::collection::vec(-3.0f64..3.0, 12),
        b in prop::collection::vec(-3.0f64..3.0, 12),
    ) {
        let (p, q) = (Tensor::matrix(4, 3, a).unwrap(), Tensor::matrix(4, 3, b).unwrap());
        let (dp, dq) = (mean_nearest(&p), mean_nearest(&q));
        prop_assume!((dp - dq).abs() > 1e-9);
        let (lp, lq) = (pdl(&p, 1e-6, PdlVariant::Shifted).unwrap(), pdl(&q, 1e-6, PdlVariant::Shifted).unwrap());
        prop_assert_eq!(dq > dp, lq < lp);
    }
}

fn mean_nearest(t: &Tensor) -> f64 {
    let m = t.rows();
    let mut total = 0.0;
    for j in 0..m {
        let mut best = f64::INFINITY;
        for i in 0..m {
            if i != j {
                let d: f64 = t
                    .row(i)
                    .iter()
                    .zip(t.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.min(d);
            }
        }
        total += best;
    }
    total / m as f64
}
