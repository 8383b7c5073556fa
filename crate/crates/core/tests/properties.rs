mod common;

use proptest::prelude::*;
use scaleprune_core::flops::flop_count;
use scaleprune_core::recovery::nearest_assignment;
use scaleprune_core::scoring::top_k;
use scaleprune_core::{
    avg_pool_3x3, center_tokens, gather_tokens, keep_count, nn_propagate, FeatureGrid, ModelConfig,
    PruneSpec, ScaleSchedule, Strategy as Pruning,
};

use common::{brute_voronoi, sort_select};

fn grid_strategy(max_side: usize, max_c: usize) -> impl Strategy<Value = FeatureGrid> {
    (1..=max_side, 1..=max_side, 1..=max_c).prop_flat_map(|(h, w, c)| {
        prop::collection::vec(-10.0f64..10.0, h * w * c).prop_map(move |v| {
            FeatureGrid::from_fn(1, h, w, c, |(_, l, ch)| v[l * c + ch]).unwrap()
        })
    })
}

fn kept_strategy(max_side: usize) -> impl Strategy<Value = (usize, usize, Vec<usize>)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::sample::subsequence((0..h * w).collect::<Vec<_>>(), 1..=h * w)
            .prop_map(move |k| (h, w, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn centering_is_idempotent(x in grid_strategy(8, 4)) {
        let once = center_tokens(&x);
        let twice = center_tokens(&once);
        for (a, b) in once.data().iter().zip(twice.data().iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn pooling_commutes_with_shift(x in grid_strategy(8, 3), shift in -5.0f64..5.0) {
        let a = avg_pool_3x3(&x.map(|v| v + shift).unwrap());
        let b = avg_pool_3x3(&x);
        for (p, q) in a.data().iter().zip(b.data().iter()) {
            prop_assert!((p - q - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn gather_all_is_identity(x in grid_strategy(8, 3)) {
        let all: Vec<usize> = (0..x.tokens()).collect();
        let s = gather_tokens(&x, &[all]).unwrap();
        prop_assert_eq!(s.data(), x.data());
        prop_assert_eq!(nn_propagate(&s).unwrap(), x);
    }

    #[test]
    fn nn_assignment_is_voronoi((h, w, kept) in kept_strategy(12)) {
        let assign = nearest_assignment(h, w, &kept).unwrap();
        prop_assert_eq!(&assign, &brute_voronoi(h, w, &kept));
        // kept positions map to themselves
        for (j, &i) in kept.iter().enumerate() {
            prop_assert_eq!(assign[i], j);
        }
    }

    #[test]
    fn nn_propagation_is_a_projection((h, w, kept) in kept_strategy(10)) {
        let x = FeatureGrid::from_fn(1, h, w, 2, |(_, l, c)| (l * 2 + c) as f64).unwrap();
        let once = nn_propagate(&gather_tokens(&x, &[kept.clone()]).unwrap()).unwrap();
        let twice = nn_propagate(&gather_tokens(&once, &[kept.clone()]).unwrap()).unwrap();
        prop_assert_eq!(&once, &twice);
        for &i in &kept {
            prop_assert_eq!(once.token(0, i), x.token(0, i));
        }
    }

    #[test]
    fn enlarging_kept_set_never_moves_a_cell_farther(
        (h, w, kept) in kept_strategy(10),
        extra in 0usize..100,
    ) {
        let l = h * w;
        let mut bigger = kept.clone();
        let add = extra % l;
        if !bigger.contains(&add) {
            bigger.push(add);
            bigger.sort();
        }
        let dist = |set: &[usize]| -> Vec<usize> {
            let a = nearest_assignment(h, w, set).unwrap();
            (0..l).map(|i| {
                let j = set[a[i]];
                let (dr, dc) = ((i / w).abs_diff(j / w), (i % w).abs_diff(j % w));
                dr * dr + dc * dc
            }).collect()
        };
        for (d_small, d_big) in dist(&kept).iter().zip(dist(&bigger)) {
            prop_assert!(d_big <= *d_small);
        }
    }

    #[test]
    fn top_k_matches_full_sort(
        scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.0, 3.25]), 1..=256),
        frac in 0.0f64..1.0,
    ) {
        let k = ((scores.len() as f64 * frac) as usize).max(1);
        let arr = ndarray::Array1::from(scores.clone());
        prop_assert_eq!(top_k(arr.view(), k), sort_select(&scores, k));
    }

    #[test]
    fn keep_count_matches_integer_formula(tenths in 0u32..10, l in 1usize..=4096) {
        let k = keep_count(tenths as f64 / 10.0, l).unwrap();
        prop_assert_eq!(k, (((10 - tenths) as usize * l) / 10).max(1));
    }

    #[test]
    fn flops_monotone_in_ratio(a in 0u32..=10, b in 0u32..=10) {
        let (lo, hi) = (a.min(b) as f64 / 10.0, a.max(b) as f64 / 10.0);
        let cfg = ModelConfig::default();
        let at = |r: f64| {
            let s = ScaleSchedule::default_toy()
                .with_last_ratios(&[r, r], PruneSpec::new(Pruning::StructureTexture, 0.0))
                .unwrap();
            flop_count(&s, &cfg).unwrap().total
        };
        prop_assert!(at(hi) <= at(lo));
    }
}
