use poisfactor::simulation::{generate, SimDesign};
use poisfactor::{enumerate_partitions, fit_model, FitOptions, ModelPartition};
use proptest::prelude::*;

fn design(p: ModelPartition, trunc: Option<u32>, seed: u64) -> SimDesign {
    SimDesign {
        trunc_bound: trunc,
        ..SimDesign::standard(p, 60, 1, seed)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // Relabelling variables in both the data and the partition leaves the
    // maximized likelihood unchanged.
    #[test]
    fn loglik_is_permutation_invariant(
        perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
        which in 0usize..15,
        truncated in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let p = enumerate_partitions(4).unwrap()[which].clone();
        let trunc = truncated.then_some(3);
        let data = generate(&design(p.clone(), trunc, seed), 0).unwrap();
        let opts = FitOptions::default();
        let a = fit_model(&data, &p, &opts).unwrap();
        let b = fit_model(&data.permute_columns(&perm).unwrap(), &p.permute(&perm).unwrap(), &opts).unwrap();
        prop_assert!((a.loglik - b.loglik).abs() < 1e-9 * a.loglik.abs().max(1.0), "{} vs {}", a.loglik, b.loglik);
    }

    #[test]
    fn successors_merge_exactly_one_pair(which in 0usize..52) {
        let p = enumerate_partitions(5).unwrap()[which].clone();
        let k = p.n_groups();
        let next = p.successor_models();
        prop_assert_eq!(next.len(), k * (k.saturating_sub(1)) / 2);
        for q in &next {
            prop_assert_eq!(q.n_groups(), k - 1);
            let coarser = p.groups().iter().all(|h| q.groups().iter().any(|g| h.iter().all(|v| g.contains(v))));
            prop_assert!(coarser);
        }
    }

    #[test]
    fn partition_display_round_trips(which in 0usize..203) {
        let p = enumerate_partitions(6).unwrap()[which].clone();
        prop_assert_eq!(ModelPartition::parse_with_dim(&p.to_string(), 6).unwrap(), p);
    }
}
