use brwlab::brw_engine::{
    evolve, minimum_tail_direct, run_tree, Caps, Frontier, PruneLedger, PrunePolicy,
};
use brwlab::experiments::exp_limit_law;
use brwlab::offspring::{ChildCountLaw, DisplacementLaw, ModelSpec};
use brwlab::rw_kit::{build_ladder_table, derive_walk, LadderOptions, RenewalFunction, Side};
use brwlab::spine_engine::{barrier_dk, killed_cumulative_tail, run_spine_path, PathConstraint};
use brwlab::stats::{central_binomial_prob, ks_one_sample, Moments};
use brwlab::{Executor, PointProcessModel, SeedRecord};
use proptest::prelude::*;
use std::sync::OnceLock;

fn binary() -> PointProcessModel {
    PointProcessModel::binary_gaussian()
}

fn renewal() -> &'static RenewalFunction {
    static R: OnceLock<RenewalFunction> = OnceLock::new();
    R.get_or_init(|| {
        let walk = derive_walk(&binary()).unwrap();
        let exec = Executor::sequential();
        let seed = SeedRecord::new(5);
        let opts = LadderOptions {
            step_cap: 1_000_000,
            ..LadderOptions::default()
        };
        let t = build_ladder_table(&walk, 20_000, &opts, &seed, &exec).unwrap();
        RenewalFunction::build(&t, Side::Plus, 40.0, 0.05, 20_000, &seed, &exec).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_statistics_are_pathwise_consistent(seed in any::<u64>(), n in 0usize..9, beta in 0.0f64..4.0) {
        let s = run_tree(&binary(), n, beta, &PrunePolicy::none(), Some(renewal()), &Caps::default(), &mut SeedRecord::new(seed).rng(0)).unwrap();
        prop_assert_eq!(s.population, 1u64 << n);
        prop_assert!(s.m_n <= s.m_n_kill);
        prop_assert!(s.w_n > 0.0);
        prop_assert!(s.d_n_beta >= 0.0);
        prop_assert!(s.argmin_count >= 1);
    }

    #[test]
    fn frontier_invariants_survive_evolution(seed in any::<u64>(), steps in 1usize..8, beta in 0.0f64..3.0, offset in 0.0f64..6.0) {
        let m = binary();
        let mut rng = SeedRecord::new(seed).rng(1);
        let mut f = Frontier::root(0.0, beta);
        let mut ledger = PruneLedger::default();
        let policy = PrunePolicy::barrier(offset);
        for _ in 0..steps {
            f = evolve(&f, &m, &policy, steps, &Caps::default(), &mut ledger, &mut rng).unwrap();
            prop_assert!(f.is_consistent());
            let cut = policy.cutoff(steps);
            prop_assert!(f.positions.iter().all(|&x| x <= cut));
        }
        prop_assert!(ledger.mass >= 0.0);
    }

    #[test]
    fn killed_tail_ordered_below_full_tail(seed in any::<u64>(), n in 2usize..8) {
        let t = minimum_tail_direct(&binary(), n, &[-1.0, 0.0, 1.0], 400, &PrunePolicy::none(), &Caps::default(), &SeedRecord::new(seed), &Executor::sequential()).unwrap();
        for r in &t.rows {
            let (k, f) = (r.p_kill.as_ref().unwrap(), r.p_full.as_ref().unwrap());
            prop_assert!(k.value <= f.value);
            prop_assert!(r.p_kill_window.as_ref().unwrap().value <= k.value);
        }
        let full: Vec<f64> = t.rows.iter().map(|r| r.p_full.as_ref().unwrap().value).collect();
        prop_assert!(full.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constrained_paths_are_admitted_unconstrained(seed in any::<u64>(), n in 2usize..30, z in 0.0f64..3.0, l in 0.0f64..2.0) {
        let real = run_spine_path(&binary(), n, &mut SeedRecord::new(seed).rng(0)).unwrap();
        let path = &real.spine_positions;
        if PathConstraint::zzl(n, z, l).admits(path) {
            prop_assert!(PathConstraint::none(n, z).admits(path));
        }
        let d: Vec<f64> = (0..=n).map(|k| barrier_dk(n, z + l, 0.5, k)).collect();
        prop_assert!(d.iter().all(|&x| x >= 0.0));
        prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn killed_cumulative_tail_is_monotone(seed in any::<u64>()) {
        let r = killed_cumulative_tail(&binary(), 6, &[0.0, 0.5, 1.0, 2.0, 3.0], 300, &PrunePolicy::none(), &Caps::default(), &SeedRecord::new(seed), &Executor::sequential()).unwrap();
        prop_assert!(r.rows.windows(2).all(|w| w[1].p.value <= w[0].p.value));
        for row in &r.rows {
            let total: f64 = row.windows.iter().map(|w| w.value).sum();
            prop_assert!((total - row.p.value).abs() <= 1e-9 * (1.0 + row.p.value));
        }
    }

    #[test]
    fn renewal_function_is_non_decreasing(x in 0.0f64..60.0, dx in 0.0f64..5.0) {
        let r = renewal();
        prop_assert!(r.eval(0.0) >= 1.0);
        prop_assert!(r.eval(x) <= r.eval(x + dx));
    }

    #[test]
    fn survival_curves_are_monotone_and_bounded(seed in any::<u64>()) {
        let grid: Vec<f64> = (-6..=6).map(f64::from).collect();
        let r = exp_limit_law(&binary(), 6, &grid, 40, &PrunePolicy::none(), &Caps::default(), &SeedRecord::new(seed), &Executor::sequential()).unwrap();
        for curve in [&r.empirical_survival, &r.mixture_prediction] {
            if curve.iter().any(|p| p.is_nan()) {
                prop_assert!(r.flagged);
                continue;
            }
            prop_assert!(curve.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn worker_count_never_changes_a_campaign(seed in any::<u64>(), total in 1u64..3000, chunk in 1u64..500, workers in 2usize..6) {
        let body = |acc: &mut Moments, i: u64, rng: &mut brwlab::SimRng| {
            let s = run_tree(&binary(), 3, 0.0, &PrunePolicy::none(), None, &Caps::default(), rng)?;
            acc.push(s.w_n + i as f64);
            Ok(())
        };
        let seed = SeedRecord::new(seed);
        let a = Executor::sequential().run(total, chunk, &seed, Moments::new, body).unwrap().acc;
        let b = Executor::new(workers).unwrap().run(total, chunk, &seed, Moments::new, body).unwrap().acc;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn seed_derivation_is_a_function_of_labels(master in any::<u64>(), label in "[a-z]{1,8}", i in any::<u64>()) {
        let s = SeedRecord::new(master);
        prop_assert_eq!(s.derive(&label).derive_index(i), s.derive(&label).derive_index(i));
        prop_assert_ne!(s.derive(&label), s.derive(&format!("{label}x")));
    }

    #[test]
    fn ks_p_value_is_a_probability(xs in proptest::collection::vec(0.0f64..1.0, 1..300)) {
        let r = ks_one_sample(&xs, |x| x);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert!((0.0..=1.0).contains(&r.statistic));
    }

    #[test]
    fn decimal_parameters_round_trip_into_the_hash(mean in 0.1f64..5.0) {
        let s = format!("{mean}");
        let a = ModelSpec::builtin("poisson-gaussian").with_param("mean_extra", &s).build().unwrap();
        let b = ModelSpec::builtin("poisson-gaussian").with_param("mean_extra", &s).build().unwrap();
        prop_assert_eq!(a.model_hash(), b.model_hash());
        let walk = derive_walk(&a).unwrap();
        prop_assert!((walk.sigma_sq() - 2.0 * (1.0 + mean).ln()).abs() < 1e-12);
    }
}

#[test]
fn central_binomial_matches_the_recursion() {
    // C(2n,n) 4^-n = prod_{k=1..n} (2k-1)/(2k)
    let mut p = 1.0;
    for n in 1..=60u64 {
        p *= (2 * n - 1) as f64 / (2 * n) as f64;
        assert!((central_binomial_prob(n) - p).abs() <= 1e-13 * p, "n = {n}");
    }
}

#[test]
fn pruned_mass_restores_the_additive_martingale() {
    // E[W_n | particle pruned at x] = exp(-x), so E[W_n^pruned + ledger mass] = 1
    let exec = Executor::sequential();
    let seed = SeedRecord::new(31);
    let r = exec
        .run(
            20_000,
            500,
            &seed,
            || (Moments::new(), Moments::new()),
            |acc, _, rng| {
                let s = run_tree(
                    &binary(),
                    8,
                    0.0,
                    &PrunePolicy::barrier(0.5),
                    None,
                    &Caps::default(),
                    rng,
                )?;
                acc.0.push(s.w_n + s.pruned_mass_bound);
                acc.1.push(s.pruned_mass_bound);
                Ok(())
            },
        )
        .unwrap()
        .acc;
    let restored = r.0.estimate(seed, "tree");
    assert!(restored.within_sigmas(1.0, 4.0), "{restored:?}");
    // the barrier does remove mass at this offset
    assert!(r.1.mean() > 10.0 * r.1.stderr());
}

#[test]
fn iid_model_normalization_is_checked_before_simulation() {
    let m = PointProcessModel::iid(
        "three",
        ChildCountLaw::Fixed(3),
        DisplacementLaw::Normal { mean: 0.0, sd: 1.0 },
    );
    assert!(derive_walk(&m).is_err());
}
