use brwlab::experiments::{
    exp_identity_suite, gaussian_many_to_one, many_to_one_pair, SuiteBudgets,
};
use brwlab::rw_kit::derive_walk;
use brwlab::{Executor, PointProcessModel, SeedRecord};

fn mid_budgets() -> SuiteBudgets {
    SuiteBudgets {
        boundary: 200_000,
        many_to_one_trees: 40_000,
        many_to_one_walks: 200_000,
        martingale_trees: 20_000,
        spine_draws: 10_000,
        selection_trees: 4_000,
        ladder: 40_000,
        tanaka: 50_000,
        persistence_walks: 50_000,
        stopping_trees: 5_000,
        stopping_walks: 50_000,
        bridge_spine: 30_000,
        bridge_direct: 10_000,
        ..SuiteBudgets::default()
    }
}

fn failures(r: &brwlab::experiments::SuiteReport) -> Vec<String> {
    r.checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect()
}

#[test]
fn suite_passes_on_a_random_child_count_model() {
    let m = PointProcessModel::poisson_gaussian(1.5).unwrap();
    // E[W_n^2] grows like 2.5^n here; sample means are unreliable beyond a few generations
    let budgets = SuiteBudgets {
        martingale_n: 3,
        ..mid_budgets()
    };
    let r =
        exp_identity_suite(&m, &budgets, &SeedRecord::new(77), &Executor::sequential()).unwrap();
    assert!(r.all_pass, "{:#?}", failures(&r));
    assert!(r.checks.iter().all(|c| !c.skipped));
}

#[test]
fn suite_passes_on_binary_gaussian() {
    let m = PointProcessModel::binary_gaussian();
    let r = exp_identity_suite(
        &m,
        &mid_budgets(),
        &SeedRecord::new(78),
        &Executor::new(3).unwrap(),
    )
    .unwrap();
    assert!(r.all_pass, "{:#?}", failures(&r));
}

#[test]
fn many_to_one_with_random_children_matches_the_gaussian_closed_form() {
    // walk variance 2 ln(2.5) per step
    let m = PointProcessModel::poisson_gaussian(1.5).unwrap();
    let walk = derive_walk(&m).unwrap();
    let (tree, w) = many_to_one_pair(
        &m,
        &walk,
        2,
        100_000,
        400_000,
        &SeedRecord::new(3),
        &Executor::sequential(),
    )
    .unwrap();
    let exact = gaussian_many_to_one(4.0 * 2.5f64.ln());
    assert!(tree.within_sigmas(exact, 4.0), "{tree:?} vs {exact}");
    assert!(w.within_sigmas(exact, 4.0), "{w:?} vs {exact}");
}
