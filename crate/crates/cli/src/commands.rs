use std::path::PathBuf;

use brwlab::brw_engine::{run_tree, Caps, PrunePolicy};
use brwlab::exec::Executor;
use brwlab::experiments::{
    exp_full_tail, exp_identity_suite, exp_killed_tail, exp_limit_law_multi, verdict,
    write_outputs, CsvRecord, SuiteBudgets, Summary, SCHEMA_VERSION,
};
use brwlab::offspring::{check_boundary_conditions, PointProcessModel, Verdict};
use brwlab::rng::SeedRecord;
use brwlab::rw_kit::{
    build_ladder_table, derive_walk, estimate_constants, ConstantsReport, LadderOptions,
    LadderTable, RenewalFunction, Side, WalkModel, DEFAULT_GRID_STEP,
};
use brwlab::spine_engine::first_crossing_decomposition;
use brwlab::stats::{EstimateWithCI, Moments};
use serde::Serialize;

use crate::config::ExperimentSection;
use crate::CliError;

pub struct Ctx {
    pub model: PointProcessModel,
    pub exp: ExperimentSection,
    pub seed: SeedRecord,
    pub exec: Executor,
    pub out: PathBuf,
    pub caps: Caps,
    pub cache_dir: Option<PathBuf>,
}

pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub pass: bool,
    pub partial: bool,
}

type Res<T> = Result<T, CliError>;

const KILLED_GRID: [f64; 8] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
const RENEWAL_X_MAX: f64 = 40.0;

impl Ctx {
    fn policy(&self) -> PrunePolicy {
        match self.exp.prune_offset {
            Some(o) => PrunePolicy::barrier(o),
            None => PrunePolicy::none(),
        }
    }

    fn hash(&self) -> &str {
        self.model.model_hash()
    }

    fn ladder(&self, walk: &WalkModel) -> Res<LadderTable> {
        let budget = self.exp.ladder_budget.unwrap_or(1_000_000);
        let opts = LadderOptions {
            step_cap: self.exp.ladder_step_cap.unwrap_or(1_000_000),
            ..LadderOptions::default()
        };
        let seed = self.seed.derive("ladder");
        Ok(match &self.cache_dir {
            Some(dir) => LadderTable::load_or_build(
                dir,
                self.hash(),
                walk,
                budget,
                &opts,
                &seed,
                &self.exec,
            )?,
            None => build_ladder_table(walk, budget, &opts, &seed, &self.exec)?,
        })
    }

    fn renewal(&self, table: &LadderTable) -> Res<RenewalFunction> {
        let paths = table.budget.min(200_000);
        Ok(RenewalFunction::build(
            table,
            Side::Plus,
            RENEWAL_X_MAX,
            DEFAULT_GRID_STEP,
            paths,
            &self.seed.derive("renewal"),
            &self.exec,
        )?)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish<T: Serialize>(
        &self,
        stem: &str,
        report: &T,
        partial: bool,
        verdicts: Vec<Verdict>,
        targets: Vec<Verdict>,
        rows: Vec<CsvRecord>,
    ) -> Res<Outcome> {
        let pass = verdicts.iter().all(|v| v.pass);
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            experiment: stem,
            partial,
            pass,
            verdicts: &verdicts,
            targets: &targets,
            report,
        };
        let files = write_outputs(&self.out, stem, &summary, &rows)?;
        Ok(Outcome {
            files,
            pass,
            partial,
        })
    }

    fn row(
        &self,
        param: &str,
        value: Option<f64>,
        n: Option<usize>,
        e: &EstimateWithCI,
    ) -> CsvRecord {
        CsvRecord::from_estimate(param, value, n.map(|n| n as u64), e, self.hash())
    }
}

fn within(name: &str, e: &EstimateWithCI, target: f64, sigmas: f64) -> Verdict {
    verdict(
        name,
        e.within_sigmas(target, sigmas),
        format!("{:.6} +- {:.2e}, target {:.6}", e.value, e.stderr, target),
    )
}

fn relative(name: &str, value: f64, target: f64, tol: f64) -> Verdict {
    verdict(
        name,
        ((value - target) / target).abs() <= tol,
        format!(
            "{value:.5} against {target:.5}, tolerance {:.0}%",
            tol * 100.0
        ),
    )
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

pub fn validate_model(ctx: &Ctx) -> Res<Outcome> {
    let budget = ctx.exp.replications.unwrap_or(1_000_000);
    let r = check_boundary_conditions(&ctx.model, budget, &ctx.seed, &ctx.exec)?;
    let rows = [
        ("mean-children", &r.mean_children),
        ("sum-exp", &r.sum_exp),
        ("sum-v-exp", &r.sum_v_exp),
        ("sigma-sq", &r.sigma_sq),
        ("x-log-sq", &r.x_log_sq),
        ("y-log", &r.y_log),
    ]
    .iter()
    .map(|(p, e)| ctx.row(p, None, None, e))
    .collect();
    ctx.finish(
        "validate-model",
        &r,
        false,
        r.verdicts.clone(),
        Vec::new(),
        rows,
    )
}

#[derive(Serialize)]
struct RwConstants {
    walk: String,
    sigma_sq: f64,
    ladder_budget: Option<u64>,
    ladder_cap_events: Option<(u64, u64)>,
    constants: ConstantsReport,
}

pub fn rw_constants(ctx: &Ctx) -> Res<Outcome> {
    let walk = derive_walk(&ctx.model)?;
    let table = if walk.sigma_sq() > 0.0 {
        Some(ctx.ladder(&walk)?)
    } else {
        None
    };
    let n_grid = ctx
        .exp
        .n_grid
        .clone()
        .unwrap_or_else(|| vec![5, 10, 20, 50, 100]);
    let budget = ctx.exp.replications.unwrap_or(1_000_000);
    let c = estimate_constants(&walk, &n_grid, budget, table.as_ref(), &ctx.seed, &ctx.exec)?;
    let mut verdicts = Vec::new();
    if let Some(p) = c.sparre_andersen_pass {
        verdicts.push(verdict(
            "sparre-andersen",
            p,
            "persistence probabilities against C(2n,n) 4^-n",
        ));
    }
    let mut targets = Vec::new();
    if walk.is_gaussian() {
        let sd = walk.sigma_sq().sqrt();
        if let Some(h) = &c.mean_ladder_height {
            targets.push(relative(
                "mean-ladder-height",
                h.value,
                sd / std::f64::consts::SQRT_2,
                0.03,
            ));
        }
        if let Some(c0) = &c.c0_from_heights {
            targets.push(relative(
                "c0",
                c0.value,
                std::f64::consts::SQRT_2 / sd,
                0.03,
            ));
        }
    }
    let mut rows: Vec<CsvRecord> = c
        .rows
        .iter()
        .flat_map(|r| {
            [
                ctx.row("persistence-plus", Some(r.n as f64), None, &r.p_plus),
                ctx.row("persistence-minus", Some(r.n as f64), None, &r.p_minus),
            ]
        })
        .collect();
    rows.push(ctx.row("c-plus", None, None, &c.c_plus_hat));
    rows.push(ctx.row("c-minus", None, None, &c.c_minus_hat));
    for (name, e) in [
        ("c0-renewal", &c.c0_hat),
        ("c0-heights", &c.c0_from_heights),
        ("mean-ladder-height", &c.mean_ladder_height),
    ] {
        if let Some(e) = e {
            rows.push(ctx.row(name, None, None, e));
        }
    }
    let report = RwConstants {
        walk: walk.name().to_string(),
        sigma_sq: walk.sigma_sq(),
        ladder_budget: table.as_ref().map(|t| t.budget),
        ladder_cap_events: table.as_ref().and_then(|t| t.cap_events),
        constants: c,
    };
    ctx.finish("rw-constants", &report, false, verdicts, targets, rows)
}

#[derive(Serialize)]
struct Simulation {
    n: usize,
    beta: f64,
    replications: u64,
    completed: u64,
    w_n: EstimateWithCI,
    d_n: EstimateWithCI,
    d_n_beta: Option<EstimateWithCI>,
    /// `R(beta)`, the mean of `D_n^(beta)`.
    renewal_at_beta: Option<f64>,
    survival: EstimateWithCI,
    population: EstimateWithCI,
    /// Mean of `M_n` over surviving trees.
    minimum: EstimateWithCI,
    overflowed: u64,
    negative_w: u64,
    negative_d_beta: u64,
}

pub fn simulate(ctx: &Ctx) -> Res<Outcome> {
    let n = ctx.exp.n.unwrap_or(12);
    let beta = ctx.exp.beta.unwrap_or(1.0);
    let reps = ctx.exp.replications.unwrap_or(10_000);
    let walk = derive_walk(&ctx.model)?;
    let renewal = if walk.sigma_sq() > 0.0 {
        Some(ctx.renewal(&ctx.ladder(&walk)?)?)
    } else {
        None
    };
    let seed = ctx.seed.derive("simulate").derive_index(n as u64);
    let policy = ctx.policy();
    let r = ctx.exec.run(
        reps,
        256,
        &seed,
        || (vec![Moments::new(); 6], 0u64, 0u64, 0u64),
        |acc, _, rng| {
            let s = run_tree(
                &ctx.model,
                n,
                beta,
                &policy,
                renewal.as_ref(),
                &ctx.caps,
                rng,
            )?;
            acc.0[0].push(s.w_n);
            acc.0[1].push(s.d_n);
            if renewal.is_some() {
                acc.0[2].push(s.d_n_beta);
            }
            acc.0[3].push(f64::from(u8::from(s.survived)));
            acc.0[4].push(s.population as f64);
            if s.m_n.is_finite() {
                acc.0[5].push(s.m_n);
            }
            acc.1 += u64::from(s.status != brwlab::brw_engine::RunStatus::Complete);
            acc.2 += u64::from(s.w_n < 0.0);
            acc.3 += u64::from(s.d_n_beta < 0.0);
            Ok(())
        },
    )?;
    let (m, overflowed, neg_w, neg_db) = r.acc;
    let e = |i: usize| m[i].estimate(seed, "tree");
    let report = Simulation {
        n,
        beta,
        replications: reps,
        completed: r.completed,
        w_n: e(0),
        d_n: e(1),
        d_n_beta: renewal.as_ref().map(|_| e(2)),
        renewal_at_beta: renewal.as_ref().map(|rf| rf.eval(beta)),
        survival: e(3),
        population: e(4),
        minimum: e(5),
        overflowed,
        negative_w: neg_w,
        negative_d_beta: neg_db,
    };
    let verdicts = vec![
        verdict(
            "w-non-negative",
            neg_w == 0,
            format!("{neg_w} trees with W_n < 0"),
        ),
        verdict(
            "d-beta-non-negative",
            neg_db == 0,
            format!("{neg_db} trees with D_n^(beta) < 0"),
        ),
        verdict(
            "no-overflow",
            overflowed == 0,
            format!("{overflowed} trees hit the population cap"),
        ),
    ];
    let mut targets = vec![
        within("w-mean", &report.w_n, 1.0, 4.0),
        within("d-mean", &report.d_n, 0.0, 4.0),
    ];
    if let (Some(d), Some(rb)) = (&report.d_n_beta, report.renewal_at_beta) {
        targets.push(within("d-beta-mean", d, rb, 4.0));
    }
    let mut rows = vec![
        ctx.row("w", None, Some(n), &report.w_n),
        ctx.row("d", None, Some(n), &report.d_n),
        ctx.row("survival", None, Some(n), &report.survival),
        ctx.row("population", None, Some(n), &report.population),
        ctx.row("minimum", None, Some(n), &report.minimum),
    ];
    if let Some(d) = &report.d_n_beta {
        rows.push(ctx.row("d-beta", Some(beta), Some(n), d));
    }
    ctx.finish("simulate", &report, r.partial, verdicts, targets, rows)
}

pub fn tail_kill(ctx: &Ctx) -> Res<Outcome> {
    let n = ctx.exp.n.unwrap_or(16);
    let grid = ctx
        .exp
        .z_grid
        .clone()
        .unwrap_or_else(|| KILLED_GRID.to_vec());
    let reps = ctx.exp.replications.unwrap_or(1_000_000);
    let t = exp_killed_tail(
        &ctx.model,
        n,
        &grid,
        reps,
        &ctx.policy(),
        &ctx.caps,
        &ctx.seed,
        &ctx.exec,
    )?;
    let ps: Vec<f64> = t.spine.rows.iter().map(|r| r.p.value).collect();
    let verdicts = vec![verdict(
        "monotone-in-z",
        non_increasing(&ps),
        "P(M_n^kill < a_n(z)) is non-increasing in z replication by replication",
    )];
    let targets = vec![
        verdict(
            "plateau-upper-half",
            t.plateau_ratio <= 1.5,
            format!("max/min = {:.3}, target <= 1.5", t.plateau_ratio),
        ),
        verdict(
            "plateau-whole-grid",
            t.range_ratio <= 1.5,
            format!("max/min = {:.3}, target <= 1.5", t.range_ratio),
        ),
    ];
    let mut rows: Vec<CsvRecord> = t
        .spine
        .rows
        .iter()
        .flat_map(|r| {
            [
                ctx.row("z", Some(r.z), Some(n), &r.p),
                ctx.row("z-scaled", Some(r.z), Some(n), &r.scaled),
            ]
        })
        .collect();
    rows.push(ctx.row("c1", None, Some(n), &t.c1_hat));
    ctx.finish("tail-kill", &t, t.spine.partial, verdicts, targets, rows)
}

pub fn tail_full(ctx: &Ctx) -> Res<Outcome> {
    let n = ctx.exp.n.unwrap_or(16);
    let grid = ctx
        .exp
        .z_grid
        .clone()
        .unwrap_or_else(|| vec![2.5, 3.0, 3.5, 4.0]);
    let reps = ctx.exp.replications.unwrap_or(20_000);
    let a = ctx.exp.a.unwrap_or(1.0);
    let policy = ctx.policy();
    let killed = exp_killed_tail(
        &ctx.model,
        n,
        &KILLED_GRID,
        ctx.exp.killed_replications.unwrap_or(1_000_000),
        &policy,
        &ctx.caps,
        &ctx.seed,
        &ctx.exec,
    )?;
    let walk = derive_walk(&ctx.model)?;
    let table = ctx.ladder(&walk)?;
    let renewal = ctx.renewal(&table)?;
    let c0 = renewal.c0_hat.clone();
    let f = exp_full_tail(
        &ctx.model,
        n,
        &grid,
        reps,
        a,
        &killed.c1_hat,
        &c0,
        &renewal,
        &policy,
        &ctx.caps,
        &ctx.seed,
        &ctx.exec,
    )?;
    let ordered = f.direct.rows.iter().all(|r| match (&r.p_kill, &r.p_full) {
        (Some(k), Some(p)) => k.value <= p.value,
        _ => true,
    });
    let decomposition_below = f.decomposition.as_ref().is_none_or(|d| {
        d.rows
            .iter()
            .all(|r| r.p_decomposition.value <= r.p_direct.value)
    });
    let verdicts = vec![
        verdict(
            "killed-below-full",
            ordered,
            "P(M_n^kill < t) <= P(M_n < t) on the same trees",
        ),
        verdict(
            "decomposition-below-direct",
            decomposition_below,
            "P(sum B >= 1) <= P(M_n < a_n(z)) on the same trees",
        ),
    ];
    let mut targets = Vec::new();
    let mut rows = Vec::new();
    for r in &f.rows {
        if let Some(q) = &r.ratio {
            targets.push(verdict(
                &format!("ratio-z{}", r.z),
                (0.6..=1.6).contains(&q.value),
                format!("{:.3} +- {:.3}, target [0.6, 1.6]", q.value, q.stderr),
            ));
            rows.push(ctx.row("z-ratio", Some(r.z), Some(n), q));
        }
        if let Some(o) = r.overlap {
            targets.push(verdict(
                &format!("overlap-z{}", r.z),
                o,
                "95% intervals widened by exp(A - z)",
            ));
        }
        if let Some(d) = &r.direct_scaled {
            rows.push(ctx.row("z-direct-scaled", Some(r.z), Some(n), d));
        }
        if let Some(d) = &r.decomposition_scaled {
            rows.push(ctx.row("z-decomposition-scaled", Some(r.z), Some(n), d));
        }
    }
    rows.push(ctx.row("c1", None, Some(n), &f.c1_hat));
    rows.push(ctx.row("c0", None, None, &f.c0_hat));
    let partial = killed.spine.partial
        || f.direct.partial
        || f.decomposition.as_ref().is_some_and(|d| d.partial);
    ctx.finish("tail-full", &f, partial, verdicts, targets, rows)
}

pub fn limit_law(ctx: &Ctx) -> Res<Outcome> {
    let ns = ctx.exp.ns.clone().unwrap_or_else(|| match ctx.exp.n {
        Some(n) => vec![n],
        None => vec![12, 16],
    });
    let grid = ctx
        .exp
        .x_grid
        .clone()
        .unwrap_or_else(|| (0..=16).map(|i| -2.0 + 0.25 * i as f64).collect());
    let reps = ctx.exp.replications.unwrap_or(2000);
    let reports = exp_limit_law_multi(
        &ctx.model,
        &ns,
        &grid,
        reps,
        &ctx.policy(),
        &ctx.caps,
        &ctx.seed,
        &ctx.exec,
    )?;
    let mut verdicts = Vec::new();
    let mut targets = Vec::new();
    let mut rows = Vec::new();
    for r in &reports {
        let bounded = |v: &[f64]| v.iter().all(|p| (0.0..=1.0).contains(p)) && non_increasing(v);
        verdicts.push(verdict(
            &format!("survival-curve-n{}", r.n),
            bounded(&r.empirical_survival),
            "in [0, 1] and non-increasing",
        ));
        verdicts.push(verdict(
            &format!("mixture-curve-n{}", r.n),
            r.flagged || bounded(&r.mixture_prediction),
            "in [0, 1] and non-increasing",
        ));
        targets.push(verdict(
            &format!("sup-distance-n{}", r.n),
            !r.flagged && r.sup_distance <= 0.05,
            format!(
                "{:.4}, target <= 0.05{}",
                r.sup_distance,
                if r.flagged { " (flagged)" } else { "" }
            ),
        ));
        for (i, &x) in r.x_grid.iter().enumerate() {
            let est = |value: f64, stderr: f64, kind: &str| EstimateWithCI {
                value,
                stderr,
                count: r.completed.max(1),
                seed: r.seed,
                estimator_kind: kind.to_string(),
            };
            rows.push(ctx.row(
                "x",
                Some(x),
                Some(r.n),
                &est(r.empirical_survival[i], r.survival_stderr[i], "empirical"),
            ));
            rows.push(ctx.row(
                "x",
                Some(x),
                Some(r.n),
                &est(r.mixture_prediction[i], 0.0, "mixture"),
            ));
        }
    }
    let d: Vec<f64> = reports.iter().map(|r| r.sup_distance).collect();
    if d.len() > 1 {
        targets.push(verdict(
            "sup-distance-non-increasing",
            non_increasing(&d),
            format!("{d:?} over n = {ns:?}"),
        ));
    }
    let partial = reports.iter().any(|r| r.partial);
    ctx.finish("limit-law", &reports, partial, verdicts, targets, rows)
}

pub fn identity_suite(ctx: &Ctx) -> Res<Outcome> {
    let budgets = match ctx.exp.budget.as_deref() {
        None | Some("standard") => SuiteBudgets::default(),
        Some("quick") => SuiteBudgets::quick(),
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown suite budget `{other}` (standard, quick)"
            )))
        }
    };
    let r = exp_identity_suite(&ctx.model, &budgets, &ctx.seed, &ctx.exec)?;
    let verdicts = r
        .checks
        .iter()
        .map(|c| verdict(&c.name, c.pass, c.detail.clone()))
        .collect();
    let rows = r
        .checks
        .iter()
        .map(|c| match &c.estimate {
            Some(e) => ctx.row(&c.name, c.target, None, e),
            None => {
                let kind = if c.skipped { "skipped" } else { "ks-p-value" };
                ctx.row(
                    &c.name,
                    None,
                    None,
                    &EstimateWithCI::exact(c.statistic, r.seed, kind),
                )
            }
        })
        .collect();
    ctx.finish("identity-suite", &r, r.partial, verdicts, Vec::new(), rows)
}

pub fn decompose(ctx: &Ctx) -> Res<Outcome> {
    let n = ctx.exp.n.unwrap_or(14);
    let grid = ctx.exp.z_grid.clone().unwrap_or_else(|| vec![2.0, 3.0]);
    let a = ctx.exp.a.unwrap_or(1.0);
    let reps = ctx.exp.replications.unwrap_or(20_000);
    let walk = derive_walk(&ctx.model)?;
    let renewal = ctx.renewal(&ctx.ladder(&walk)?)?;
    let d = first_crossing_decomposition(
        &ctx.model,
        n,
        &grid,
        a,
        reps,
        &renewal,
        &ctx.policy(),
        &ctx.caps,
        &ctx.seed,
        &ctx.exec,
    )?;
    let verdicts = vec![verdict(
        "decomposition-below-direct",
        d.rows
            .iter()
            .all(|r| r.p_decomposition.value <= r.p_direct.value),
        "P(sum B >= 1) <= P(M_n < a_n(z)) on the same trees",
    )];
    let targets = d
        .rows
        .iter()
        .map(|r| {
            let gap = r.p_direct.value - r.p_decomposition.value;
            let se = r.p_direct.stderr.hypot(r.p_decomposition.stderr);
            verdict(
                &format!("deficiency-z{}", r.z),
                gap <= r.deficiency_bound + 4.0 * se,
                format!(
                    "gap {gap:.3e}, bound exp(A - z) = {:.3e}",
                    r.deficiency_bound
                ),
            )
        })
        .collect();
    let rows = d
        .rows
        .iter()
        .flat_map(|r| {
            [
                ctx.row("z-ratio", Some(r.z), Some(n), &r.ratio),
                ctx.row(
                    "z-ratio-truncated-mass",
                    Some(r.z),
                    Some(n),
                    &r.ratio_truncated_mass,
                ),
                ctx.row("z-p-decomposition", Some(r.z), Some(n), &r.p_decomposition),
                ctx.row("z-p-direct", Some(r.z), Some(n), &r.p_direct),
            ]
        })
        .collect();
    ctx.finish("decompose", &d, d.partial, verdicts, targets, rows)
}
