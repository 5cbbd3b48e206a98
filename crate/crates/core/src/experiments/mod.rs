//! Estimator campaigns for the headline limit results and the identity
//! suite, with their CSV and JSON reports.

mod limit_law;
mod report;
mod suite;
mod tails;

pub use limit_law::{exp_limit_law, exp_limit_law_multi, LimitLawReport, MIN_SURVIVORS};
pub use report::{
    csv_string, json_string, seed_label, verdict, write_outputs, CsvRecord, Summary, SCHEMA_VERSION,
};
pub use suite::{
    exp_identity_suite, gaussian_many_to_one, many_to_one_pair, spine_selection_pit, SuiteBudgets,
    SuiteCheck, SuiteReport, KS_LEVEL,
};
pub use tails::{
    exp_full_tail, exp_killed_tail, FullTailExperiment, FullTailRow, KilledTailExperiment,
};
