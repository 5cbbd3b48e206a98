//! Monte Carlo laboratory for branching random walks in the boundary case.

// negated float comparisons are used to reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brw_engine;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod offspring;
pub mod rng;
pub mod rw_kit;
pub mod spine_engine;
pub mod stats;
pub mod util;

pub use error::{Error, Result};
pub use exec::Executor;
pub use offspring::PointProcessModel;
pub use rng::{SeedRecord, SimRng};
pub use stats::{EstimateWithCI, Moments};
