//! Chunked Monte Carlo campaigns.
//!
//! Replications `0..total` are split into fixed chunks of `chunk` replications;
//! chunk `c` draws from stream index `c` of the campaign seed. Chunks run on a
//! worker pool and their accumulators are merged in chunk order, so the output
//! is bit-identical for any worker count.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{SeedRecord, SimRng};
use crate::stats::{CoMoments, Moments};

/// Environment variable consulted by [`Executor::from_env`].
pub const WORKERS_ENV: &str = "BRWLAB_WORKERS";

/// Associative merge of per-chunk partial results.
pub trait Accumulate: Send {
    fn merge(&mut self, other: Self);
}

impl Accumulate for Moments {
    fn merge(&mut self, other: Self) {
        Moments::merge(self, &other);
    }
}

impl Accumulate for CoMoments {
    fn merge(&mut self, other: Self) {
        CoMoments::merge(self, &other);
    }
}

impl<T: Accumulate> Accumulate for Vec<T> {
    fn merge(&mut self, other: Self) {
        if self.is_empty() {
            *self = other;
            return;
        }
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

impl Accumulate for u64 {
    fn merge(&mut self, other: Self) {
        *self += other;
    }
}

impl Accumulate for f64 {
    fn merge(&mut self, other: Self) {
        *self += other;
    }
}

/// Concatenating accumulator for per-replication records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Collected<T>(pub Vec<T>);

impl<T: Send> Accumulate for Collected<T> {
    fn merge(&mut self, mut other: Self) {
        self.0.append(&mut other.0);
    }
}

macro_rules! tuple_accumulate {
    ($($name:ident $idx:tt),+) => {
        impl<$($name: Accumulate),+> Accumulate for ($($name,)+) {
            fn merge(&mut self, other: Self) {
                $( self.$idx.merge(other.$idx); )+
            }
        }
    };
}
tuple_accumulate!(A 0, B 1);
tuple_accumulate!(A 0, B 1, C 2);
tuple_accumulate!(A 0, B 1, C 2, D 3);
tuple_accumulate!(A 0, B 1, C 2, D 3, E 4);

#[derive(Clone, Debug)]
pub struct CampaignResult<A> {
    pub acc: A,
    /// Replications actually executed.
    pub completed: u64,
    /// True when cancellation cut the campaign short.
    pub partial: bool,
}

#[derive(Clone)]
pub struct Executor {
    workers: usize,
    pool: Option<Arc<rayon::ThreadPool>>,
    cancel: Arc<AtomicBool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers)
            .finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor {
            workers: 1,
            pool: None,
            cancel: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::invalid("worker count must be at least 1"));
        }
        if workers == 1 {
            return Ok(Executor::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
        Ok(Executor {
            workers,
            pool: Some(Arc::new(pool)),
            cancel: Arc::new(AtomicBool::new(false)),
        })
    }

    /// Worker count from `BRWLAB_WORKERS`, defaulting to the available
    /// parallelism.
    pub fn from_env() -> Result<Self> {
        let workers = match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV}={v:?} is not a worker count")))?,
            Err(_) => std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
        };
        Executor::new(workers)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Flag that stops the campaign at the next chunk boundary when set.
    pub fn cancel_handle(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.cancel)
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }

    /// Runs `body(acc, replication_index, rng)` for every replication.
    pub fn run<A, I, F>(
        &self,
        total: u64,
        chunk: u64,
        seed: &SeedRecord,
        init: I,
        body: F,
    ) -> Result<CampaignResult<A>>
    where
        A: Accumulate,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, u64, &mut SimRng) -> Result<()> + Sync,
    {
        let chunk = chunk.max(1);
        let n_chunks = total.div_ceil(chunk);
        let run_chunk = |c: u64| -> Result<Option<(A, u64)>> {
            if self.is_cancelled() {
                return Ok(None);
            }
            let mut rng = seed.rng(c);
            let mut acc = init();
            let start = c * chunk;
            let end = (start + chunk).min(total);
            for i in start..end {
                body(&mut acc, i, &mut rng)?;
            }
            Ok(Some((acc, end - start)))
        };
        let parts: Vec<Result<Option<(A, u64)>>> = match &self.pool {
            None => (0..n_chunks).map(run_chunk).collect(),
            Some(pool) => pool.install(|| (0..n_chunks).into_par_iter().map(run_chunk).collect()),
        };
        let mut acc = init();
        let mut completed = 0;
        let mut partial = false;
        for part in parts {
            match part? {
                Some((a, k)) => {
                    acc.merge(a);
                    completed += k;
                }
                None => partial = true,
            }
        }
        Ok(CampaignResult {
            acc,
            completed,
            partial,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    fn campaign(exec: &Executor) -> (Moments, Collected<u64>) {
        let seed = SeedRecord::new(9).derive("exec-test");
        exec.run(
            1000,
            37,
            &seed,
            || (Moments::new(), Collected::default()),
            |acc, i, rng| {
                let x: f64 = rng.random();
                acc.0.push(x);
                acc.1 .0.push(i);
                Ok(())
            },
        )
        .unwrap()
        .acc
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let a = campaign(&Executor::sequential());
        let b = campaign(&Executor::new(4).unwrap());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.1 .0, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn cancellation_marks_partial() {
        let exec = Executor::sequential();
        exec.cancel_handle().store(true, Ordering::Relaxed);
        let r = exec
            .run(100, 10, &SeedRecord::new(1), Moments::new, |acc, _, _| {
                acc.push(1.0);
                Ok(())
            })
            .unwrap();
        assert!(r.partial);
        assert_eq!(r.completed, 0);
    }

    #[test]
    fn errors_propagate() {
        let r = Executor::sequential().run(10, 3, &SeedRecord::new(1), Moments::new, |_, i, _| {
            if i == 5 {
                Err(Error::invalid("boom"))
            } else {
                Ok(())
            }
        });
        assert!(r.is_err());
    }
}
