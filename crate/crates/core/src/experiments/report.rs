use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offspring::Verdict;
use crate::rng::SeedRecord;
use crate::stats::EstimateWithCI;
use crate::util::write_atomic;

/// Version of the CSV and JSON layouts written by the experiments.
pub const SCHEMA_VERSION: u32 = 1;

/// One line of the shared CSV layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    /// Name of the swept parameter (`z`, `x`, ...) or of the check.
    pub param: String,
    pub param_value: Option<f64>,
    pub n: Option<u64>,
    pub estimate: f64,
    pub stderr: f64,
    pub replications: u64,
    pub estimator_kind: String,
    pub model_hash: String,
    pub seed: String,
    pub schema_version: u32,
}

impl CsvRecord {
    pub fn from_estimate(
        param: &str,
        value: Option<f64>,
        n: Option<u64>,
        e: &EstimateWithCI,
        model_hash: &str,
    ) -> Self {
        CsvRecord {
            param: param.to_string(),
            param_value: value,
            n,
            estimate: e.value,
            stderr: e.stderr,
            replications: e.count,
            estimator_kind: e.estimator_kind.clone(),
            model_hash: model_hash.to_string(),
            seed: seed_label(&e.seed),
            schema_version: SCHEMA_VERSION,
        }
    }
}

pub fn seed_label(seed: &SeedRecord) -> String {
    format!("{}:{:016x}", seed.master, seed.stream)
}

pub fn csv_string(rows: &[CsvRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(std::io::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// JSON summary written next to each CSV table.
#[derive(Clone, Debug, Serialize)]
pub struct Summary<'a, T: Serialize> {
    pub schema_version: u32,
    pub experiment: &'a str,
    pub partial: bool,
    /// Conjunction of the hard verdicts.
    pub pass: bool,
    /// Exact invariants; any failure makes the run fail.
    pub verdicts: &'a [Verdict],
    /// Tolerance targets calibrated at desk scale; reported, not enforced.
    pub targets: &'a [Verdict],
    pub report: &'a T,
}

pub fn json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.into()))?;
    s.push('\n');
    Ok(s)
}

/// Writes `<stem>.json` and, when `rows` is non-empty, `<stem>.csv` under
/// `dir`, each atomically.
pub fn write_outputs<T: Serialize>(
    dir: &Path,
    stem: &str,
    summary: &Summary<'_, T>,
    rows: &[CsvRecord],
) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let json = dir.join(format!("{stem}.json"));
    write_atomic(&json, json_string(summary)?.as_bytes())?;
    out.push(json);
    if !rows.is_empty() {
        let csv = dir.join(format!("{stem}.csv"));
        write_atomic(&csv, csv_string(rows)?.as_bytes())?;
        out.push(csv);
    }
    Ok(out)
}

pub fn verdict(name: &str, pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        name: name.to_string(),
        pass,
        detail: detail.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_the_shared_header_and_empty_optionals() {
        let e = EstimateWithCI::exact(0.25, SeedRecord::new(7), "direct");
        let rows = vec![
            CsvRecord::from_estimate("z", Some(1.5), Some(12), &e, "abc"),
            CsvRecord::from_estimate("w-mean", None, None, &e, "abc"),
        ];
        let s = csv_string(&rows).unwrap();
        let mut lines = s.lines();
        assert_eq!(
            lines.next().unwrap(),
            "param,param_value,n,estimate,stderr,replications,estimator_kind,model_hash,seed,schema_version"
        );
        assert!(lines
            .next()
            .unwrap()
            .starts_with("z,1.5,12,0.25,0.0,1,direct,abc,7:"));
        assert!(lines.next().unwrap().starts_with("w-mean,,,0.25,"));
    }

    #[test]
    fn outputs_are_written_atomically_into_a_new_dir() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("out");
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            experiment: "t",
            partial: false,
            pass: true,
            verdicts: &[],
            targets: &[],
            report: &1u32,
        };
        let files = write_outputs(&sub, "t", &summary, &[]).unwrap();
        assert_eq!(files.len(), 1);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert_eq!(std::fs::read_dir(&sub).unwrap().count(), 1);
    }
}
