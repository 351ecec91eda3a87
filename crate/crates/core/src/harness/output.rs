//! Files written next to every experiment: `series.csv`, `report.json` and
//! the resolved configuration `config.toml`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, ExperimentReport, HarnessError};
use crate::entropy::EntropyRecord;

pub const SERIES_HEADER: &str = "time,H,H_eta,mass_f,mass_g,l2w_sq,sigma_lower,grad_sup,T2_I,bound_I,T2_II,bound_II";

/// CSV text of a series. Numbers use Rust's shortest round-trip formatting;
/// quantities that are not available are written as `NaN`.
pub fn series_csv(records: &[EntropyRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for r in records {
        let prod = r.production;
        let cols = [
            r.time,
            r.h,
            r.h_eta.unwrap_or(f64::NAN),
            r.mass_f,
            r.mass_g,
            r.l2w_sq,
            r.sigma_check.sigma_lower,
            r.sigma_check.grad_sup,
            prod.map_or(f64::NAN, |p| p.t2_i),
            prod.map_or(f64::NAN, |p| p.bound_i),
            prod.map_or(f64::NAN, |p| p.t2_ii),
            prod.map_or(f64::NAN, |p| p.bound_ii),
        ];
        for (i, v) in cols.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn report_json(report: &ExperimentReport) -> String {
    #[derive(serde::Serialize)]
    struct WithDigest<'a> {
        #[serde(flatten)]
        report: &'a ExperimentReport,
        passed: bool,
        digest: String,
    }
    serde_json::to_string_pretty(&WithDigest {
        report,
        passed: report.passed(),
        digest: report.digest(),
    })
    .expect("report serializes")
}

/// Writes all outputs into `dir` and returns the written paths.
pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    report: &ExperimentReport,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<(), HarnessError> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put("series.csv".into(), series_csv(&report.series))?;
    for (name, s) in &report.extra_series {
        put(format!("series_{name}.csv"), series_csv(s))?;
    }
    put("report.json".into(), report_json(report))?;
    put("config.toml".into(), cfg.to_text())?;
    Ok(written)
}
