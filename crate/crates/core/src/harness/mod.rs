//! Experiment drivers, configuration, serialized outputs and the command line.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod gronwall;
pub mod output;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::entropy::{EntropyError, EntropyRecord};
use crate::grid::GridError;
use crate::model::ModelError;
use crate::reference::ReferenceError;
use crate::solver::SolverError;

pub use config::{ExperimentConfig, ExperimentKind, InitialKind, Preset, RawConfig};
pub use experiments::{
    convergence_study, gronwall_experiment, invariants_suite, pme_validation, run_experiment, simulate,
    weak_strong_experiment,
};
pub use gronwall::{gronwall_fit, gronwall_fit_samples, GronwallError, GronwallFit};

/// Errors carry the name of the module whose contract was violated.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    ConfigSyntax(String),
    #[error("config: {0}")]
    BadConfig(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("grid: {0}")]
    Grid(#[from] GridError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("entropy: {0}")]
    Entropy(#[from] EntropyError),
    #[error("reference: {0}")]
    Reference(#[from] ReferenceError),
    #[error("gronwall: {0}")]
    Gronwall(#[from] GronwallError),
    #[error("pme_validation: Barenblatt support radius {radius} reaches the boundary (half-width {half_width}) by t = {t_end}")]
    SupportTouchedBoundary { radius: f64, half_width: f64, t_end: f64 },
    #[error("harness: expected experiment kind {expected}, got {got}")]
    WrongKind { expected: &'static str, got: &'static str },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `value <= threshold`.
    pub fn at_most(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value <= threshold,
            value,
            threshold,
            detail: detail.into(),
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: value >= threshold,
            value,
            threshold,
            detail: detail.into(),
        }
    }

    pub fn flag(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            threshold: 1.0,
            detail: detail.into(),
        }
    }
}

/// One row of a refinement table. `order` compares with the previous row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementRow {
    pub n_cells: usize,
    pub dt: f64,
    pub value: f64,
    pub order: Option<f64>,
}

/// Builds rows with observed orders `log(v_{k-1}/v_k) / log(r_k)` where `r_k`
/// is the refinement ratio of `scale` (cell count or inverse time step).
pub fn refinement_table(rows: &[(usize, f64, f64)], scale: impl Fn(usize, f64) -> f64) -> Vec<RefinementRow> {
    rows.iter()
        .enumerate()
        .map(|(k, &(n, dt, v))| {
            let order = (k > 0).then(|| {
                let (pn, pdt, pv) = rows[k - 1];
                (pv / v).ln() / (scale(n, dt) / scale(pn, pdt)).ln()
            });
            RefinementRow {
                n_cells: n,
                dt,
                value: v,
                order,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub checks: Vec<CheckResult>,
    pub tables: BTreeMap<String, Vec<RefinementRow>>,
    pub gronwall: Option<GronwallFit>,
    pub metrics: BTreeMap<String, f64>,
    /// Primary diagnostics series, written to `series.csv`.
    #[serde(skip)]
    pub series: Vec<EntropyRecord>,
    /// Additional named series, written to `series_<name>.csv`.
    #[serde(skip)]
    pub extra_series: BTreeMap<String, Vec<EntropyRecord>>,
}

impl ExperimentReport {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            checks: Vec::new(),
            tables: BTreeMap::new(),
            gronwall: None,
            metrics: BTreeMap::new(),
            series: Vec::new(),
            extra_series: BTreeMap::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    /// 64-bit FNV-1a digest of the structured report and all series, as hex.
    pub fn digest(&self) -> String {
        let mut text = serde_json::to_string(self).expect("report serializes");
        text.push_str(&output::series_csv(&self.series));
        for (name, s) in &self.extra_series {
            text.push_str(name);
            text.push_str(&output::series_csv(s));
        }
        let hash = text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        });
        format!("{hash:016x}")
    }
}
