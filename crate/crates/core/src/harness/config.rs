//! Experiment configuration: flat `key = value` text (a TOML subset).
//!
//! Every key is optional. A `preset` supplies the coefficients and the initial
//! condition; explicit keys override it. [`RawConfig::resolve`] produces an
//! [`ExperimentConfig`] with every value concrete, and that resolved form is
//! what gets echoed next to the outputs.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::grid::{interpolate_to_grid, Grid1D, State};
use crate::model::ModelParams;
use crate::reference::Barenblatt;
use crate::solver::{MobilityAverage, SolverConfig};

/// Environment variable that overrides the configured random seed.
pub const SEED_ENV: &str = "XDIFF_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Run,
    WeakStrong,
    Gronwall,
    PmeValidation,
    Convergence,
    Invariants,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::WeakStrong => "weak_strong",
            ExperimentKind::Gronwall => "gronwall",
            ExperimentKind::PmeValidation => "pme_validation",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Invariants => "invariants",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `(a, b, c, d) = (1, 1, 1, 2)` with a smooth positive initial pair.
    Muskat,
    /// `(a, b, c, d) = (1, 1, 1, 1.01)`, so `ad - bc = 0.01`.
    NearDegenerate,
    /// `g ≡ 0` with a Barenblatt initial profile for `f`.
    Pme,
}

impl Preset {
    fn params(&self) -> (f64, f64, f64, f64) {
        match self {
            Preset::Muskat | Preset::Pme => (1.0, 1.0, 1.0, 2.0),
            Preset::NearDegenerate => (1.0, 1.0, 1.0, 1.01),
        }
    }

    fn initial(&self) -> InitialKind {
        match self {
            Preset::Muskat | Preset::NearDegenerate => InitialKind::Bump,
            Preset::Pme => InitialKind::Barenblatt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// `f = 0.6 + 0.4 exp(-((ξ - 0.35)/0.12)²)`, `g = 0.5 + 0.3 cos²(1.5 π ξ)` with
    /// `ξ` the relative position in the domain; both bounded below by 0.2.
    Bump,
    /// `f = 1 + ½ cos(π ξ)`, `g = 1 + ½ sin²(π ξ)`.
    Cosine,
    /// Seeded smooth random pair bounded below by 0.2.
    Random,
    /// Barenblatt cell averages for `f` (see `barenblatt_t0`, `barenblatt_mass`), `g ≡ 0`.
    Barenblatt,
    /// `constant_f`, `constant_g`.
    Constant,
    /// `initial_f`, `initial_g` as cell values on a uniform grid of the same domain.
    Tabulated,
}

/// Configuration as written by the user; `None` means "use the default".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub kind: Option<ExperimentKind>,
    pub preset: Option<Preset>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
    pub n_cells: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub output_stride: Option<f64>,
    pub output: Option<PathBuf>,
    pub initial: Option<InitialKind>,
    pub initial_f: Option<Vec<f64>>,
    pub initial_g: Option<Vec<f64>>,
    pub constant_f: Option<f64>,
    pub constant_g: Option<f64>,
    pub barenblatt_t0: Option<f64>,
    pub barenblatt_mass: Option<f64>,
    pub sigma_min: Option<f64>,
    pub eta: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub mobility_average: Option<MobilityAverage>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub levels: Option<Vec<usize>>,
    pub reference_n: Option<usize>,
    pub perturbation: Option<f64>,
    pub temporal_n: Option<usize>,
    pub temporal_dt: Option<f64>,
    pub pointwise_samples: Option<usize>,
    pub state_pairs: Option<usize>,
    pub solver_runs: Option<usize>,
    pub solver_steps: Option<usize>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub preset: Option<Preset>,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_cells: usize,
    /// Time step of the run, or of the coarsest level in refinement studies.
    pub dt: f64,
    pub t_end: f64,
    /// Time between diagnostics records.
    pub output_stride: f64,
    pub output: PathBuf,
    pub initial: InitialKind,
    pub initial_f: Vec<f64>,
    pub initial_g: Vec<f64>,
    pub constant_f: f64,
    pub constant_g: f64,
    pub barenblatt_t0: f64,
    pub barenblatt_mass: f64,
    pub sigma_min: f64,
    pub eta: Vec<f64>,
    pub seed: u64,
    pub mobility_average: MobilityAverage,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub damping: f64,
    /// Cell counts of the refinement levels.
    pub levels: Vec<usize>,
    /// Cell count of the strong-solution surrogate.
    pub reference_n: usize,
    /// Relative size of the initial-data perturbation in the Gronwall experiment.
    pub perturbation: f64,
    /// Cell count for the temporal convergence study.
    pub temporal_n: usize,
    /// Largest time step of the temporal convergence study; it is halved twice.
    pub temporal_dt: f64,
    pub pointwise_samples: usize,
    pub state_pairs: usize,
    pub solver_runs: usize,
    pub solver_steps: usize,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::ConfigSyntax(e.to_string()))
    }

    pub fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let kind = self.kind.unwrap_or(ExperimentKind::Run);
        let preset = self.preset.or(match kind {
            ExperimentKind::PmeValidation => Some(Preset::Pme),
            _ => None,
        });
        let (pa, pb, pc, pd) = preset.unwrap_or(Preset::Muskat).params();
        let default_initial = preset.map(|p| p.initial()).unwrap_or(match kind {
            ExperimentKind::Convergence => InitialKind::Cosine,
            _ => InitialKind::Bump,
        });
        let default_levels = match kind {
            ExperimentKind::PmeValidation => vec![128, 256, 512],
            ExperimentKind::Convergence => vec![32, 64, 128],
            _ => vec![64, 128, 256],
        };
        let t_end = self.t_end.unwrap_or(match kind {
            ExperimentKind::PmeValidation => 0.05,
            _ => 0.1,
        });
        let cfg = ExperimentConfig {
            kind,
            preset,
            a: self.a.unwrap_or(pa),
            b: self.b.unwrap_or(pb),
            c: self.c.unwrap_or(pc),
            d: self.d.unwrap_or(pd),
            x_lo: self.x_lo.unwrap_or(0.0),
            x_hi: self.x_hi.unwrap_or(1.0),
            n_cells: self.n_cells.unwrap_or(128),
            dt: self.dt.unwrap_or(match kind {
                ExperimentKind::Convergence => 0.002,
                ExperimentKind::PmeValidation => 2e-4,
                _ => 0.002,
            }),
            t_end,
            output_stride: self.output_stride.unwrap_or(t_end / 50.0),
            output: self.output.clone().unwrap_or_else(|| PathBuf::from("out")),
            initial: self.initial.unwrap_or(default_initial),
            initial_f: self.initial_f.clone().unwrap_or_default(),
            initial_g: self.initial_g.clone().unwrap_or_default(),
            constant_f: self.constant_f.unwrap_or(1.0),
            constant_g: self.constant_g.unwrap_or(1.0),
            barenblatt_t0: self.barenblatt_t0.unwrap_or(0.01),
            barenblatt_mass: self.barenblatt_mass.unwrap_or(0.25),
            sigma_min: self.sigma_min.unwrap_or(crate::entropy::DEFAULT_SIGMA_MIN),
            eta: self.eta.clone().unwrap_or_else(|| vec![1e-2, 1e-4, 1e-6]),
            seed: self.seed.unwrap_or(42),
            // The battery starts from states that touch zero, where only upwinding
            // guarantees a nonnegative implicit step.
            mobility_average: self.mobility_average.unwrap_or(match kind {
                ExperimentKind::Invariants => MobilityAverage::Upwind,
                _ => MobilityAverage::Arithmetic,
            }),
            newton_tol: self.newton_tol.unwrap_or(1e-10),
            newton_max_iter: self.newton_max_iter.unwrap_or(50),
            damping: self.damping.unwrap_or(0.5),
            levels: self.levels.clone().unwrap_or(default_levels),
            reference_n: self.reference_n.unwrap_or(1024),
            perturbation: self.perturbation.unwrap_or(0.2),
            temporal_n: self.temporal_n.unwrap_or(512),
            temporal_dt: self.temporal_dt.unwrap_or(0.02),
            pointwise_samples: self.pointwise_samples.unwrap_or(100_000),
            state_pairs: self.state_pairs.unwrap_or(1000),
            solver_runs: self.solver_runs.unwrap_or(100),
            solver_steps: self.solver_steps.unwrap_or(200),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        RawConfig::parse(text)?.resolve()
    }

    /// Resolved configuration as `key = value` text; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("resolved config is always representable")
    }

    pub fn params(&self) -> Result<ModelParams, HarnessError> {
        Ok(ModelParams::new(self.a, self.b, self.c, self.d)?)
    }

    pub fn grid(&self, n_cells: usize) -> Result<Grid1D, HarnessError> {
        Ok(Grid1D::new(self.x_lo, self.x_hi, n_cells)?)
    }

    pub fn solver(&self, dt: f64) -> SolverConfig {
        SolverConfig {
            dt,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            mobility_average: self.mobility_average,
            damping: self.damping,
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        self.params()?;
        self.grid(self.n_cells)?;
        self.solver(self.dt).validate()?;
        self.solver(self.temporal_dt).validate()?;
        let bad = |msg: String| Err(HarnessError::BadConfig(msg));
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be >= 0, got {}", self.t_end));
        }
        if !(self.output_stride > 0.0) {
            return bad(format!("output_stride must be > 0, got {}", self.output_stride));
        }
        if !(self.sigma_min > 0.0) {
            return bad(format!("sigma_min must be > 0, got {}", self.sigma_min));
        }
        if let Some(e) = self.eta.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return bad(format!("eta values must lie in (0, 1), got {e}"));
        }
        for &n in self.levels.iter().chain([&self.reference_n, &self.temporal_n]) {
            self.grid(n)?;
        }
        if self.levels.is_empty() {
            return bad("levels must not be empty".into());
        }
        if self.initial == InitialKind::Tabulated {
            let (nf, ng) = (self.initial_f.len(), self.initial_g.len());
            if nf != ng || nf < 2 {
                return bad(format!(
                    "tabulated initial data needs initial_f and initial_g of equal length >= 2 (got {nf}, {ng})"
                ));
            }
        }
        if self.initial == InitialKind::Constant && !(self.constant_f >= 0.0 && self.constant_g >= 0.0) {
            return bad("constant initial values must be >= 0".into());
        }
        if !(self.perturbation >= 0.0) {
            return bad(format!("perturbation must be >= 0, got {}", self.perturbation));
        }
        Ok(())
    }

    pub fn barenblatt(&self) -> Result<Barenblatt, HarnessError> {
        Ok(Barenblatt::new(
            self.a,
            self.barenblatt_t0,
            self.barenblatt_mass,
            0.5 * (self.x_lo + self.x_hi),
        )?)
    }

    /// Initial state on a grid with `n_cells` cells.
    pub fn initial_state(&self, n_cells: usize) -> Result<State, HarnessError> {
        let grid = self.grid(n_cells)?;
        let (lo, len) = (self.x_lo, self.x_hi - self.x_lo);
        let pi = std::f64::consts::PI;
        let xi = move |x: f64| (x - lo) / len;
        let state = match self.initial {
            InitialKind::Bump => State::from_fn(
                grid,
                |x| 0.6 + 0.4 * (-((xi(x) - 0.35) / 0.12).powi(2)).exp(),
                |x| 0.5 + 0.3 * (1.5 * pi * xi(x)).cos().powi(2),
                0.0,
            )?,
            InitialKind::Cosine => State::from_fn(
                grid,
                |x| 1.0 + 0.5 * (pi * xi(x)).cos(),
                |x| 1.0 + 0.5 * (pi * xi(x)).sin().powi(2),
                0.0,
            )?,
            InitialKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                random_smooth_state(&grid, &mut rng, 0.2)
            }
            InitialKind::Barenblatt => {
                let f = self.barenblatt()?.sample_cells(&grid, 0.0)?;
                State::new(grid, f, vec![0.0; n_cells], 0.0)?
            }
            InitialKind::Constant => State::new(
                grid,
                vec![self.constant_f; n_cells],
                vec![self.constant_g; n_cells],
                0.0,
            )?,
            InitialKind::Tabulated => {
                let table = State::new(
                    self.grid(self.initial_f.len())?,
                    self.initial_f.clone(),
                    self.initial_g.clone(),
                    0.0,
                )?;
                interpolate_to_grid(&table, &grid)?
            }
        };
        Ok(state)
    }
}

/// Smooth random pair: a few cosine modes around 1, rescaled so the minimum of
/// each component is `floor`.
pub fn random_smooth_state(grid: &Grid1D, rng: &mut impl Rng, floor: f64) -> State {
    let (lo, len) = (grid.x_lo(), grid.length());
    let pi = std::f64::consts::PI;
    let mut component = || {
        let amps: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phase: f64 = rng.random_range(0.0..1.0);
        let raw = grid.sample(|x| {
            let s = (x - lo) / len;
            amps.iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * pi * (s + phase)).cos())
                .sum::<f64>()
        });
        let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let scale = rng.random_range(0.2..2.0);
        raw.iter().map(|v| floor + scale * (v - min)).collect::<Vec<_>>()
    };
    let f = component();
    let g = component();
    State {
        grid: grid.clone(),
        f,
        g,
        time: 0.0,
    }
}
