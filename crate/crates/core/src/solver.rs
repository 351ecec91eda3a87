//! Fully implicit conservative finite-volume time stepping.
//!
//! Each step solves the backward-Euler system
//!
//! ```text
//!   (f'_i - f_i) / dt = (F_f[i+1] - F_f[i]) / h + S_f(t', x_i)
//!   (g'_i - g_i) / dt = (F_g[i+1] - F_g[i]) / h + S_g(t', x_i)
//! ```
//!
//! with face fluxes `F_f[k] = m_f(k) * D_k(a f' + b g')`,
//! `F_g[k] = m_g(k) * D_k(c f' + d g')` and zero flux on both boundary faces.
//! The unknowns are ordered cell by cell as `(f_i, g_i)`, which makes the
//! Jacobian block tridiagonal with 2x2 blocks. Newton updates are backtracked
//! until the iterate is componentwise nonnegative; nothing is ever clipped.
//!
//! Every Newton update `delta` satisfies `sum(delta_f) = -sum(R_f)`, so once
//! the iterate has the mass of the previous state all later iterates keep it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, State};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("negative input state: {0}")]
    NegativeState(#[from] GridError),
    #[error("Newton iteration did not converge (final residual {final_residual:e})")]
    NewtonDiverged { final_residual: f64 },
    #[error("no nonnegative damped Newton iterate (residual {residual:e}, iteration {iteration})")]
    PositivityLost { iteration: usize, residual: f64 },
    #[error("singular Jacobian block at cell {cell}")]
    SingularJacobian { cell: usize },
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
    #[error("at t = {time}: {source}")]
    AtTime {
        time: f64,
        #[source]
        source: Box<SolverError>,
    },
}

impl SolverError {
    /// Innermost error, without attached time context.
    pub fn root(&self) -> &SolverError {
        match self {
            SolverError::AtTime { source, .. } => source.root(),
            e => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MobilityAverage {
    #[default]
    Arithmetic,
    Upwind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub mobility_average: MobilityAverage,
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            mobility_average: MobilityAverage::Arithmetic,
            damping: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn with_dt(dt: f64) -> Self {
        Self { dt, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SolverError::BadConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.newton_tol > 0.0) {
            return Err(SolverError::BadConfig(format!(
                "newton_tol must be > 0, got {}",
                self.newton_tol
            )));
        }
        if self.newton_max_iter < 1 {
            return Err(SolverError::BadConfig("newton_max_iter must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(SolverError::BadConfig(format!(
                "damping must lie in (0, 1), got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepReport {
    pub newton_iters: usize,
    pub final_residual: f64,
    pub positivity_clipped: bool,
    /// Number of halvings (or `damping` reductions) applied over all iterations.
    pub backtracks: usize,
    /// Number of times the step was split in two after Newton failed.
    pub substeps: usize,
}

/// Source term evaluated at `(t, x)`, returning `(S_f, S_g)`.
pub type SourceFn<'a> = &'a dyn Fn(f64, f64) -> (f64, f64);

type Block = [[f64; 2]; 2];

const ZERO_BLOCK: Block = [[0.0; 2]; 2];
const IDENTITY_BLOCK: Block = [[1.0, 0.0], [0.0, 1.0]];

/// Face mobility and its derivatives with respect to the left and right cell values.
fn face_mobility(avg: MobilityAverage, left: f64, right: f64, grad: f64) -> (f64, f64, f64) {
    match avg {
        MobilityAverage::Arithmetic => (0.5 * (left + right), 0.5, 0.5),
        // The donor cell is the one with the larger pressure: for grad > 0
        // mass moves from the right cell to the left one.
        MobilityAverage::Upwind => {
            if grad > 0.0 {
                (right, 0.0, 1.0)
            } else {
                (left, 1.0, 0.0)
            }
        }
    }
}

/// Interior and boundary face fluxes `(F_f, F_g)`, each of length `n_cells + 1`.
pub fn assemble_fluxes(p: &ModelParams, s: &State, cfg: &SolverConfig) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    s.check_nonnegative()?;
    let n = s.n_cells();
    let h = s.grid.h();
    let ((a, b), (c, d)) = p.pressure_gradients_coeffs();
    let mut ff = vec![0.0; n + 1];
    let mut fg = vec![0.0; n + 1];
    for k in 1..n {
        let (l, r) = (k - 1, k);
        let df = s.f[r] - s.f[l];
        let dg = s.g[r] - s.g[l];
        let grad_p = (a * df + b * dg) / h;
        let grad_q = (c * df + d * dg) / h;
        let (mf, _, _) = face_mobility(cfg.mobility_average, s.f[l], s.f[r], grad_p);
        let (mg, _, _) = face_mobility(cfg.mobility_average, s.g[l], s.g[r], grad_q);
        ff[k] = mf * grad_p;
        fg[k] = mg * grad_q;
    }
    Ok((ff, fg))
}

struct Newton<'a> {
    p: &'a ModelParams,
    old: &'a State,
    avg: MobilityAverage,
    dt: f64,
    t_new: f64,
    source: Option<SourceFn<'a>>,
}

struct Linearization {
    residual: Vec<[f64; 2]>,
    lower: Vec<Block>,
    diag: Vec<Block>,
    upper: Vec<Block>,
}

impl Newton<'_> {
    fn residual_only(&self, f: &[f64], g: &[f64]) -> Vec<[f64; 2]> {
        self.assemble(f, g, false).residual
    }

    fn assemble(&self, f: &[f64], g: &[f64], with_jacobian: bool) -> Linearization {
        let n = f.len();
        let grid = &self.old.grid;
        let h = grid.h();
        let mu = self.dt / h;
        let ((a, b), (c, d)) = self.p.pressure_gradients_coeffs();

        let mut residual: Vec<[f64; 2]> = (0..n).map(|i| [f[i] - self.old.f[i], g[i] - self.old.g[i]]).collect();
        if let Some(src) = self.source {
            for (i, &x) in grid.cell_centers().iter().enumerate() {
                let (sf, sg) = src(self.t_new, x);
                residual[i][0] -= self.dt * sf;
                residual[i][1] -= self.dt * sg;
            }
        }
        let (mut lower, mut diag, mut upper) = if with_jacobian {
            (vec![ZERO_BLOCK; n], vec![IDENTITY_BLOCK; n], vec![ZERO_BLOCK; n])
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };

        for k in 1..n {
            let (l, r) = (k - 1, k);
            let df = f[r] - f[l];
            let dg = g[r] - g[l];
            // Row 0: f-equation with pressure a f + b g; row 1: g-equation with c f + d g.
            let rows = [
                (a, b, grad(a, b, df, dg, h), f[l], f[r]),
                (c, d, grad(c, d, df, dg, h), g[l], g[r]),
            ];
            for (row, &(cf, cg, gr, vl, vr)) in rows.iter().enumerate() {
                let (m, dml, dmr) = face_mobility(self.avg, vl, vr, gr);
                let flux = m * gr;
                residual[l][row] -= mu * flux;
                residual[r][row] += mu * flux;
                if !with_jacobian {
                    continue;
                }
                // d flux / d (f_l, g_l) and d flux / d (f_r, g_r)
                let mut dl = [-m * cf / h, -m * cg / h];
                let mut dr = [m * cf / h, m * cg / h];
                dl[row] += dml * gr;
                dr[row] += dmr * gr;
                for col in 0..2 {
                    diag[l][row][col] -= mu * dl[col];
                    upper[l][row][col] -= mu * dr[col];
                    lower[r][row][col] += mu * dl[col];
                    diag[r][row][col] += mu * dr[col];
                }
            }
        }
        Linearization {
            residual,
            lower,
            diag,
            upper,
        }
    }
}

fn grad(cf: f64, cg: f64, df: f64, dg: f64, h: f64) -> f64 {
    (cf * df + cg * dg) / h
}

fn max_norm(r: &[[f64; 2]]) -> f64 {
    r.iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |acc, &x| if x.is_nan() { f64::NAN } else { acc.max(x.abs()) })
}

fn inv2(m: &Block) -> Option<Block> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

fn mul2(x: &Block, y: &Block) -> Block {
    let mut out = ZERO_BLOCK;
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
        }
    }
    out
}

fn mulv(x: &Block, v: &[f64; 2]) -> [f64; 2] {
    [x[0][0] * v[0] + x[0][1] * v[1], x[1][0] * v[0] + x[1][1] * v[1]]
}

/// Block Thomas elimination for `J x = rhs`. Consumes the linearization.
fn solve_block_tridiagonal(lin: Linearization, rhs: Vec<[f64; 2]>) -> Result<Vec<[f64; 2]>, SolverError> {
    let Linearization {
        lower, mut diag, upper, ..
    } = lin;
    let n = diag.len();
    let mut c_prime = vec![ZERO_BLOCK; n];
    let mut y = rhs;
    for i in 0..n {
        if i > 0 {
            let lc = mul2(&lower[i], &c_prime[i - 1]);
            let ly = mulv(&lower[i], &y[i - 1]);
            for r in 0..2 {
                y[i][r] -= ly[r];
                for c in 0..2 {
                    diag[i][r][c] -= lc[r][c];
                }
            }
        }
        let inv = inv2(&diag[i]).ok_or(SolverError::SingularJacobian { cell: i })?;
        c_prime[i] = mul2(&inv, &upper[i]);
        y[i] = mulv(&inv, &y[i]);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        let cx = mulv(&c_prime[i], &y[i + 1]);
        y[i][0] -= cx[0];
        y[i][1] -= cx[1];
    }
    Ok(y)
}

/// Deepest recursive halving of a failed step.
const MAX_SPLIT_DEPTH: u32 = 8;

pub(crate) fn step_with(
    p: &ModelParams,
    s: &State,
    cfg: &SolverConfig,
    dt: f64,
    source: Option<SourceFn<'_>>,
) -> Result<(State, StepReport), SolverError> {
    cfg.validate()?;
    s.check_nonnegative()?;
    split_step(p, s, cfg, dt, source, 0)
}

/// Backward Euler over `dt`; if Newton fails, the interval is covered by two
/// half steps instead.
fn split_step(
    p: &ModelParams,
    s: &State,
    cfg: &SolverConfig,
    dt: f64,
    source: Option<SourceFn<'_>>,
    depth: u32,
) -> Result<(State, StepReport), SolverError> {
    match single_step(p, s, cfg, dt, source) {
        Err(e @ (SolverError::PositivityLost { .. } | SolverError::NewtonDiverged { .. })) => {
            if depth == MAX_SPLIT_DEPTH {
                return Err(e);
            }
            let (mid, r1) = split_step(p, s, cfg, 0.5 * dt, source, depth + 1).map_err(|_| e.clone())?;
            let (mut end, r2) = split_step(p, &mid, cfg, 0.5 * dt, source, depth + 1).map_err(|_| e)?;
            end.time = s.time + dt;
            let report = StepReport {
                newton_iters: r1.newton_iters + r2.newton_iters,
                final_residual: r1.final_residual.max(r2.final_residual),
                positivity_clipped: false,
                backtracks: r1.backtracks + r2.backtracks,
                substeps: 1 + r1.substeps + r2.substeps,
            };
            Ok((end, report))
        }
        other => other,
    }
}

fn single_step(
    p: &ModelParams,
    s: &State,
    cfg: &SolverConfig,
    dt: f64,
    source: Option<SourceFn<'_>>,
) -> Result<(State, StepReport), SolverError> {
    let newton = Newton {
        p,
        old: s,
        avg: cfg.mobility_average,
        dt,
        t_new: s.time + dt,
        source,
    };
    // From a state touching zero the first Newton direction can point out of
    // the admissible set in every cell-neighbourhood of the zero. The transport
    // predictor moves such cells inside first.
    let solved = match newton.solve(s.f.clone(), s.g.clone(), cfg) {
        Err(SolverError::PositivityLost { .. }) => {
            let (f0, g0) = newton.transport_predictor()?;
            newton.solve(f0, g0, cfg)
        }
        other => other,
    };
    let (f, g, report) = solved?;
    let out = State {
        grid: s.grid.clone(),
        f,
        g,
        time: newton.t_new,
    };
    Ok((out, report))
}

impl Newton<'_> {
    fn solve(
        &self,
        mut f: Vec<f64>,
        mut g: Vec<f64>,
        cfg: &SolverConfig,
    ) -> Result<(Vec<f64>, Vec<f64>, StepReport), SolverError> {
        let mut backtracks = 0;
        let min_lambda = 1e-12;
        let mut lin = self.assemble(&f, &g, true);
        let mut res = max_norm(&lin.residual);
        for iter in 0..=cfg.newton_max_iter {
            if res <= cfg.newton_tol {
                let report = StepReport {
                    newton_iters: iter,
                    final_residual: res,
                    positivity_clipped: false,
                    backtracks,
                    substeps: 0,
                };
                return Ok((f, g, report));
            }
            if iter == cfg.newton_max_iter || !res.is_finite() {
                break;
            }
            let rhs: Vec<[f64; 2]> = lin.residual.iter().map(|r| [-r[0], -r[1]]).collect();
            let delta = solve_block_tridiagonal(lin, rhs)?;

            let mut lambda = 1.0;
            let (nf, ng) = loop {
                let nf: Vec<f64> = f.iter().zip(&delta).map(|(x, d)| x + lambda * d[0]).collect();
                let ng: Vec<f64> = g.iter().zip(&delta).map(|(x, d)| x + lambda * d[1]).collect();
                if nf.iter().chain(&ng).all(|&v| v >= 0.0) {
                    break (nf, ng);
                }
                lambda *= cfg.damping;
                backtracks += 1;
                if lambda < min_lambda {
                    return Err(SolverError::PositivityLost {
                        iteration: iter,
                        residual: res,
                    });
                }
            };
            f = nf;
            g = ng;
            lin = self.assemble(&f, &g, true);
            res = max_norm(&lin.residual);
        }
        Err(SolverError::NewtonDiverged { final_residual: res })
    }

    /// Implicit upwind transport of each component in the frozen velocity
    /// `-∇P(old)`. The matrix is an M-matrix, so the result is nonnegative and
    /// has the old masses; a component that vanishes identically is kept as is.
    fn transport_predictor(&self) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
        let old = self.old;
        let n = old.n_cells();
        let h = old.grid.h();
        let mu = self.dt / h;
        let ((a, b), (c, d)) = self.p.pressure_gradients_coeffs();
        let mut lin = Linearization {
            residual: Vec::new(),
            lower: vec![ZERO_BLOCK; n],
            diag: vec![IDENTITY_BLOCK; n],
            upper: vec![ZERO_BLOCK; n],
        };
        for k in 1..n {
            let (l, r) = (k - 1, k);
            let df = old.f[r] - old.f[l];
            let dg = old.g[r] - old.g[l];
            for (row, v) in [grad(a, b, df, dg, h), grad(c, d, df, dg, h)].into_iter().enumerate() {
                // flux = v⁺ u_r + v⁻ u_l
                let (vp, vm) = (v.max(0.0), v.min(0.0));
                lin.diag[l][row][row] -= mu * vm;
                lin.upper[l][row][row] -= mu * vp;
                lin.lower[r][row][row] += mu * vm;
                lin.diag[r][row][row] += mu * vp;
            }
        }
        let rhs: Vec<[f64; 2]> = (0..n).map(|i| [old.f[i], old.g[i]]).collect();
        let sol = solve_block_tridiagonal(lin, rhs)?;
        let pick = |col: usize, u: &[f64]| -> Vec<f64> {
            if u.iter().all(|&x| x == 0.0) {
                u.to_vec()
            } else {
                sol.iter().map(|v| v[col]).collect()
            }
        };
        Ok((pick(0, &old.f), pick(1, &old.g)))
    }
}

/// One backward-Euler step of size `cfg.dt`.
pub fn step(p: &ModelParams, s: &State, cfg: &SolverConfig) -> Result<(State, StepReport), SolverError> {
    step_with(p, s, cfg, cfg.dt, None)
}

/// Max-norm of the backward-Euler residual of `candidate` against `previous`.
pub fn step_residual(p: &ModelParams, previous: &State, candidate: &State, cfg: &SolverConfig) -> f64 {
    let newton = Newton {
        p,
        old: previous,
        avg: cfg.mobility_average,
        dt: candidate.time - previous.time,
        t_new: candidate.time,
        source: None,
    };
    max_norm(&newton.residual_only(&candidate.f, &candidate.g))
}

pub(crate) fn run_with(
    p: &ModelParams,
    s0: &State,
    cfg: &SolverConfig,
    t_end: f64,
    source: Option<SourceFn<'_>>,
    observer: &mut dyn FnMut(&State, &StepReport),
) -> Result<State, SolverError> {
    cfg.validate()?;
    if !(t_end >= s0.time) {
        return Err(SolverError::BadConfig(format!(
            "t_end = {t_end} precedes the initial time {}",
            s0.time
        )));
    }
    // Remaining intervals below this are treated as already reached.
    let eps = 1e-12 * cfg.dt;
    let mut s = s0.clone();
    loop {
        let remaining = t_end - s.time;
        if remaining <= eps {
            break;
        }
        let last = remaining <= cfg.dt * (1.0 + 1e-9);
        let dt = if last { remaining } else { cfg.dt };
        let (mut next, report) = step_with(p, &s, cfg, dt, source).map_err(|e| SolverError::AtTime {
            time: s.time,
            source: Box::new(e),
        })?;
        if last {
            next.time = t_end;
        }
        observer(&next, &report);
        s = next;
    }
    Ok(s)
}

/// Advances `s0` to `t_end` with fixed steps, shortening the last one to land on
/// `t_end`. The observer sees every accepted state.
pub fn run(
    p: &ModelParams,
    s0: &State,
    cfg: &SolverConfig,
    t_end: f64,
    mut observer: impl FnMut(&State),
) -> Result<State, SolverError> {
    run_with(p, s0, cfg, t_end, None, &mut |s, _| observer(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::model::new_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn muskat() -> ModelParams {
        new_model(1.0, 1.0, 1.0, 2.0).unwrap()
    }

    fn smooth_state(n: usize, seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
        let grid = make_grid(0.0, 1.0, n).unwrap();
        let pi = std::f64::consts::PI;
        State::from_fn(
            grid,
            |x| 1.0 + amps[0] * (pi * x).cos() + amps[1] * (2.0 * pi * x).cos() + amps[2] * (3.0 * pi * x).cos(),
            |x| 1.0 + amps[3] * (pi * x).cos() + amps[4] * (2.0 * pi * x).cos() + amps[5] * (3.0 * pi * x).cos(),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn flux_examples() {
        let p = muskat();
        let grid = make_grid(0.0, 1.0, 8).unwrap();
        let cfg = SolverConfig::default();
        let s = State::new(grid.clone(), vec![0.7; 8], vec![1.3; 8], 0.0).unwrap();
        let (ff, fg) = assemble_fluxes(&p, &s, &cfg).unwrap();
        assert!(ff.iter().chain(&fg).all(|&v| v == 0.0));

        // two cells, h = 0.5: F_f = 1.5 * (2 - 1) / 0.5 = 3
        let two = make_grid(0.0, 1.0, 2).unwrap();
        let s = State::new(two, vec![1.0, 2.0], vec![0.0, 0.0], 0.0).unwrap();
        let (ff, fg) = assemble_fluxes(&p, &s, &cfg).unwrap();
        assert_eq!(ff, vec![0.0, 3.0, 0.0]);
        assert_eq!(fg, vec![0.0; 3]);
    }

    #[test]
    fn flux_with_vanishing_g_is_pme_flux() {
        let p = new_model(2.0, 1.0, 1.0, 3.0).unwrap();
        let grid = make_grid(0.0, 1.0, 5).unwrap();
        let f = vec![0.1, 0.5, 0.9, 0.4, 0.0];
        let s = State::new(grid.clone(), f.clone(), vec![0.0; 5], 0.0).unwrap();
        let (ff, fg) = assemble_fluxes(&p, &s, &SolverConfig::default()).unwrap();
        assert!(fg.iter().all(|&v| v == 0.0));
        for k in 1..5 {
            let expected = 0.5 * (f[k - 1] + f[k]) * 2.0 * (f[k] - f[k - 1]) / grid.h();
            assert!((ff[k] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn upwind_takes_donor_cell() {
        let p = muskat();
        let grid = make_grid(0.0, 1.0, 2).unwrap();
        let cfg = SolverConfig {
            mobility_average: MobilityAverage::Upwind,
            ..SolverConfig::default()
        };
        // pressure higher on the right: donor is cell 1
        let s = State::new(grid, vec![1.0, 2.0], vec![0.0, 0.0], 0.0).unwrap();
        let (ff, _) = assemble_fluxes(&p, &s, &cfg).unwrap();
        assert_eq!(ff[1], 2.0 * (2.0 - 1.0) / 0.5);
    }

    #[test]
    fn negative_input_is_rejected() {
        let grid = make_grid(0.0, 1.0, 3).unwrap();
        let s = State {
            grid,
            f: vec![1.0, -1.0, 1.0],
            g: vec![1.0; 3],
            time: 0.0,
        };
        assert!(matches!(
            assemble_fluxes(&muskat(), &s, &SolverConfig::default()),
            Err(SolverError::NegativeState(_))
        ));
        assert!(matches!(
            step(&muskat(), &s, &SolverConfig::default()),
            Err(SolverError::NegativeState(_))
        ));
    }

    #[test]
    fn bad_config_is_rejected() {
        let s = smooth_state(8, 1);
        for cfg in [
            SolverConfig::with_dt(0.0),
            SolverConfig {
                newton_tol: 0.0,
                ..SolverConfig::default()
            },
            SolverConfig {
                newton_max_iter: 0,
                ..SolverConfig::default()
            },
            SolverConfig {
                damping: 1.0,
                ..SolverConfig::default()
            },
        ] {
            assert!(matches!(step(&muskat(), &s, &cfg), Err(SolverError::BadConfig(_))));
        }
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let grid = make_grid(0.0, 1.0, 16).unwrap();
        let s = State::new(grid, vec![1.0; 16], vec![2.0; 16], 0.0).unwrap();
        let (next, rep) = step(&muskat(), &s, &SolverConfig::with_dt(0.1)).unwrap();
        assert!(rep.newton_iters <= 1);
        assert_eq!(next.f, s.f);
        assert_eq!(next.g, s.g);
        assert!(!rep.positivity_clipped);
    }

    #[test]
    fn converged_step_satisfies_residual_and_conserves_mass() {
        let p = muskat();
        let s = smooth_state(64, 3);
        let cfg = SolverConfig::with_dt(1e-2);
        let (next, rep) = step(&p, &s, &cfg).unwrap();
        assert!(rep.final_residual <= cfg.newton_tol);
        assert!(step_residual(&p, &s, &next, &cfg) <= cfg.newton_tol);
        let (m0f, m0g) = s.masses();
        let (m1f, m1g) = next.masses();
        assert!((m1f - m0f).abs() <= 1e-13 * m0f);
        assert!((m1g - m0g).abs() <= 1e-13 * m0g);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = new_model(1.3, 0.7, 0.4, 2.1).unwrap();
        let s = smooth_state(6, 11);
        for avg in [MobilityAverage::Arithmetic, MobilityAverage::Upwind] {
            let newton = Newton {
                p: &p,
                old: &s,
                avg,
                dt: 0.05,
                t_new: 0.05,
                source: None,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let f: Vec<f64> = s.f.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            let g: Vec<f64> = s.g.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
            let lin = newton.assemble(&f, &g, true);
            let n = f.len();
            let eps = 1e-7;
            for j in 0..n {
                for comp in 0..2 {
                    let (mut fp, mut gp) = (f.clone(), g.clone());
                    let (mut fm, mut gm) = (f.clone(), g.clone());
                    if comp == 0 {
                        fp[j] += eps;
                        fm[j] -= eps;
                    } else {
                        gp[j] += eps;
                        gm[j] -= eps;
                    }
                    let rp = newton.residual_only(&fp, &gp);
                    let rm = newton.residual_only(&fm, &gm);
                    for i in 0..n {
                        for row in 0..2 {
                            let fd = (rp[i][row] - rm[i][row]) / (2.0 * eps);
                            let analytic = if i == j {
                                lin.diag[i][row][comp]
                            } else if j + 1 == i {
                                lin.lower[i][row][comp]
                            } else if i + 1 == j {
                                lin.upper[i][row][comp]
                            } else {
                                0.0
                            };
                            assert!(
                                (fd - analytic).abs() < 1e-6,
                                "{avg:?} d R[{i}][{row}] / d x[{j}][{comp}]: fd {fd} vs {analytic}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn block_solver_matches_dense_solution() {
        // Build a random diagonally dominant block tridiagonal system and check J x = b.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 7;
        let mut blk = || -> Block {
            [
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            ]
        };
        let lower: Vec<Block> = (0..n).map(|_| blk()).collect();
        let upper: Vec<Block> = (0..n).map(|_| blk()).collect();
        let diag: Vec<Block> = (0..n)
            .map(|_| {
                let mut d = blk();
                d[0][0] += 5.0;
                d[1][1] += 5.0;
                d
            })
            .collect();
        let rhs: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, 1.0 - i as f64]).collect();
        let lin = Linearization {
            residual: vec![],
            lower: lower.clone(),
            diag: diag.clone(),
            upper: upper.clone(),
        };
        let x = solve_block_tridiagonal(lin, rhs.clone()).unwrap();
        for i in 0..n {
            let mut ax = mulv(&diag[i], &x[i]);
            if i > 0 {
                let l = mulv(&lower[i], &x[i - 1]);
                ax = [ax[0] + l[0], ax[1] + l[1]];
            }
            if i + 1 < n {
                let u = mulv(&upper[i], &x[i + 1]);
                ax = [ax[0] + u[0], ax[1] + u[1]];
            }
            assert!((ax[0] - rhs[i][0]).abs() < 1e-12 && (ax[1] - rhs[i][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_component_stays_exactly_zero() {
        let p = muskat();
        let grid = make_grid(0.0, 1.0, 32).unwrap();
        let s = State::from_fn(grid, |_| 0.0, |x| 1.0 + 0.5 * (3.0 * x).sin(), 0.0).unwrap();
        let cfg = SolverConfig::with_dt(5e-3);
        let out = run(&p, &s, &cfg, 0.1, |st| assert!(st.f.iter().all(|&v| v == 0.0))).unwrap();
        assert!(out.f.iter().all(|&v| v.to_bits() == 0));
    }

    #[test]
    fn swap_equivariance() {
        let p = new_model(2.0, 0.5, 0.7, 1.5).unwrap();
        let s = smooth_state(32, 9);
        let cfg = SolverConfig::with_dt(1e-2);
        let (a, _) = step(&p, &s, &cfg).unwrap();
        let (b, _) = step(&p.swapped(), &s.swapped(), &cfg).unwrap();
        let b = b.swapped();
        for i in 0..32 {
            assert!((a.f[i] - b.f[i]).abs() <= 1e-12 && (a.g[i] - b.g[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_run_never_calls_observer() {
        let s = smooth_state(8, 4);
        let mut calls = 0;
        let out = run(&muskat(), &s, &SolverConfig::default(), 0.0, |_| calls += 1).unwrap();
        assert_eq!(calls, 0);
        assert_eq!(out, s);
    }

    #[test]
    fn run_lands_exactly_on_t_end() {
        let s = smooth_state(16, 4);
        let mut times = Vec::new();
        let out = run(&muskat(), &s, &SolverConfig::with_dt(0.03), 0.1, |st| {
            times.push(st.time)
        })
        .unwrap();
        assert_eq!(out.time, 0.1);
        assert_eq!(times.len(), 4);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn run_is_deterministic() {
        let s = smooth_state(32, 4);
        let cfg = SolverConfig::with_dt(1e-2);
        let a = run(&muskat(), &s, &cfg, 0.2, |_| {}).unwrap();
        let b = run(&muskat(), &s, &cfg, 0.2, |_| {}).unwrap();
        assert!(a.f.iter().zip(&b.f).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.g.iter().zip(&b.g).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn restart_consistency() {
        let s = smooth_state(32, 8);
        let cfg = SolverConfig::with_dt(0.0125);
        let p = muskat();
        let whole = run(&p, &s, &cfg, 0.2, |_| {}).unwrap();
        let half = run(&p, &s, &cfg, 0.1, |_| {}).unwrap();
        let resumed = run(&p, &half, &cfg, 0.2, |_| {}).unwrap();
        assert_eq!(resumed.time, 0.2);
        for i in 0..32 {
            assert!((whole.f[i] - resumed.f[i]).abs() < 1e-12);
            assert!((whole.g[i] - resumed.g[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn run_rejects_t_end_before_start() {
        let mut s = smooth_state(8, 4);
        s.time = 1.0;
        assert!(matches!(
            run(&muskat(), &s, &SolverConfig::default(), 0.5, |_| {}),
            Err(SolverError::BadConfig(_))
        ));
    }

    #[test]
    fn step_errors_carry_time() {
        let s = smooth_state(32, 4);
        let cfg = SolverConfig {
            dt: 10.0,
            newton_max_iter: 1,
            ..SolverConfig::default()
        };
        let err = run(&muskat(), &s, &cfg, 20.0, |_| {}).unwrap_err();
        match &err {
            SolverError::AtTime { time, .. } => assert_eq!(*time, 0.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            err.root(),
            SolverError::NewtonDiverged { .. } | SolverError::PositivityLost { .. }
        ));
    }

    #[test]
    fn upwind_steps_from_vacuum_touching_states() {
        let p = muskat();
        let grid = make_grid(0.0, 1.0, 128).unwrap();
        let cfg = SolverConfig {
            mobility_average: MobilityAverage::Upwind,
            ..SolverConfig::with_dt(5e-4)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        rng.set_stream(3);
        for _ in 0..100 {
            let s0 = crate::harness::config::random_smooth_state(&grid, &mut rng, 0.0);
            assert!(s0.f.iter().chain(&s0.g).any(|&v| v == 0.0));
            let (mf, mg) = s0.masses();
            let s1 = run(&p, &s0, &cfg, 0.01, |s| assert!(s.check_nonnegative().is_ok())).unwrap();
            let (nf, ng) = s1.masses();
            assert!(((nf - mf) / mf).abs() <= 1e-12 && ((ng - mg) / mg).abs() <= 1e-12);
        }
    }
}
