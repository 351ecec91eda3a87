//! Relative entropy and the functionals around it.
//!
//! For states `u1 = (f1, g1)` and a positive reference `u2 = (f2, g2)`:
//!
//! ```text
//!   H(u1|u2) = ∫ [f1 ln(f1/f2) - (f1 - f2)] + (b/c) [g1 ln(g1/g2) - (g1 - g2)] dx
//! ```
//!
//! Cell integrals use the midpoint rule; gradient integrals use interior faces,
//! with face values taken as arithmetic means of the adjacent cells.

use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridError, State};
use crate::model::ModelParams;

/// Default lower bound required of the reference state.
pub const DEFAULT_SIGMA_MIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntropyError {
    #[error("degenerate reference state: min(f2, g2) = {min} < {sigma_min}")]
    DegenerateReference { min: f64, sigma_min: f64 },
    #[error("grid mismatch between compared states")]
    GridMismatch,
    #[error(transparent)]
    NegativeState(#[from] GridError),
    #[error("eta must lie in (0, 1), got {0}")]
    BadEta(f64),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("bad series: {0}")]
    BadSeries(String),
}

/// `x ln(x/y) - (x - y)` with `0 ln 0 = 0`, evaluated as `y φ(x/y)` with
/// `φ(r) = r ln r - r + 1` so that the result is nonnegative and exact at `x = y`.
fn entropy_density(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        return y;
    }
    let t = x / y - 1.0;
    let phi = if t.abs() < 1e-2 {
        // (1+t) ln(1+t) - t = Σ_{k>=2} (-1)^k t^k / (k (k-1))
        let mut sum = 0.0;
        let mut tk = t * t;
        for k in 2..12 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * tk / (k * (k - 1)) as f64;
            tk *= t;
        }
        sum
    } else {
        (1.0 + t) * t.ln_1p() - t
    };
    y * phi
}

fn same_grid(u1: &State, u2: &State) -> Result<(), EntropyError> {
    if u1.grid != u2.grid || u1.f.len() != u2.f.len() || u1.g.len() != u2.g.len() {
        return Err(EntropyError::GridMismatch);
    }
    Ok(())
}

fn reference_floor(u2: &State) -> f64 {
    u2.f.iter()
        .chain(&u2.g)
        .fold(f64::INFINITY, |m, &v| if v.is_nan() { f64::NAN } else { m.min(v) })
}

fn check_reference(u2: &State, sigma_min: f64) -> Result<(), EntropyError> {
    let min = reference_floor(u2);
    if !(min >= sigma_min) || !(min > 0.0) {
        return Err(EntropyError::DegenerateReference { min, sigma_min });
    }
    Ok(())
}

/// Cellwise integrand of `H(u1|u2)`, before multiplication by `h`.
pub fn relative_entropy_density(
    p: &ModelParams,
    u1: &State,
    u2: &State,
    sigma_min: f64,
) -> Result<Vec<f64>, EntropyError> {
    same_grid(u1, u2)?;
    u1.check_nonnegative()?;
    check_reference(u2, sigma_min)?;
    let w = p.entropy_weight();
    Ok((0..u1.n_cells())
        .map(|i| entropy_density(u1.f[i], u2.f[i]) + w * entropy_density(u1.g[i], u2.g[i]))
        .collect())
}

pub fn relative_entropy(p: &ModelParams, u1: &State, u2: &State, sigma_min: f64) -> Result<f64, EntropyError> {
    let density = relative_entropy_density(p, u1, u2, sigma_min)?;
    Ok(u1.grid.integrate(&density))
}

/// `H_η(u1|u2)`: the logarithms become `ln((f1 + η)/f2)` and `ln((g1 + η)/g2)`.
pub fn relative_entropy_regularized(p: &ModelParams, u1: &State, u2: &State, eta: f64) -> Result<f64, EntropyError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(EntropyError::BadEta(eta));
    }
    same_grid(u1, u2)?;
    u1.check_nonnegative()?;
    check_reference(u2, 0.0)?;
    let w = p.entropy_weight();
    let term = |x1: f64, x2: f64| x1 * ((x1 + eta) / x2).ln() - (x1 - x2);
    let sum: f64 = (0..u1.n_cells())
        .map(|i| term(u1.f[i], u2.f[i]) + w * term(u1.g[i], u2.g[i]))
        .sum();
    Ok(u1.grid.h() * sum)
}

/// Both sides of `x ln(x/y) - (x - y) >= |x - y|² / (2 max(x, y))`.
pub fn pointwise_quadratic_bound(x: f64, y: f64) -> Result<(f64, f64), EntropyError> {
    if !(x >= 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite() {
        return Err(EntropyError::BadArgs(format!("need x >= 0 and y > 0, got ({x}, {y})")));
    }
    let lhs = entropy_density(x, y);
    let rhs = (x - y) * (x - y) / (2.0 * x.max(y));
    Ok((lhs, rhs))
}

pub fn mass(s: &State) -> (f64, f64) {
    s.masses()
}

/// `∫ |f1 - f2|² + (b/c) |g1 - g2|² dx`.
pub fn weighted_l2_sq(p: &ModelParams, u1: &State, u2: &State) -> Result<f64, EntropyError> {
    same_grid(u1, u2)?;
    let w = p.entropy_weight();
    let sum: f64 = (0..u1.n_cells())
        .map(|i| {
            let df = u1.f[i] - u2.f[i];
            let dg = u1.g[i] - u2.g[i];
            df * df + w * dg * dg
        })
        .sum();
    Ok(u1.grid.h() * sum)
}

/// Pointwise sup of all four components, the constant in the quadratic control of `H`.
pub fn sup_bound(u1: &State, u2: &State) -> f64 {
    u1.f.iter()
        .chain(&u1.g)
        .chain(&u2.f)
        .chain(&u2.g)
        .fold(0.0f64, |m, &v| m.max(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaCheck {
    /// `min_i min(f2[i], g2[i])`
    pub sigma_lower: f64,
    /// Largest interior face gradient magnitude of `f2` and `g2`.
    pub grad_sup: f64,
}

pub fn sigma_bounds(u2: &State) -> SigmaCheck {
    let grid = &u2.grid;
    let h = grid.h();
    let grad_sup = (1..u2.n_cells())
        .map(|k| {
            let gf = ((u2.f[k] - u2.f[k - 1]) / h).abs();
            let gg = ((u2.g[k] - u2.g[k - 1]) / h).abs();
            gf.max(gg)
        })
        .fold(0.0f64, f64::max);
    SigmaCheck {
        sigma_lower: reference_floor(u2),
        grad_sup,
    }
}

/// Instantaneous entropy-production pieces. `t2_i + t2_ii` is the rate
/// `-∫ ∇(a(f1-f2) + b(g1-g2))·(∇f1 - (f1/f2)∇f2) + (b/c) ∇(c(f1-f2) + d(g1-g2))·(∇g1 - (g1/g2)∇g2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductionDecomposition {
    pub t2_i: f64,
    pub t2_ii: f64,
    /// Completed-square bound on `t2_i`.
    pub bound_i: f64,
    /// Young-inequality bound on `t2_ii / a`.
    pub bound_ii: f64,
}

impl ProductionDecomposition {
    pub fn total(&self) -> f64 {
        self.t2_i + self.t2_ii
    }
}

/// Per-face quantities, before the factor `h`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FaceProduction {
    pub t2: f64,
    pub t2_i: f64,
    pub bound_i: f64,
    pub bound_ii: f64,
}

pub(crate) fn face_production(
    p: &ModelParams,
    (f1, f2, g1, g2): (f64, f64, f64, f64),
    (df1, df2, dg1, dg2): (f64, f64, f64, f64),
) -> FaceProduction {
    let (a, b, c, d) = (p.a(), p.b(), p.c(), p.d());
    let w = p.entropy_weight();
    let k = b * p.determinant() / (a * c);
    let rf = f1 / f2;
    let rg = g1 / g2;

    let t2 = -(a * (df1 - df2) + b * (dg1 - dg2)) * (df1 - rf * df2)
        - w * (c * (df1 - df2) + d * (dg1 - dg2)) * (dg1 - rg * dg2);
    let t2_i = -k * (dg1 * dg1 - (1.0 + rg) * dg1 * dg2 + rg * dg2 * dg2);

    let qi = (g1 - g2) / (2.0 * g2) * dg2;
    let qf = (f1 - f2) / f2 * df2;
    let qg = (g1 - g2) / g2 * dg2;
    FaceProduction {
        t2,
        t2_i,
        bound_i: k * qi * qi,
        bound_ii: 0.5 * (qf * qf + (b / a) * (b / a) * qg * qg),
    }
}

pub fn production_decomposition(
    p: &ModelParams,
    u1: &State,
    u2: &State,
) -> Result<ProductionDecomposition, EntropyError> {
    same_grid(u1, u2)?;
    u1.check_nonnegative()?;
    check_reference(u2, 0.0)?;
    let h = u1.grid.h();
    let mean = |v: &[f64], k: usize| 0.5 * (v[k - 1] + v[k]);
    let diff = |v: &[f64], k: usize| (v[k] - v[k - 1]) / h;
    let mut out = ProductionDecomposition {
        t2_i: 0.0,
        t2_ii: 0.0,
        bound_i: 0.0,
        bound_ii: 0.0,
    };
    let mut t2 = 0.0;
    // Boundary faces carry zero gradients and contribute nothing.
    for k in 1..u1.n_cells() {
        let fp = face_production(
            p,
            (mean(&u1.f, k), mean(&u2.f, k), mean(&u1.g, k), mean(&u2.g, k)),
            (diff(&u1.f, k), diff(&u2.f, k), diff(&u1.g, k), diff(&u2.g, k)),
        );
        t2 += fp.t2;
        out.t2_i += fp.t2_i;
        out.bound_i += fp.bound_i;
        out.bound_ii += fp.bound_ii;
    }
    out.t2_i *= h;
    out.bound_i *= h;
    out.bound_ii *= h;
    out.t2_ii = h * t2 - out.t2_i;
    Ok(out)
}

/// Convex function whose chain rule is checked by [`chain_rule_residual`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ChainRulePhi {
    /// `Φ(x) = x ln(x + η)`
    XlogxEta(f64),
    /// `Φ(x) = x²`
    Square,
}

impl ChainRulePhi {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ChainRulePhi::XlogxEta(eta) => x * (x + eta).ln(),
            ChainRulePhi::Square => x * x,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ChainRulePhi::XlogxEta(eta) => (x + eta).ln() + x / (x + eta),
            ChainRulePhi::Square => 2.0 * x,
        }
    }
}

/// Largest defect, over consecutive pairs of an equally spaced series, of
/// `∫Φ(f_{k+1}) - ∫Φ(f_k) = ⟨f_{k+1} - f_k, Φ'((f_k + f_{k+1})/2)⟩`.
pub fn chain_rule_residual(series: &[State], phi: ChainRulePhi) -> Result<f64, EntropyError> {
    if series.len() < 2 {
        return Err(EntropyError::BadSeries(format!(
            "need at least 2 states, got {}",
            series.len()
        )));
    }
    if let ChainRulePhi::XlogxEta(eta) = phi {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(EntropyError::BadEta(eta));
        }
    }
    let grid = &series[0].grid;
    if series.iter().any(|s| &s.grid != grid || s.f.len() != grid.n_cells()) {
        return Err(EntropyError::BadSeries("states live on different grids".into()));
    }
    let dt0 = series[1].time - series[0].time;
    if !(dt0 > 0.0) {
        return Err(EntropyError::BadSeries("times must increase".into()));
    }
    for w in series.windows(2) {
        let dt = w[1].time - w[0].time;
        if (dt - dt0).abs() > 1e-9 * dt0 {
            return Err(EntropyError::BadSeries(format!("unequal spacing: {dt} vs {dt0}")));
        }
    }
    for s in series {
        s.check_nonnegative()?;
    }
    let integral = |s: &State| grid.integrate(&s.f.iter().map(|&x| phi.value(x)).collect::<Vec<_>>());
    let mut worst = 0.0f64;
    for w in series.windows(2) {
        let (a, b) = (&w[0].f, &w[1].f);
        let pairing: f64 = a
            .iter()
            .zip(b)
            .map(|(&x0, &x1)| (x1 - x0) * phi.derivative(0.5 * (x0 + x1)))
            .sum::<f64>()
            * grid.h();
        worst = worst.max((integral(&w[1]) - integral(&w[0]) - pairing).abs());
    }
    Ok(worst)
}

/// One diagnostics row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyRecord {
    pub time: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "H_eta")]
    pub h_eta: Option<f64>,
    pub mass_f: f64,
    pub mass_g: f64,
    pub l2w_sq: f64,
    pub sigma_check: SigmaCheck,
    pub production: Option<ProductionDecomposition>,
}

/// Evaluates every diagnostic of `u1` against the reference `u2`.
pub fn entropy_record(
    p: &ModelParams,
    u1: &State,
    u2: &State,
    sigma_min: f64,
    eta: Option<f64>,
) -> Result<EntropyRecord, EntropyError> {
    let h = relative_entropy(p, u1, u2, sigma_min)?;
    let h_eta = eta.map(|e| relative_entropy_regularized(p, u1, u2, e)).transpose()?;
    let (mass_f, mass_g) = u1.masses();
    Ok(EntropyRecord {
        time: u1.time,
        h,
        h_eta,
        mass_f,
        mass_g,
        l2w_sq: weighted_l2_sq(p, u1, u2)?,
        sigma_check: sigma_bounds(u2),
        production: Some(production_decomposition(p, u1, u2)?),
    })
}
