//! Reference solutions: constants, the Barenblatt profile of the `g ≡ 0`
//! reduction, and manufactured smooth pairs with closed-form sources.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid1D, GridError, State};
use crate::model::ModelParams;
use crate::solver::{run_with, SolverConfig, SolverError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("Barenblatt profile needs t + t0 > 0 (t = {t}, t0 = {t0})")]
    BadTime { t: f64, t0: f64 },
    #[error("bad Barenblatt parameters: {0}")]
    BadParameters(String),
    #[error(transparent)]
    NegativeState(#[from] GridError),
}

/// Source-type self-similar solution of `∂t f = (a/2) ∂xx(f²)` on the whole line.
///
/// With `τ = (a/2)(t + t0)` the profile is
/// `f = τ^{-1/3} (C - (x - x0)² / (12 τ^{2/3}))_+`, with `C = (3M / (8√3))^{2/3}`
/// fixed by the total mass `M`. The support is `|x - x0| <= sqrt(12 C) τ^{1/3}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barenblatt {
    pub a: f64,
    pub t0: f64,
    pub mass: f64,
    pub center: f64,
}

impl Barenblatt {
    pub fn new(a: f64, t0: f64, mass: f64, center: f64) -> Result<Self, ReferenceError> {
        if !(a > 0.0) || !(mass > 0.0) || !t0.is_finite() || !center.is_finite() {
            return Err(ReferenceError::BadParameters(format!(
                "need a > 0 and mass > 0 (a = {a}, mass = {mass})"
            )));
        }
        Ok(Self { a, t0, mass, center })
    }

    fn plateau(&self) -> f64 {
        (3.0 * self.mass / (8.0 * 3f64.sqrt())).powf(2.0 / 3.0)
    }

    fn tau(&self, t: f64) -> Result<f64, ReferenceError> {
        if !(t + self.t0 > 0.0) {
            return Err(ReferenceError::BadTime { t, t0: self.t0 });
        }
        Ok(0.5 * self.a * (t + self.t0))
    }

    pub fn value(&self, t: f64, x: f64) -> Result<f64, ReferenceError> {
        let tau = self.tau(t)?;
        let s = tau.cbrt();
        let xi = (x - self.center) / s;
        Ok((self.plateau() - xi * xi / 12.0).max(0.0) / s)
    }

    pub fn support_radius(&self, t: f64) -> Result<f64, ReferenceError> {
        Ok((12.0 * self.plateau()).sqrt() * self.tau(t)?.cbrt())
    }

    /// Exact average of the profile over `[xl, xr]`.
    pub fn cell_average(&self, t: f64, xl: f64, xr: f64) -> Result<f64, ReferenceError> {
        let tau = self.tau(t)?;
        let s = tau.cbrt();
        let r = self.support_radius(t)?;
        let lo = (xl - self.center).max(-r);
        let hi = (xr - self.center).min(r);
        if hi <= lo {
            return Ok(0.0);
        }
        let c = self.plateau();
        // antiderivative of (C - y²/(12 s²)) / s
        let prim = |y: f64| (c * y - y * y * y / (36.0 * s * s)) / s;
        Ok((prim(hi) - prim(lo)) / (xr - xl))
    }

    /// Cell averages of the profile on `grid` at time `t`.
    pub fn sample_cells(&self, grid: &Grid1D, t: f64) -> Result<Vec<f64>, ReferenceError> {
        (0..grid.n_cells())
            .map(|i| self.cell_average(t, grid.face(i), grid.face(i + 1)))
            .collect()
    }
}

/// Barenblatt value centered at `x = 0` (shift `x` by the domain midpoint).
pub fn barenblatt(a_coeff: f64, t: f64, x: f64, t0: f64, mass: f64) -> Result<f64, ReferenceError> {
    Barenblatt::new(a_coeff, t0, mass, 0.0)?.value(t, x)
}

pub fn constant_state(grid: &Grid1D, f0: f64, g0: f64) -> Result<State, ReferenceError> {
    let n = grid.n_cells();
    Ok(State::new(grid.clone(), vec![f0; n], vec![g0; n], 0.0)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ManufacturedChoice {
    /// `f = 1 + ½ cos(πx) e^{-t}`, `g = 1 + ½ sin²(πx) e^{-t}`; Neumann-compatible at
    /// integer `x`, intended for the unit interval.
    Trigonometric,
    /// Constant pair: an exact steady state with zero sources.
    Constant { f0: f64, g0: f64 },
}

/// Exact pair and the sources that make it solve the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ManufacturedCase {
    pub params: ModelParams,
    pub choice: ManufacturedChoice,
}

/// Values and first/second x-derivatives, plus the time derivative.
#[derive(Debug, Clone, Copy)]
struct Jet {
    v: f64,
    x: f64,
    xx: f64,
    t: f64,
}

impl ManufacturedCase {
    fn jets(&self, t: f64, x: f64) -> (Jet, Jet) {
        match self.choice {
            ManufacturedChoice::Trigonometric => {
                let e = (-t).exp();
                let (s, c) = (PI * x).sin_cos();
                let f = Jet {
                    v: 1.0 + 0.5 * c * e,
                    x: -0.5 * PI * s * e,
                    xx: -0.5 * PI * PI * c * e,
                    t: -0.5 * c * e,
                };
                let g = Jet {
                    v: 1.0 + 0.5 * s * s * e,
                    x: 0.5 * PI * (2.0 * PI * x).sin() * e,
                    xx: PI * PI * (2.0 * PI * x).cos() * e,
                    t: -0.5 * s * s * e,
                };
                (f, g)
            }
            ManufacturedChoice::Constant { f0, g0 } => (
                Jet {
                    v: f0,
                    x: 0.0,
                    xx: 0.0,
                    t: 0.0,
                },
                Jet {
                    v: g0,
                    x: 0.0,
                    xx: 0.0,
                    t: 0.0,
                },
            ),
        }
    }

    pub fn f_exact(&self, t: f64, x: f64) -> f64 {
        self.jets(t, x).0.v
    }

    pub fn g_exact(&self, t: f64, x: f64) -> f64 {
        self.jets(t, x).1.v
    }

    /// `(S_f, S_g) = (∂t f - ∂x(f ∂x[a f + b g]), ∂t g - ∂x(g ∂x[c f + d g]))`.
    pub fn sources(&self, t: f64, x: f64) -> (f64, f64) {
        if let ManufacturedChoice::Constant { .. } = self.choice {
            return (0.0, 0.0);
        }
        let ((a, b), (c, d)) = self.params.pressure_gradients_coeffs();
        let (f, g) = self.jets(t, x);
        let (px, pxx) = (a * f.x + b * g.x, a * f.xx + b * g.xx);
        let (qx, qxx) = (c * f.x + d * g.x, c * f.xx + d * g.xx);
        (f.t - (f.x * px + f.v * pxx), g.t - (g.x * qx + g.v * qxx))
    }

    /// Exact pair sampled at the cell centers.
    pub fn exact_state(&self, grid: &Grid1D, t: f64) -> Result<State, ReferenceError> {
        Ok(State::from_fn(
            grid.clone(),
            |x| self.f_exact(t, x),
            |x| self.g_exact(t, x),
            t,
        )?)
    }
}

pub fn manufactured_case(p: &ModelParams, choice: ManufacturedChoice) -> ManufacturedCase {
    ManufacturedCase { params: *p, choice }
}

/// As [`crate::solver::run`], with the manufactured sources added to the
/// residual at the new time level.
pub fn solve_with_sources(
    p: &ModelParams,
    s0: &State,
    cfg: &SolverConfig,
    t_end: f64,
    case: &ManufacturedCase,
) -> Result<State, SolverError> {
    let src = |t: f64, x: f64| case.sources(t, x);
    run_with(p, s0, cfg, t_end, Some(&src), &mut |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::model::new_model;
    use crate::solver::run;

    #[test]
    fn barenblatt_mass_by_quadrature() {
        let b = Barenblatt::new(1.0, 0.05, 0.3, 0.0).unwrap();
        for t in [0.0, 0.1, 1.0] {
            let r = b.support_radius(t).unwrap();
            // composite Simpson on the support
            let n = 20_000;
            let hq = 2.0 * r / n as f64;
            let mut sum = 0.0;
            for k in 0..=n {
                let x = -r + k as f64 * hq;
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                sum += w * b.value(t, x).unwrap();
            }
            let mass = sum * hq / 3.0;
            assert!((mass - 0.3).abs() < 1e-8, "t = {t}: mass {mass}");
        }
    }

    #[test]
    fn barenblatt_satisfies_pde_by_finite_differences() {
        let a = 1.7;
        let b = Barenblatt::new(a, 0.1, 0.5, 0.2).unwrap();
        let t = 0.3;
        let r = b.support_radius(t).unwrap();
        let mut prev = f64::INFINITY;
        for hs in [1e-2, 5e-3, 2.5e-3] {
            let mut worst = 0.0f64;
            for j in 1..10 {
                let x = 0.2 - 0.9 * r + 1.8 * r * j as f64 / 10.0;
                let dt_f = (b.value(t + hs, x).unwrap() - b.value(t - hs, x).unwrap()) / (2.0 * hs);
                let sq = |y: f64| b.value(t, y).unwrap().powi(2);
                let lap = (sq(x + hs) - 2.0 * sq(x) + sq(x - hs)) / (hs * hs);
                worst = worst.max((dt_f - 0.5 * a * lap).abs());
            }
            assert!(worst < prev);
            prev = worst;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn barenblatt_support_grows() {
        let b = Barenblatt::new(1.0, 0.01, 1.0, 0.0).unwrap();
        let r1 = b.support_radius(0.1).unwrap();
        let r2 = b.support_radius(0.2).unwrap();
        assert!(r2 > r1);
        assert_eq!(b.value(0.1, 1.01 * r1).unwrap(), 0.0);
        assert!(b.value(0.1, 0.99 * r1).unwrap() > 0.0);
    }

    #[test]
    fn barenblatt_rejects_bad_time() {
        assert!(matches!(
            barenblatt(1.0, -0.2, 0.0, 0.1, 1.0),
            Err(ReferenceError::BadTime { .. })
        ));
        assert!(barenblatt(1.0, 0.0, 0.0, 0.1, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn cell_average_integrates_profile() {
        let b = Barenblatt::new(1.0, 0.05, 0.4, 0.5).unwrap();
        let grid = make_grid(0.0, 1.0, 64).unwrap();
        let v = b.sample_cells(&grid, 0.0).unwrap();
        assert!((grid.integrate(&v) - 0.4).abs() < 1e-14);
        // a cell inside the support matches a fine midpoint sum
        let (xl, xr) = (grid.face(32), grid.face(33));
        let m = 1000;
        let mid: f64 = (0..m)
            .map(|k| b.value(0.0, xl + (k as f64 + 0.5) * (xr - xl) / m as f64).unwrap())
            .sum::<f64>()
            / m as f64;
        assert!((b.cell_average(0.0, xl, xr).unwrap() - mid).abs() < 1e-9);
    }

    #[test]
    fn constant_state_examples() {
        let grid = make_grid(0.0, 2.0, 10).unwrap();
        let s = constant_state(&grid, 1.0, 2.0).unwrap();
        let (mf, mg) = s.masses();
        assert!((mf - 2.0).abs() < 1e-14 && (mg - 4.0).abs() < 1e-14);
        assert!(constant_state(&grid, -1.0, 2.0).is_err());

        let p = new_model(1.0, 1.0, 1.0, 2.0).unwrap();
        let out = run(&p, &s, &SolverConfig::with_dt(0.1), 1.0, |_| {}).unwrap();
        assert_eq!(out.f, s.f);
        assert_eq!(out.g, s.g);

        let z = constant_state(&grid, 0.0, 1.0).unwrap();
        let out = run(&p, &z, &SolverConfig::with_dt(0.1), 1.0, |_| {}).unwrap();
        assert!(out.f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_case_has_zero_sources() {
        let p = new_model(1.0, 1.0, 1.0, 2.0).unwrap();
        let case = manufactured_case(&p, ManufacturedChoice::Constant { f0: 1.0, g0: 2.0 });
        assert_eq!(case.sources(0.3, 0.7), (0.0, 0.0));
    }

    #[test]
    fn sources_match_finite_difference_residual() {
        let p = new_model(1.3, 0.6, 0.4, 1.9).unwrap();
        let case = manufactured_case(&p, ManufacturedChoice::Trigonometric);
        let ((a, b), (c, d)) = p.pressure_gradients_coeffs();
        let (t, x, h) = (0.1, 0.3, 1e-4);
        let f = |t: f64, x: f64| case.f_exact(t, x);
        let g = |t: f64, x: f64| case.g_exact(t, x);
        // flux form: (F(x + h/2) - F(x - h/2)) / h with F = u ∂x(pressure)
        let flux = |u: &dyn Fn(f64, f64) -> f64, cu: f64, cv: f64, y: f64| {
            let pr = |z: f64| cu * f(t, z) + cv * g(t, z);
            0.5 * (u(t, y) + u(t, y + h)) * (pr(y + h) - pr(y)) / h
        };
        let div = |u: &dyn Fn(f64, f64) -> f64, cu: f64, cv: f64| (flux(u, cu, cv, x) - flux(u, cu, cv, x - h)) / h;
        let sf = (f(t + h, x) - f(t - h, x)) / (2.0 * h) - div(&f, a, b);
        let sg = (g(t + h, x) - g(t - h, x)) / (2.0 * h) - div(&g, c, d);
        let (cf, cg) = case.sources(t, x);
        assert!((sf - cf).abs() <= 1e-6, "S_f {sf} vs {cf}");
        assert!((sg - cg).abs() <= 1e-6, "S_g {sg} vs {cg}");
    }

    #[test]
    fn trigonometric_case_is_neumann_compatible_and_positive() {
        let p = new_model(1.0, 1.0, 1.0, 2.0).unwrap();
        let case = manufactured_case(&p, ManufacturedChoice::Trigonometric);
        for t in [0.0, 0.5] {
            for x in [0.0, 1.0] {
                let hs = 1e-6;
                let dfx = (case.f_exact(t, x + hs) - case.f_exact(t, x - hs)) / (2.0 * hs);
                let dgx = (case.g_exact(t, x + hs) - case.g_exact(t, x - hs)) / (2.0 * hs);
                assert!(dfx.abs() < 1e-8 && dgx.abs() < 1e-8);
            }
        }
        let s = case.exact_state(&make_grid(0.0, 1.0, 32).unwrap(), 0.0).unwrap();
        assert!(s.f.iter().chain(&s.g).all(|&v| v >= 0.5));
    }

    #[test]
    fn zero_sources_reduce_to_plain_run() {
        let p = new_model(1.0, 1.0, 1.0, 2.0).unwrap();
        let grid = make_grid(0.0, 1.0, 24).unwrap();
        let s0 = State::from_fn(grid, |x| 1.0 + 0.3 * (4.0 * x).cos(), |x| 0.8 + x * x, 0.0).unwrap();
        let cfg = SolverConfig::with_dt(0.01);
        let case = manufactured_case(&p, ManufacturedChoice::Constant { f0: 0.0, g0: 0.0 });
        let a = solve_with_sources(&p, &s0, &cfg, 0.1, &case).unwrap();
        let b = run(&p, &s0, &cfg, 0.1, |_| {}).unwrap();
        assert!(a.f.iter().zip(&b.f).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.g.iter().zip(&b.g).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(solve_with_sources(&p, &s0, &cfg, 0.0, &case).unwrap(), s0);
    }
}
