//! Uniform cell-centered mesh on an interval, with zero-flux (Neumann) closure.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("bad domain: need x_lo < x_hi and n_cells >= 2 (got ({x_lo}, {x_hi}), n_cells = {n_cells})")]
    BadDomain { x_lo: f64, x_hi: f64, n_cells: usize },
    #[error("field length {got} does not match n_cells = {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),
    #[error("negative value {value} in component {component} at cell {cell}")]
    NegativeState {
        component: &'static str,
        cell: usize,
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct Grid1D {
    x_lo: f64,
    x_hi: f64,
    n_cells: usize,
    h: f64,
    cell_centers: Vec<f64>,
}

impl PartialEq for Grid1D {
    fn eq(&self, other: &Self) -> bool {
        self.x_lo == other.x_lo && self.x_hi == other.x_hi && self.n_cells == other.n_cells
    }
}

impl Grid1D {
    pub fn new(x_lo: f64, x_hi: f64, n_cells: usize) -> Result<Self, GridError> {
        if !(x_lo < x_hi) || !x_lo.is_finite() || !x_hi.is_finite() || n_cells < 2 {
            return Err(GridError::BadDomain { x_lo, x_hi, n_cells });
        }
        let h = (x_hi - x_lo) / n_cells as f64;
        let cell_centers = (0..n_cells).map(|i| x_lo + (i as f64 + 0.5) * h).collect();
        Ok(Self {
            x_lo,
            x_hi,
            n_cells,
            h,
            cell_centers,
        })
    }

    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    pub fn x_hi(&self) -> f64 {
        self.x_hi
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn length(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn cell_centers(&self) -> &[f64] {
        &self.cell_centers
    }

    /// Position of face `k`, `0 <= k <= n_cells`.
    pub fn face(&self, k: usize) -> f64 {
        self.x_lo + k as f64 * self.h
    }

    /// Face gradients of a cell field: interior face `k` carries
    /// `(field[k] - field[k-1]) / h`, the two boundary faces are exactly zero.
    pub fn face_gradient(&self, field: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check_len(field)?;
        let mut out = vec![0.0; self.n_cells + 1];
        for k in 1..self.n_cells {
            out[k] = (field[k] - field[k - 1]) / self.h;
        }
        Ok(out)
    }

    /// Midpoint-rule integral `h * sum(field)`.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        self.h * field.iter().sum::<f64>()
    }

    /// Samples `func` at the cell centers.
    pub fn sample(&self, func: impl Fn(f64) -> f64) -> Vec<f64> {
        self.cell_centers.iter().map(|&x| func(x)).collect()
    }

    pub(crate) fn check_len(&self, field: &[f64]) -> Result<(), GridError> {
        if field.len() != self.n_cells {
            return Err(GridError::LengthMismatch {
                expected: self.n_cells,
                got: field.len(),
            });
        }
        Ok(())
    }
}

pub fn make_grid(x_lo: f64, x_hi: f64, n_cells: usize) -> Result<Grid1D, GridError> {
    Grid1D::new(x_lo, x_hi, n_cells)
}

pub fn face_gradient(grid: &Grid1D, field: &[f64]) -> Result<Vec<f64>, GridError> {
    grid.face_gradient(field)
}

/// Cell averages of the pair `(f, g)` at one time instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct State {
    pub grid: Grid1D,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub time: f64,
}

impl State {
    /// Builds a state and checks lengths and nonnegativity.
    pub fn new(grid: Grid1D, f: Vec<f64>, g: Vec<f64>, time: f64) -> Result<Self, GridError> {
        grid.check_len(&f)?;
        grid.check_len(&g)?;
        let s = Self { grid, f, g, time };
        s.check_nonnegative()?;
        Ok(s)
    }

    pub fn from_fn(grid: Grid1D, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, time: f64) -> Result<Self, GridError> {
        let fv = grid.sample(f);
        let gv = grid.sample(g);
        Self::new(grid, fv, gv, time)
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn check_nonnegative(&self) -> Result<(), GridError> {
        for (component, field) in [("f", &self.f), ("g", &self.g)] {
            if let Some((cell, &value)) = field.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
                return Err(GridError::NegativeState { component, cell, value });
            }
        }
        Ok(())
    }

    /// `(h * sum f, h * sum g)`.
    pub fn masses(&self) -> (f64, f64) {
        (self.grid.integrate(&self.f), self.grid.integrate(&self.g))
    }

    /// The state with the components exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            f: self.g.clone(),
            g: self.f.clone(),
            time: self.time,
        }
    }
}

/// Transfers a state between nested uniform grids on the same interval:
/// averaging when coarsening, piecewise-constant injection when refining.
/// Both preserve `h * sum` of each component.
pub fn interpolate_to_grid(src: &State, dst_grid: &Grid1D) -> Result<State, GridError> {
    let sg = &src.grid;
    if sg.x_lo != dst_grid.x_lo || sg.x_hi != dst_grid.x_hi {
        return Err(GridError::IncompatibleGrids(format!(
            "endpoints ({}, {}) vs ({}, {})",
            sg.x_lo, sg.x_hi, dst_grid.x_lo, dst_grid.x_hi
        )));
    }
    let (ns, nd) = (sg.n_cells, dst_grid.n_cells);
    type Transfer = Box<dyn Fn(&[f64]) -> Vec<f64>>;
    let transfer: Transfer = if ns.is_multiple_of(nd) {
        let r = ns / nd;
        Box::new(move |v: &[f64]| v.chunks_exact(r).map(|c| c.iter().sum::<f64>() / r as f64).collect())
    } else if nd.is_multiple_of(ns) {
        let r = nd / ns;
        Box::new(move |v: &[f64]| v.iter().flat_map(|&x| std::iter::repeat_n(x, r)).collect())
    } else {
        return Err(GridError::IncompatibleGrids(format!(
            "cell counts {ns} and {nd} are not nested"
        )));
    };
    Ok(State {
        grid: dst_grid.clone(),
        f: transfer(&src.f),
        g: transfer(&src.g),
        time: src.time,
    })
}
