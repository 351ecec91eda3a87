//! Coefficients of the cross-diffusion system
//!
//! ```text
//!   ∂t f = div( f ∇[a f + b g] )
//!   ∂t g = div( g ∇[c f + d g] )
//! ```
//!
//! and its mobility matrix `M(X) = ((a X1, b X1), (c X2, d X2))`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the parameter constraint `a, b, c, d > 0` and `ad > bc`, used in
/// user-facing diagnostics.
pub const PARAMETER_CONSTRAINT: &str = "condabcd";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid parameters ({PARAMETER_CONSTRAINT}): {0}")]
    InvalidParameters(&'static str),
    #[error("negative state component in mobility evaluation")]
    NegativeState,
}

/// Validated coefficient quadruple. Fields are private so a value of this type
/// always satisfies positivity and `ad > bc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl ModelParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, ModelError> {
        // `!(x > 0.0)` also rejects NaN.
        if [a, b, c, d].iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(ModelError::InvalidParameters("nonpositive"));
        }
        if !(a * d > b * c) {
            return Err(ModelError::InvalidParameters("ad<=bc"));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// `ad - bc`, strictly positive.
    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// Weight `b/c` of the g-part in the relative entropy and weighted L² distance.
    pub fn entropy_weight(&self) -> f64 {
        self.b / self.c
    }

    /// Linear forms `(a, b)` and `(c, d)` defining the pressures `a f + b g`
    /// and `c f + d g`.
    pub fn pressure_gradients_coeffs(&self) -> ((f64, f64), (f64, f64)) {
        ((self.a, self.b), (self.c, self.d))
    }

    /// Parameters of the system with the roles of `f` and `g` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            a: self.d,
            b: self.c,
            c: self.b,
            d: self.a,
        }
    }

    pub fn mobility(&self, x1: f64, x2: f64) -> Result<MobilityMatrix, ModelError> {
        mobility(self, x1, x2)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            a: f64,
            b: f64,
            c: f64,
            d: f64,
        }
        let r = Raw::deserialize(de)?;
        ModelParams::new(r.a, r.b, r.c, r.d).map_err(serde::de::Error::custom)
    }
}

pub fn new_model(a: f64, b: f64, c: f64, d: f64) -> Result<ModelParams, ModelError> {
    ModelParams::new(a, b, c, d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityMatrix {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl MobilityMatrix {
    pub fn determinant(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn trace(&self) -> f64 {
        self.m11 + self.m22
    }

    pub fn row1(&self) -> (f64, f64) {
        (self.m11, self.m12)
    }

    pub fn row2(&self) -> (f64, f64) {
        (self.m21, self.m22)
    }
}

pub fn mobility(p: &ModelParams, x1: f64, x2: f64) -> Result<MobilityMatrix, ModelError> {
    if x1 < 0.0 || x2 < 0.0 || x1.is_nan() || x2.is_nan() {
        return Err(ModelError::NegativeState);
    }
    Ok(MobilityMatrix {
        m11: p.a * x1,
        m12: p.b * x1,
        m21: p.c * x2,
        m22: p.d * x2,
    })
}
