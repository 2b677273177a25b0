//! Penalized B-spline logistic regression.
//!
//! Smooth terms use clamped cubic B-splines with quantile knots, a
//! second-order difference penalty over the Greville abscissae and a sum-to-zero constraint. Models are
//! fitted by penalized IRLS; penalties are chosen by GCV or fixed.

pub mod basis;
pub mod gcv;
pub mod irls;
pub mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use basis::{build_spline_basis, difference_penalty, spline_penalty, BSpline};
pub use gcv::{default_grid, select_penalty_gcv};
pub use irls::{fit_penalized_logit, inv_logit, IrlsOptions, LogitFit, TermBlock};
pub use model::{fit_gam, Covariates, Frame, PenaltyChoice, PenalizedLogitModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Smooth,
    Categorical,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTermSpec {
    pub variable: String,
    pub kind: TermKind,
    pub basis_size: usize,
    pub degree: usize,
    pub penalty_order: usize,
    /// One smooth per level of this variable.
    pub by_variable: Option<String>,
}

impl SmoothTermSpec {
    fn new(variable: &str, kind: TermKind) -> Self {
        Self {
            variable: variable.to_string(),
            kind,
            basis_size: 10,
            degree: 3,
            penalty_order: 2,
            by_variable: None,
        }
    }

    pub fn smooth(variable: &str) -> Self {
        Self::new(variable, TermKind::Smooth)
    }

    pub fn categorical(variable: &str) -> Self {
        Self::new(variable, TermKind::Categorical)
    }

    pub fn linear(variable: &str) -> Self {
        Self::new(variable, TermKind::Linear)
    }

    pub fn by(mut self, variable: &str) -> Self {
        self.by_variable = Some(variable.to_string());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == TermKind::Smooth {
            if self.basis_size <= self.degree {
                return Err(Error::Config(format!(
                    "`{}`: basis_size {} must exceed degree {}",
                    self.variable, self.basis_size, self.degree
                )));
            }
            if self.penalty_order >= self.basis_size {
                return Err(Error::Config(format!(
                    "`{}`: penalty_order {} must be below basis_size {}",
                    self.variable, self.penalty_order, self.basis_size
                )));
            }
        }
        if self.by_variable.as_deref() == Some(self.variable.as_str()) {
            return Err(Error::Config(format!("`{}` cannot be its own by-variable", self.variable)));
        }
        Ok(())
    }
}
