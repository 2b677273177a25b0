//! Named-term additive logistic models: design construction, fitting and
//! prediction.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::{spline_penalty, BSpline};
use super::gcv::{default_grid, select_penalty_gcv};
use super::irls::{fit_penalized_logit, inv_logit, IrlsOptions, TermBlock};
use super::{SmoothTermSpec, TermKind};
use crate::error::{Error, Result};

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Frame {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, column: Vec<f64>) -> Self {
        self.push(name, column);
        self
    }

    pub fn push(&mut self, name: &str, column: Vec<f64>) {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            self.columns[i] = column;
        } else {
            self.names.push(name.to_string());
            self.columns.push(column);
        }
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Structure(format!("covariate `{name}` not present")))
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    /// Rows `idx` of every column.
    pub fn select_rows(&self, idx: &[usize]) -> Frame {
        Frame {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }
}

/// Source of covariate values for a single observation.
pub trait Covariates {
    fn value(&self, name: &str) -> Option<f64>;
}

impl Covariates for HashMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Covariates for BTreeMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Covariates for [(&str, f64)] {
    fn value(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

struct FrameRow<'a>(&'a Frame, usize);

impl Covariates for FrameRow<'_> {
    fn value(&self, name: &str) -> Option<f64> {
        self.0.get(name).ok().map(|c| c[self.1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByLevel {
    pub variable: String,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermTransform {
    /// Spline basis times a sum-to-zero constraint matrix (K x (K-1)).
    Smooth {
        spline: BSpline,
        constraint: DMatrix<f64>,
        by: Option<ByLevel>,
    },
    /// Treatment coding; the first level is the reference.
    Categorical { levels: Vec<f64> },
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTerm {
    pub label: String,
    pub variable: String,
    pub transform: TermTransform,
    /// Penalty in the constrained coefficient space.
    pub penalty: Option<DMatrix<f64>>,
    pub lambda: Option<f64>,
    /// First coefficient index (the intercept is index 0).
    pub offset: usize,
    pub width: usize,
}

impl FittedTerm {
    fn push_row(&self, row: &mut Vec<f64>, cov: &(impl Covariates + ?Sized)) -> Result<()> {
        let x = cov
            .value(&self.variable)
            .ok_or_else(|| Error::Structure(format!("covariate `{}` not present", self.variable)))?;
        match &self.transform {
            TermTransform::Smooth {
                spline,
                constraint,
                by,
            } => {
                let active = match by {
                    None => true,
                    Some(b) => {
                        let v = cov.value(&b.variable).ok_or_else(|| {
                            Error::Structure(format!("covariate `{}` not present", b.variable))
                        })?;
                        v == b.level
                    }
                };
                if active {
                    let basis = spline.evaluate(x);
                    for c in 0..constraint.ncols() {
                        let mut v = 0.0;
                        for (k, bk) in basis.iter().enumerate() {
                            v += bk * constraint[(k, c)];
                        }
                        row.push(v);
                    }
                } else {
                    row.extend(std::iter::repeat_n(0.0, constraint.ncols()));
                }
            }
            TermTransform::Categorical { levels } => {
                if !levels.contains(&x) {
                    return Err(Error::UnknownLevel {
                        factor: self.variable.clone(),
                        level: x,
                    });
                }
                row.extend(levels[1..].iter().map(|&l| f64::from(u8::from(x == l))));
            }
            TermTransform::Linear => row.push(x),
        }
        Ok(())
    }

    fn support(&self) -> Option<(f64, f64)> {
        match &self.transform {
            TermTransform::Smooth { spline, .. } => Some((spline.lower(), spline.upper())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub final_change: f64,
    pub trace: Vec<f64>,
}

/// Fitted additive logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedLogitModel {
    pub terms: Vec<FittedTerm>,
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub convergence: Convergence,
    pub deviance: f64,
    pub edf: f64,
    pub score_norm: f64,
    /// Fitted probabilities on the training rows.
    pub fitted: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyChoice {
    /// Same lambda for every penalized block.
    Fixed(f64),
    /// One lambda per penalized block, in block order.
    PerBlock(Vec<f64>),
    /// GCV over the grid, shared by all penalized blocks.
    Gcv(Vec<f64>),
}

impl Default for PenaltyChoice {
    fn default() -> Self {
        PenaltyChoice::Gcv(default_grid())
    }
}

fn distinct_sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Householder-based null space of the row vector `c'`, as a K x (K-1) matrix.
fn sum_to_zero_constraint(col_sums: &DVector<f64>) -> DMatrix<f64> {
    let k = col_sums.len();
    let norm = col_sums.norm();
    let mut v = col_sums.clone();
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vtv = v.dot(&v);
    let mut h = DMatrix::<f64>::identity(k, k);
    if vtv > 0.0 {
        h -= (&v * v.transpose()) * (2.0 / vtv);
    }
    h.columns(1, k - 1).into_owned()
}

/// Build the terms (with constraints fitted to the training rows).
fn build_terms(frame: &Frame, specs: &[SmoothTermSpec], warnings: &mut Vec<String>) -> Result<Vec<FittedTerm>> {
    let mut terms = Vec::new();
    let mut offset = 1;
    for spec in specs {
        spec.validate()?;
        let x = frame.get(&spec.variable)?;
        let levels = distinct_sorted(x);
        if levels.len() < 2 {
            warnings.push(format!("term `{}` is constant and was dropped", spec.variable));
            continue;
        }
        let kind = match spec.kind {
            TermKind::Smooth if levels.len() < spec.basis_size => {
                warnings.push(format!(
                    "`{}` has only {} distinct values; using a linear term",
                    spec.variable,
                    levels.len()
                ));
                TermKind::Linear
            }
            k => k,
        };
        let by_levels: Vec<Option<f64>> = match &spec.by_variable {
            Some(b) => distinct_sorted(frame.get(b)?).into_iter().map(Some).collect(),
            None => vec![None],
        };
        for lvl in by_levels {
            let in_level: Vec<bool> = match (&spec.by_variable, lvl) {
                (Some(b), Some(l)) => frame.get(b)?.iter().map(|&v| v == l).collect(),
                _ => vec![true; x.len()],
            };
            let label = match (&spec.by_variable, lvl) {
                (Some(b), Some(l)) => format!("s({}):{}={}", spec.variable, b, l),
                _ => match kind {
                    TermKind::Smooth => format!("s({})", spec.variable),
                    TermKind::Categorical => format!("factor({})", spec.variable),
                    TermKind::Linear => spec.variable.clone(),
                },
            };
            let by = spec.by_variable.clone().zip(lvl).map(|(variable, level)| ByLevel { variable, level });
            let term = match kind {
                TermKind::Smooth => {
                    let spline = BSpline::from_quantiles(x, spec.basis_size, spec.degree)?;
                    let k = spline.n_basis();
                    let mut sums = DVector::<f64>::zeros(k);
                    for (&xi, &on) in x.iter().zip(&in_level) {
                        if on {
                            for (c, v) in spline.evaluate(xi).into_iter().enumerate() {
                                sums[c] += v;
                            }
                        }
                    }
                    let z = sum_to_zero_constraint(&sums);
                    let pen = z.transpose() * spline_penalty(&spline, spec.penalty_order) * &z;
                    FittedTerm {
                        label,
                        variable: spec.variable.clone(),
                        transform: TermTransform::Smooth {
                            spline,
                            constraint: z,
                            by,
                        },
                        penalty: Some(pen),
                        lambda: None,
                        offset,
                        width: k - 1,
                    }
                }
                TermKind::Categorical => FittedTerm {
                    label,
                    variable: spec.variable.clone(),
                    width: levels.len() - 1,
                    transform: TermTransform::Categorical {
                        levels: levels.clone(),
                    },
                    penalty: None,
                    lambda: None,
                    offset,
                },
                TermKind::Linear => {
                    if by.is_some() {
                        // x * 1(level) as a by-level slope
                        FittedTerm {
                            label,
                            variable: spec.variable.clone(),
                            transform: TermTransform::Smooth {
                                spline: BSpline {
                                    knots: vec![levels[0], levels[0], levels[levels.len() - 1], levels[levels.len() - 1]],
                                    degree: 1,
                                },
                                constraint: sum_to_zero_constraint(&DVector::from_vec(vec![1.0, 1.0])),
                                by,
                            },
                            penalty: None,
                            lambda: None,
                            offset,
                            width: 1,
                        }
                    } else {
                        FittedTerm {
                            label,
                            variable: spec.variable.clone(),
                            transform: TermTransform::Linear,
                            penalty: None,
                            lambda: None,
                            offset,
                            width: 1,
                        }
                    }
                }
            };
            offset += term.width;
            terms.push(term);
        }
    }
    Ok(terms)
}

fn design_row(terms: &[FittedTerm], cov: &(impl Covariates + ?Sized)) -> Result<Vec<f64>> {
    let mut row = Vec::with_capacity(1 + terms.iter().map(|t| t.width).sum::<usize>());
    row.push(1.0);
    for t in terms {
        t.push_row(&mut row, cov)?;
    }
    Ok(row)
}

#[inline]
fn linear_predictor(row: &[f64], coef: &[f64]) -> f64 {
    let mut eta = 0.0;
    for (x, b) in row.iter().zip(coef) {
        eta += x * b;
    }
    eta
}

/// Fit an additive logistic model of `y` on the named terms of `frame`.
pub fn fit_gam(
    frame: &Frame,
    y: &[f64],
    specs: &[SmoothTermSpec],
    penalty: &PenaltyChoice,
    opts: &IrlsOptions,
) -> Result<PenalizedLogitModel> {
    if frame.nrows() != y.len() {
        return Err(Error::Argument(format!(
            "frame has {} rows but response has {}",
            frame.nrows(),
            y.len()
        )));
    }
    let mut warnings = Vec::new();
    let mut terms = build_terms(frame, specs, &mut warnings)?;
    let n = y.len();
    let p = 1 + terms.iter().map(|t| t.width).sum::<usize>();
    let mut x = DMatrix::<f64>::zeros(n, p);
    for r in 0..n {
        let row = design_row(&terms, &FrameRow(frame, r))?;
        for (c, v) in row.into_iter().enumerate() {
            x[(r, c)] = v;
        }
    }
    let blocks: Vec<TermBlock> = terms
        .iter()
        .map(|t| TermBlock {
            name: t.label.clone(),
            basis: x.columns(t.offset, t.width).into_owned(),
            penalty: t.penalty.clone(),
        })
        .collect();
    let n_pen = blocks.iter().filter(|b| b.penalty.is_some()).count();
    let lambdas: Vec<f64> = match penalty {
        PenaltyChoice::Fixed(l) => blocks
            .iter()
            .map(|b| if b.penalty.is_some() { *l } else { 0.0 })
            .collect(),
        PenaltyChoice::PerBlock(ls) => {
            if ls.len() != n_pen {
                return Err(Error::Argument(format!(
                    "{} lambdas supplied for {n_pen} penalized blocks",
                    ls.len()
                )));
            }
            let mut it = ls.iter();
            blocks
                .iter()
                .map(|b| if b.penalty.is_some() { *it.next().expect("length checked") } else { 0.0 })
                .collect()
        }
        PenaltyChoice::Gcv(grid) => {
            let grids: Vec<Vec<f64>> = blocks
                .iter()
                .map(|b| if b.penalty.is_some() { grid.clone() } else { Vec::new() })
                .collect();
            select_penalty_gcv(y, &blocks, &grids, opts)?
        }
    };
    let fit = fit_penalized_logit(y, &blocks, &lambdas, opts)?;
    warnings.extend(fit.warnings.iter().cloned());
    for (t, &l) in terms.iter_mut().zip(&lambdas) {
        if t.penalty.is_some() {
            t.lambda = Some(l);
        }
    }
    let coefficients = fit.coefficients.as_slice().to_vec();
    let mut model = PenalizedLogitModel {
        terms,
        coefficients,
        lambdas,
        convergence: Convergence {
            iterations: fit.iterations,
            final_change: fit.final_change,
            trace: fit.trace,
        },
        deviance: fit.deviance,
        edf: fit.edf,
        score_norm: fit.score_norm,
        fitted: Vec::new(),
        warnings,
    };
    model.fitted = model.predict_frame(frame)?;
    Ok(model)
}

impl PenalizedLogitModel {
    pub fn linear_predictor(&self, cov: &(impl Covariates + ?Sized)) -> Result<f64> {
        let row = design_row(&self.terms, cov)?;
        Ok(linear_predictor(&row, &self.coefficients))
    }

    pub fn predict_probability(&self, cov: &(impl Covariates + ?Sized)) -> Result<f64> {
        Ok(inv_logit(self.linear_predictor(cov)?))
    }

    pub fn predict_frame(&self, frame: &Frame) -> Result<Vec<f64>> {
        (0..frame.nrows())
            .map(|r| self.predict_probability(&FrameRow(frame, r)))
            .collect()
    }

    /// Rows whose smooth-term covariates fall outside the training range.
    pub fn outside_support(&self, frame: &Frame) -> Result<Vec<bool>> {
        let mut out = vec![false; frame.nrows()];
        for t in &self.terms {
            if let Some((lo, hi)) = t.support() {
                for (o, &v) in out.iter_mut().zip(frame.get(&t.variable)?) {
                    if v < lo || v > hi {
                        *o = true;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}
