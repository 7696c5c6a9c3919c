//! Fit reports.

use crate::error::Result;
use crate::model::{evaluate, partials, Dataset, Model, ParameterVector};
use crate::path::FailedInterval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ia,
    Ib,
    Full,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ia => "ia",
            Method::Ib => "ib",
            Method::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ResidualRow {
    /// 1-based dataset row.
    pub index: usize,
    pub t: f64,
    pub y: f64,
    pub y_fit: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CandidateRoot {
    pub k: f64,
    pub q_value: f64,
    pub root_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct Diagnostics {
    /// Every refined root of the reduced derivative, in `k` order.
    pub candidate_roots: Vec<CandidateRoot>,
    pub failed_intervals: Vec<FailedInterval>,
    pub unrefined_brackets: usize,
    pub grid_size: usize,
    pub evaluations: usize,
    /// Norm of the full `(P, k)` gradient of `Q_T` at the reported point.
    pub gradient_norm: Option<f64>,
    pub starts_tried: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FitReport {
    pub method: Method,
    pub k_star: f64,
    pub params: ParameterVector,
    /// Per-component population standard deviation across combinations
    /// (mean-path fits only).
    pub param_spread: Option<Vec<f64>>,
    /// Root-mean-square residual.
    pub fd: f64,
    /// Sum of squared residuals, `N * fd^2`.
    pub q_value: f64,
    pub residuals: Vec<ResidualRow>,
    pub iterations: usize,
    pub root_residual: f64,
    pub combos_used: usize,
    pub combos_singular: usize,
    pub diagnostics: Diagnostics,
}

/// Residual rows and `(q, fd)` for the curve `f(P, t, k)`.
pub fn residual_table(data: &Dataset, model: &dyn Model, p: &[f64], k: f64) -> Result<(Vec<ResidualRow>, f64, f64)> {
    let mut rows = Vec::with_capacity(data.len());
    let mut q = 0.0;
    for (i, pt) in data.points().iter().enumerate() {
        let y_fit = evaluate(model, p, k, pt.t)?;
        let r = pt.y - y_fit;
        q += r * r;
        rows.push(ResidualRow {
            index: i + 1,
            t: pt.t,
            y: pt.y,
            y_fit,
            residual: r,
        });
    }
    let fd = (q / data.len() as f64).sqrt();
    Ok((rows, q, fd))
}

/// `Q_T(P, k) = Σ (y_i − f(P, t_i, k))²`.
pub fn sum_of_squares(data: &Dataset, model: &dyn Model, p: &[f64], k: f64) -> Result<f64> {
    data.points().iter().try_fold(0.0, |acc, pt| {
        let r = pt.y - evaluate(model, p, k, pt.t)?;
        Ok(acc + r * r)
    })
}

/// Gradient of `Q_T` in `(P_1, …, P_n, k)`.
pub fn sum_of_squares_gradient(data: &Dataset, model: &dyn Model, p: &[f64], k: f64, fd_step: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; p.len() + 1];
    for pt in data.points() {
        let r = pt.y - evaluate(model, p, k, pt.t)?;
        let (dp, dk) = partials(model, p, k, pt.t, fd_step)?;
        for (gj, d) in g.iter_mut().zip(&dp) {
            *gj -= 2.0 * r * d;
        }
        g[p.len()] -= 2.0 * r * dk;
    }
    Ok(g)
}
