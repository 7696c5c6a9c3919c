//! Datasets, the expectation-function abstraction and per-subset inversion.

use std::fmt;
use std::sync::Arc;

use serde::ser::{Serialize, SerializeMap, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{self, SolverConfig, SquareMatrix};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DataPoint {
    pub t: f64,
    pub y: f64,
}

/// Ordered experimental pairs `(t_i, y_i)`. Row order is preserved; reports
/// number rows from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    points: Vec<DataPoint>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, points: Vec<DataPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a dataset needs at least 2 points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !(p.t.is_finite() && p.y.is_finite()))
        {
            return Err(Error::NonFinite {
                context: format!("dataset row {}", i + 1),
            });
        }
        Ok(Self {
            name: name.into(),
            points,
        })
    }

    pub fn from_pairs(name: impl Into<String>, pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(name, pairs.iter().map(|&(t, y)| DataPoint { t, y }).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> DataPoint {
        self.points[i]
    }

    /// `(min t, max t)`.
    pub fn t_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.t), hi.max(p.t))
            })
    }
}

/// Named parameter values, serialized as an ordered JSON object.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} parameter values",
                names.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("parameter vector {values:?}"),
            });
        }
        Ok(Self { names, values })
    }

    pub fn for_model(model: &dyn Model, values: Vec<f64>) -> Result<Self> {
        Self::new(model.param_names(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Serialize for ParameterVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.values.len()))?;
        for (n, v) in self.names.iter().zip(&self.values) {
            map.serialize_entry(n, v)?;
        }
        map.end()
    }
}

/// An expectation function `f(P, t, k)` with optional analytic partials and
/// an optional closed-form inversion on `N_p` data points.
///
/// Models without a closed-form inversion are inverted numerically by Newton
/// iteration from a warm start.
pub trait Model: Send + Sync {
    fn n_params(&self) -> usize;

    fn param_names(&self) -> Vec<String> {
        (1..=self.n_params()).map(|j| format!("P{j}")).collect()
    }

    fn eval(&self, p: &[f64], t: f64, k: f64) -> f64;

    /// `∂f/∂P_j`, when known analytically.
    fn param_partials(&self, _p: &[f64], _t: f64, _k: f64) -> Option<Vec<f64>> {
        None
    }

    /// `∂f/∂k`, when known analytically.
    fn k_partial(&self, _p: &[f64], _t: f64, _k: f64) -> Option<f64> {
        None
    }

    /// Exact solution of `f(P, t_j, k) = y_j` for the given `N_p` points.
    /// `None` means no closed form exists.
    fn invert_closed_form(&self, _points: &[DataPoint], _k: f64) -> Option<Result<Vec<f64>>> {
        None
    }

    /// Data points that can never take part in an inversion at this `k`.
    fn is_singular_point(&self, _t: f64, _k: f64) -> bool {
        false
    }

    /// Whether repeated `t` values inside a subset make the inversion
    /// rank-deficient.
    fn duplicate_t_singular(&self) -> bool {
        self.n_params() > 1
    }

    fn k_bounds(&self) -> (f64, f64);

    /// Box used to draw multi-start points for the full fit.
    fn param_bounds(&self) -> Vec<(f64, f64)>;

    fn initial_params(&self) -> Vec<f64> {
        self.param_bounds()
            .iter()
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }
}

/// `f(P, t, k)` with a finiteness check.
pub fn evaluate(model: &dyn Model, p: &[f64], k: f64, t: f64) -> Result<f64> {
    check_len(model, p)?;
    let v = model.eval(p, t, k);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            context: format!("model value at t = {t}, k = {k}"),
        })
    }
}

fn check_len(model: &dyn Model, p: &[f64]) -> Result<()> {
    if p.len() == model.n_params() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "model takes {} parameters, got {}",
            model.n_params(),
            p.len()
        )))
    }
}

/// `(∂f/∂P, ∂f/∂k)`: analytic where the model declares them, central
/// differences otherwise.
pub fn partials(model: &dyn Model, p: &[f64], k: f64, t: f64, fd_step: f64) -> Result<(Vec<f64>, f64)> {
    check_len(model, p)?;
    let dp = match model.param_partials(p, t, k) {
        Some(v) => v,
        None => numerics::fd_gradient(|q| model.eval(q, t, k), p, fd_step)?,
    };
    let dk = match model.k_partial(p, t, k) {
        Some(v) => v,
        None => numerics::fd_gradient(|kk| model.eval(p, t, kk[0]), &[k], fd_step)?[0],
    };
    if dp.iter().any(|v| !v.is_finite()) || !dk.is_finite() {
        return Err(Error::NonFinite {
            context: format!("model partials at t = {t}, k = {k}"),
        });
    }
    Ok((dp, dk))
}

/// Parameters obtained by inverting the model on one subset of the data.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SubsetSolution {
    /// Sorted 0-based dataset indices.
    pub combo: Vec<usize>,
    pub params: Vec<f64>,
    pub singular: bool,
}

/// Solves `f(P, t_{i_j}, k) = y_{i_j}` for the `N_p` points of `combo`.
///
/// Uses the model's closed form when it has one, else Newton iteration from
/// `warm_start` (or the model's initial guess).
pub fn solve_subset(
    model: &dyn Model,
    data: &Dataset,
    combo: &[usize],
    k: f64,
    cfg: &SolverConfig,
    warm_start: Option<&[f64]>,
) -> Result<SubsetSolution> {
    let np = model.n_params();
    if combo.len() != np {
        return Err(Error::InvalidInput(format!(
            "combination {combo:?} has {} indices, model needs {np}",
            combo.len()
        )));
    }
    if combo.iter().any(|&i| i >= data.len()) {
        return Err(Error::InvalidInput(format!(
            "combination {combo:?} indexes past {} points",
            data.len()
        )));
    }
    let mut sorted = combo.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != combo.len() {
        return Err(Error::InvalidInput(format!(
            "combination {combo:?} repeats an index"
        )));
    }
    let singular = |reason: String| Error::Singular {
        combo: sorted.clone(),
        k,
        reason,
    };

    let points: Vec<DataPoint> = sorted.iter().map(|&i| data.point(i)).collect();
    if let Some(p) = points.iter().find(|p| model.is_singular_point(p.t, k)) {
        return Err(singular(format!("point t = {} is excluded", p.t)));
    }
    if model.duplicate_t_singular() {
        for (a, pa) in points.iter().enumerate() {
            if points[a + 1..].iter().any(|pb| pb.t == pa.t) {
                return Err(singular(format!("repeated t = {}", pa.t)));
            }
        }
    }

    let params = match model.invert_closed_form(&points, k) {
        Some(r) => r?,
        None => invert_numerically(model, &points, k, cfg, warm_start).map_err(|e| match e {
            Error::SingularJacobian { det, .. } => singular(format!("inversion Jacobian det = {det:e}")),
            other => other,
        })?,
    };
    if params.len() != np || params.iter().any(|v| !v.is_finite()) {
        return Err(singular(format!("inversion produced {params:?}")));
    }
    Ok(SubsetSolution {
        combo: sorted,
        params,
        singular: false,
    })
}

fn invert_numerically(
    model: &dyn Model,
    points: &[DataPoint],
    k: f64,
    cfg: &SolverConfig,
    warm_start: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let x0 = match warm_start {
        Some(w) if w.len() == model.n_params() && w.iter().all(|v| v.is_finite()) => w.to_vec(),
        _ => model.initial_params(),
    };
    let residual = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(points.iter().map(|pt| model.eval(p, pt.t, k) - pt.y).collect())
    };
    let out = if model.param_partials(&x0, points[0].t, k).is_some() {
        let np = model.n_params();
        let jac = |p: &[f64]| -> Result<SquareMatrix> {
            let mut rows = Vec::with_capacity(np * np);
            for pt in points {
                let row = model.param_partials(p, pt.t, k).ok_or_else(|| {
                    Error::InvalidInput("model stopped providing partials".into())
                })?;
                rows.extend(row);
            }
            SquareMatrix::new(np, rows)
        };
        numerics::solve_newton_nd_with_jacobian(residual, jac, &x0, cfg)?
    } else {
        numerics::solve_newton_nd(residual, &x0, cfg)?
    };
    Ok(out.x)
}

type ValueFn = dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], f64, f64) -> Vec<f64> + Send + Sync;
type InvertFn = dyn Fn(&[DataPoint], f64) -> Result<Vec<f64>> + Send + Sync;
type SingularFn = dyn Fn(f64, f64) -> bool + Send + Sync;

/// A model assembled from closures. Without [`FnModel::with_inversion`] it
/// is inverted numerically.
#[derive(Clone)]
pub struct FnModel {
    names: Vec<String>,
    f: Arc<ValueFn>,
    dfdp: Option<Arc<GradFn>>,
    dfdk: Option<Arc<ValueFn>>,
    invert: Option<Arc<InvertFn>>,
    singular: Option<Arc<SingularFn>>,
    k_bounds: (f64, f64),
    param_bounds: Vec<(f64, f64)>,
    initial: Option<Vec<f64>>,
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("names", &self.names)
            .field("k_bounds", &self.k_bounds)
            .field("param_bounds", &self.param_bounds)
            .finish_non_exhaustive()
    }
}

impl FnModel {
    pub fn new<F>(n_params: usize, f: F) -> Self
    where
        F: Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            names: (1..=n_params).map(|j| format!("P{j}")).collect(),
            f: Arc::new(f),
            dfdp: None,
            dfdk: None,
            invert: None,
            singular: None,
            k_bounds: (0.0, 1.0),
            param_bounds: vec![(-1.0, 1.0); n_params],
            initial: None,
        }
    }

    pub fn with_names<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.names = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_param_partials<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], f64, f64) -> Vec<f64> + Send + Sync + 'static,
    {
        self.dfdp = Some(Arc::new(g));
        self
    }

    pub fn with_k_partial<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.dfdk = Some(Arc::new(g));
        self
    }

    pub fn with_inversion<G>(mut self, g: G) -> Self
    where
        G: Fn(&[DataPoint], f64) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        self.invert = Some(Arc::new(g));
        self
    }

    pub fn with_singular_points<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, f64) -> bool + Send + Sync + 'static,
    {
        self.singular = Some(Arc::new(g));
        self
    }

    pub fn with_k_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.k_bounds = (lo, hi);
        self
    }

    pub fn with_param_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.param_bounds = bounds;
        self
    }

    pub fn with_initial_params(mut self, p: Vec<f64>) -> Self {
        self.initial = Some(p);
        self
    }
}

impl Model for FnModel {
    fn n_params(&self) -> usize {
        self.names.len()
    }

    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn eval(&self, p: &[f64], t: f64, k: f64) -> f64 {
        (self.f)(p, t, k)
    }

    fn param_partials(&self, p: &[f64], t: f64, k: f64) -> Option<Vec<f64>> {
        self.dfdp.as_ref().map(|g| g(p, t, k))
    }

    fn k_partial(&self, p: &[f64], t: f64, k: f64) -> Option<f64> {
        self.dfdk.as_ref().map(|g| g(p, t, k))
    }

    fn invert_closed_form(&self, points: &[DataPoint], k: f64) -> Option<Result<Vec<f64>>> {
        self.invert.as_ref().map(|g| g(points, k))
    }

    fn is_singular_point(&self, t: f64, k: f64) -> bool {
        self.singular.as_ref().is_some_and(|g| g(t, k))
    }

    fn k_bounds(&self) -> (f64, f64) {
        self.k_bounds
    }

    fn param_bounds(&self) -> Vec<(f64, f64)> {
        self.param_bounds.clone()
    }

    fn initial_params(&self) -> Vec<f64> {
        self.initial.clone().unwrap_or_else(|| {
            self.param_bounds
                .iter()
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect()
        })
    }
}

/// `y = P1 + P2 exp(-k t)`, inverted numerically. Used across the test
/// suites as a two-parameter model.
pub fn offset_exponential() -> FnModel {
    FnModel::new(2, |p, t, k| p[0] + p[1] * (-k * t).exp())
        .with_names(["offset", "amplitude"])
        .with_param_partials(|_, t, k| vec![1.0, (-k * t).exp()])
        .with_k_partial(|p, t, k| -p[1] * t * (-k * t).exp())
        .with_k_bounds(0.1, 10.0)
        .with_param_bounds(vec![(-2.0, 2.0), (-2.0, 2.0)])
}
