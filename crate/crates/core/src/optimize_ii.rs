//! Stationary points of a general cost `Q_E(x)` on a box, found by scanning
//! one coordinate `k = x_s` and following the path `P(k)` on which every
//! other gradient component vanishes. On that path
//! `dQ_E/dk = ∂Q_E/∂k`, so each root of `∂Q_E/∂k` along a branch is a
//! stationary point of `Q_E` in the full space.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::numerics::{self, determinant, SolverConfig, SquareMatrix};
use crate::path::{linear_grid, scan_roots, FailedInterval, ReducedPath};
use crate::reduce_ib::InnerSolveTrace;

/// Default number of scan grid points.
pub const DEFAULT_GRID: usize = 400;
/// Number of seeded multi-start points per grid point.
pub const MULTI_STARTS: usize = 8;
const MULTI_START_SEED: u64 = 0x5eed_0008;
/// A branch step longer than this factor times the previous one (and than
/// the floor) is treated as a jump onto another branch.
const JUMP_FACTOR: f64 = 4.0;
const JUMP_FLOOR: f64 = 1.0e-2;
/// Relative distance under which two solutions are the same point.
const SAME_POINT: f64 = 1.0e-6;
const SAME_RECORD: f64 = 1.0e-7;
/// Relative step for second differences of the cost value.
const SECOND_DIFF_STEP: f64 = 1.0e-4;

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A scalar cost on a box in `R^n`, `n >= 2`, with one coordinate chosen as
/// the scan variable `k`. The remaining coordinates, in order, form `P`.
#[derive(Clone)]
pub struct CostFunction {
    names: Vec<String>,
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradFn>>,
    bounds: Vec<(f64, f64)>,
    scan: usize,
}

impl fmt::Debug for CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostFunction")
            .field("names", &self.names)
            .field("bounds", &self.bounds)
            .field("scan", &self.scan)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl CostFunction {
    /// Scans coordinate 0 by default.
    pub fn new<F>(bounds: Vec<(f64, f64)>, value: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if bounds.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "cost needs at least 2 coordinates, got {}",
                bounds.len()
            )));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!(
                    "bounds of coordinate {i} must be finite with lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            names: (1..=bounds.len()).map(|i| format!("x{i}")).collect(),
            value: Arc::new(value),
            gradient: None,
            bounds,
            scan: 0,
        })
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_names<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} coordinates",
                names.len(),
                self.dim()
            )));
        }
        self.names = names;
        Ok(self)
    }

    pub fn with_scan_coordinate(mut self, scan: usize) -> Result<Self> {
        if scan >= self.dim() {
            return Err(Error::InvalidInput(format!(
                "scan coordinate {scan} out of range for {} coordinates",
                self.dim()
            )));
        }
        self.scan = scan;
        Ok(self)
    }

    /// Replaces the box of one coordinate.
    pub fn with_coordinate_bounds(mut self, i: usize, lo: f64, hi: f64) -> Result<Self> {
        if i >= self.dim() {
            return Err(Error::InvalidInput(format!("coordinate {i} out of range")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInput(format!(
                "bounds of coordinate {i} must be finite with lo < hi, got [{lo}, {hi}]"
            )));
        }
        self.bounds[i] = (lo, hi);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn scan_coordinate(&self) -> usize {
        self.scan
    }

    pub fn k_bounds(&self) -> (f64, f64) {
        self.bounds[self.scan]
    }

    /// Bounds of the `P` coordinates.
    pub fn p_bounds(&self) -> Vec<(f64, f64)> {
        self.split(&self.bounds).0
    }

    pub fn p_names(&self) -> Vec<String> {
        self.split(&self.names).0
    }

    /// Full coordinate vector from `(P, k)`.
    pub fn compose(&self, p: &[f64], k: f64) -> Vec<f64> {
        let mut x = p.to_vec();
        x.insert(self.scan, k);
        x
    }

    /// `(P, k)` from a full coordinate vector.
    pub fn split<T: Clone>(&self, x: &[T]) -> (Vec<T>, T) {
        let mut p = x.to_vec();
        let k = p.remove(self.scan);
        (p, k)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let v = (self.value)(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                context: format!("cost at {x:?}"),
            })
        }
    }

    /// Full gradient: analytic when supplied, central differences otherwise.
    pub fn gradient(&self, x: &[f64], fd_step: f64) -> Result<Vec<f64>> {
        let g = match &self.gradient {
            Some(g) => g(x),
            None => numerics::fd_gradient(|y| (self.value)(y), x, fd_step)?,
        };
        if g.len() != self.dim() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("cost gradient at {x:?}"),
            });
        }
        Ok(g)
    }

    /// Hessian restricted to the coordinates `idx`, symmetrized.
    pub fn hessian_block(&self, x: &[f64], idx: &[usize], fd_step: f64) -> Result<SquareMatrix> {
        let n = idx.len();
        let mut h = vec![0.0; n * n];
        let mut y = x.to_vec();
        if self.gradient.is_some() {
            for (c, &j) in idx.iter().enumerate() {
                let s = fd_step * x[j].abs().max(1.0);
                y[j] = x[j] + s;
                let gp = self.gradient(&y, fd_step)?;
                y[j] = x[j] - s;
                let gm = self.gradient(&y, fd_step)?;
                y[j] = x[j];
                for (r, &i) in idx.iter().enumerate() {
                    h[r * n + c] = (gp[i] - gm[i]) / (2.0 * s);
                }
            }
        } else {
            let f0 = self.value(x)?;
            let s: Vec<f64> = idx.iter().map(|&i| SECOND_DIFF_STEP * x[i].abs().max(1.0)).collect();
            for (a, &i) in idx.iter().enumerate() {
                y[i] = x[i] + s[a];
                let fp = self.value(&y)?;
                y[i] = x[i] - s[a];
                let fm = self.value(&y)?;
                y[i] = x[i];
                h[a * n + a] = (fp - 2.0 * f0 + fm) / (s[a] * s[a]);
                for (b, &j) in idx.iter().enumerate().take(a) {
                    let mut corner = |si: f64, sj: f64| {
                        y[i] = x[i] + si * s[a];
                        y[j] = x[j] + sj * s[b];
                        let v = self.value(&y);
                        y[i] = x[i];
                        y[j] = x[j];
                        v
                    };
                    let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                        / (4.0 * s[a] * s[b]);
                    h[a * n + b] = v;
                    h[b * n + a] = v;
                }
            }
        }
        for r in 0..n {
            for c in 0..r {
                let m = 0.5 * (h[r * n + c] + h[c * n + r]);
                h[r * n + c] = m;
                h[c * n + r] = m;
            }
        }
        SquareMatrix::new(n, h)
    }

    fn p_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| i != self.scan).collect()
    }

    fn out_of_box(&self, x: &[f64]) -> Option<(usize, f64)> {
        x.iter().zip(&self.bounds).enumerate().find_map(|(i, (&v, &(lo, hi)))| {
            let slack = 1e-12 * (hi - lo);
            (v < lo - slack || v > hi + slack).then_some((i, v))
        })
    }
}

/// Solves `∂Q_E/∂P_j (P, k) = 0` for all `j` by Newton iteration from
/// `warm_start`. A solution outside the box is an error, never clamped.
pub fn implicit_path_point(cost: &CostFunction, k: f64, warm_start: &[f64], cfg: &SolverConfig) -> Result<InnerSolveTrace> {
    let n = cost.dim() - 1;
    if warm_start.len() != n || warm_start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("bad warm start {warm_start:?}")));
    }
    if let Some((coordinate, value)) = cost.out_of_box(&cost.compose(warm_start, k)) {
        return Err(Error::InvalidInput(format!(
            "warm start coordinate {coordinate} = {value} outside the box"
        )));
    }
    let idx = cost.p_indices();
    let out = numerics::solve_newton_nd_with_jacobian(
        |p| {
            let g = cost.gradient(&cost.compose(p, k), cfg.fd_step)?;
            Ok(cost.split(&g).0)
        },
        |p| cost.hessian_block(&cost.compose(p, k), &idx, cfg.fd_step),
        warm_start,
        cfg,
    )?;
    if let Some((coordinate, value)) = cost.out_of_box(&cost.compose(&out.x, k)) {
        return Err(Error::OutOfBox { k, coordinate, value });
    }
    Ok(InnerSolveTrace {
        k,
        params: out.x,
        hessian_det: out.jacobian_det,
        newton_iters: out.iterations,
        residual: out.residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Min,
    Max,
    Saddle,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StationaryPointRecord {
    pub k_i: f64,
    pub p_at_k: ParameterVector,
    pub q_value: f64,
    pub kind: Kind,
    /// Determinant of the Hessian block in `P`.
    pub sub_hessian_det: f64,
    /// Euclidean norm of the full gradient.
    pub full_gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScanReport {
    /// Sorted by `k_i`.
    pub records: Vec<StationaryPointRecord>,
    /// Merged `k` intervals where a followed branch hit the determinant guard.
    pub degenerate_intervals: Vec<(f64, f64)>,
    /// Brackets on a branch whose refinement failed.
    pub failed_intervals: Vec<FailedInterval>,
    pub branches: usize,
    pub grid_size: usize,
}

/// Eigenvalue-sign classification of the full Hessian at `x`, with
/// `ε = 1e-6 · max|λ|`.
pub fn classify_point(cost: &CostFunction, x: &[f64], fd_step: f64) -> Result<Kind> {
    let idx: Vec<usize> = (0..cost.dim()).collect();
    let h = cost.hessian_block(x, &idx, fd_step)?;
    Ok(classify_hessian(&h))
}

fn classify_hessian(h: &SquareMatrix) -> Kind {
    let n = h.order();
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, h.as_slice())).eigenvalues;
    let scale = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-6 * scale;
    if scale == 0.0 || eig.iter().any(|v| v.abs() <= eps) {
        Kind::Degenerate
    } else if eig.iter().all(|&v| v > 0.0) {
        Kind::Min
    } else if eig.iter().all(|&v| v < 0.0) {
        Kind::Max
    } else {
        Kind::Saddle
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

struct Branch<'a> {
    path: ReducedPath<'a>,
    /// Accepted grid points `(k, P)` in order.
    points: Vec<(f64, Vec<f64>)>,
    last_step: f64,
    alive: bool,
}

/// Marches `k` over its bounds, follows every branch of the implicit path
/// found by seeded multi-start, refines each sign change of `∂Q_E/∂k` along
/// a branch and lifts the roots to classified full-space stationary points.
pub fn scan_stationary(cost: &CostFunction, grid_size: usize, cfg: &SolverConfig) -> Result<ScanReport> {
    cfg.validate()?;
    if grid_size < 3 {
        return Err(Error::InvalidInput(format!("grid_size must be >= 3, got {grid_size}")));
    }
    let (klo, khi) = cost.k_bounds();
    let grid = linear_grid(klo, khi, grid_size);
    let p_bounds = cost.p_bounds();
    let diameter = norm(&p_bounds.iter().map(|(lo, hi)| hi - lo).collect::<Vec<_>>());
    let floor = JUMP_FLOOR * diameter;

    let mut rng = ChaCha8Rng::seed_from_u64(MULTI_START_SEED);
    let starts: Vec<Vec<f64>> = (0..MULTI_STARTS)
        .map(|_| p_bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect())
        .collect();

    let mut branches: Vec<Branch> = Vec::new();
    let mut degenerate: Vec<(f64, f64)> = Vec::new();
    let mut solved_any = false;
    let mut last_error: Option<Error> = None;

    for (i, &k) in grid.iter().enumerate() {
        for b in branches.iter_mut().filter(|b| b.alive) {
            match b.path.eval(k) {
                Ok(pt) => {
                    let prev = &b.points.last().expect("branch has a point").1;
                    let step = dist(prev, &pt.params);
                    if step > floor && step > JUMP_FACTOR * b.last_step.max(floor) {
                        b.path.forget(k);
                        b.alive = false;
                    } else {
                        b.last_step = step;
                        b.points.push((k, pt.params.clone()));
                    }
                }
                Err(e) => {
                    if matches!(e, Error::SingularJacobian { .. }) {
                        degenerate.push((grid[i - 1], k));
                    }
                    b.alive = false;
                }
            }
        }
        // Two branches that meet are one from here on; keep the older.
        for a in 0..branches.len() {
            for c in a + 1..branches.len() {
                let (head, tail) = branches.split_at_mut(c);
                let (ba, bc) = (&head[a], &mut tail[0]);
                if !(ba.alive && bc.alive) {
                    continue;
                }
                let (Some(pa), Some(pc)) = (ba.points.last(), bc.points.last()) else { continue };
                if pa.0 == k && pc.0 == k && dist(&pa.1, &pc.1) <= SAME_POINT * norm(&pa.1).max(1.0) {
                    bc.path.forget(k);
                    bc.points.pop();
                    bc.alive = false;
                }
            }
        }
        for s in &starts {
            match implicit_path_point(cost, k, s, cfg) {
                Ok(tr) => {
                    solved_any = true;
                    let p = tr.params.clone();
                    let known = branches.iter().any(|b| {
                        b.alive
                            && b.points
                                .last()
                                .is_some_and(|(kb, pb)| *kb == k && dist(pb, &p) <= SAME_POINT * norm(&p).max(1.0))
                    });
                    if known {
                        continue;
                    }
                    let path = ReducedPath::cost_gradient(cost, *cfg);
                    path.add_hint(k, p.clone());
                    // Re-solve through the path so its cache holds this point.
                    let Ok(pt) = path.eval(k) else { continue };
                    branches.push(Branch {
                        path,
                        points: vec![(k, pt.params.clone())],
                        last_step: 0.0,
                        alive: true,
                    });
                }
                Err(e) => last_error = Some(e),
            }
        }
        solved_any |= branches.iter().any(|b| b.alive);
    }
    if !solved_any {
        return Err(last_error.unwrap_or(Error::NoRootInRange { lo: klo, hi: khi }));
    }

    let mut candidates: Vec<StationaryPointRecord> = Vec::new();
    let mut failed_intervals = Vec::new();
    let s = cost.scan_coordinate();
    for b in &branches {
        if b.points.len() < 2 {
            continue;
        }
        let ks: Vec<f64> = b.points.iter().map(|(k, _)| *k).collect();
        let scan = scan_roots(
            |k| {
                let pt = b.path.eval(k)?;
                let g = cost.gradient(&cost.compose(&pt.params, k), cfg.fd_step)?;
                Ok(g[s])
            },
            &ks,
            cfg,
        );
        for (lo, hi, reason) in scan.unrefined {
            failed_intervals.push(FailedInterval { lo, hi, reason });
        }
        for located in scan.roots {
            let k = located.root.x;
            let Ok(pt) = b.path.eval(k) else { continue };
            if let Some(r) = lift(cost, &pt.params, k, cfg)? {
                candidates.push(r);
            }
        }
    }

    // The same stationary point may be reached from several branches.
    candidates.sort_by(|a, b| a.full_gradient_norm.total_cmp(&b.full_gradient_norm));
    let mut records: Vec<StationaryPointRecord> = Vec::new();
    for c in candidates {
        let xc = cost.compose(&c.p_at_k.values, c.k_i);
        let dup = records.iter().any(|r| {
            let xr = cost.compose(&r.p_at_k.values, r.k_i);
            dist(&xc, &xr) <= SAME_RECORD * norm(&xc).max(1.0)
        });
        if !dup {
            records.push(c);
        }
    }
    records.sort_by(|a, b| {
        a.k_i
            .total_cmp(&b.k_i)
            .then_with(|| a.p_at_k.values.partial_cmp(&b.p_at_k.values).unwrap_or(std::cmp::Ordering::Equal))
    });

    degenerate.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in degenerate {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }

    Ok(ScanReport {
        records,
        degenerate_intervals: merged,
        failed_intervals,
        branches: branches.len(),
        grid_size,
    })
}

/// Builds the record for a path root, first tightening it with Newton
/// iteration on the full gradient. The tightened point is kept only when it
/// stays next to the path root.
fn lift(cost: &CostFunction, p: &[f64], k: f64, cfg: &SolverConfig) -> Result<Option<StationaryPointRecord>> {
    let x0 = cost.compose(p, k);
    let all: Vec<usize> = (0..cost.dim()).collect();
    let polished = numerics::solve_newton_nd_with_jacobian(
        |x| cost.gradient(x, cfg.fd_step),
        |x| cost.hessian_block(x, &all, cfg.fd_step),
        &x0,
        cfg,
    );
    let x = match polished {
        Ok(out) if dist(&out.x, &x0) <= SAME_POINT * norm(&x0).max(1.0) && cost.out_of_box(&out.x).is_none() => out.x,
        _ => x0,
    };
    let grad = cost.gradient(&x, cfg.fd_step)?;
    let gnorm = norm(&grad);
    let idx = cost.p_indices();
    let sub = cost.hessian_block(&x, &idx, cfg.fd_step)?;
    let sub_det = determinant(&sub);
    let full = cost.hessian_block(&x, &all, cfg.fd_step)?;
    let kind = if sub.is_near_singular(sub_det, cfg.det_eps) {
        Kind::Degenerate
    } else {
        classify_hessian(&full)
    };
    if kind != Kind::Degenerate && gnorm > cfg.tol {
        return Ok(None);
    }
    let (pp, kk) = cost.split(&x);
    Ok(Some(StationaryPointRecord {
        k_i: kk,
        p_at_k: ParameterVector::new(cost.p_names(), pp)?,
        q_value: cost.value(&x)?,
        kind,
        sub_hessian_det: sub_det,
        full_gradient_norm: gnorm,
    }))
}

/// Test costs available by name.
pub mod builtins {
    use super::CostFunction;

    pub const NAMES: [&str; 7] = [
        "bowl",
        "himmelblau",
        "inverted-bowl",
        "saddle",
        "quartic-flat",
        "three-well",
        "two-well-same-k",
    ];

    /// Builtin cost by name, scanning its first coordinate.
    pub fn by_name(name: &str) -> Option<CostFunction> {
        Some(match name {
            "bowl" => bowl(),
            "himmelblau" => himmelblau(),
            "inverted-bowl" => inverted_bowl(),
            "saddle" => saddle(),
            "quartic-flat" => quartic_flat(),
            "three-well" => three_well(),
            "two-well-same-k" => two_well_same_k(),
            _ => return None,
        })
    }

    fn build(
        names: &[&str],
        bounds: Vec<(f64, f64)>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> CostFunction {
        CostFunction::new(bounds, f)
            .and_then(|c| c.with_names(names.iter().copied()))
            .expect("builtin bounds are valid")
            .with_gradient(g)
    }

    /// `(P − 2)² + (k − 3)²`.
    pub fn bowl() -> CostFunction {
        build(
            &["k", "p"],
            vec![(0.0, 6.0), (-1.0, 5.0)],
            |x| (x[1] - 2.0).powi(2) + (x[0] - 3.0).powi(2),
            |x| vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] - 2.0)],
        )
    }

    /// `(x² + y − 11)² + (x + y² − 7)²` on `[−5, 5]²`.
    pub fn himmelblau() -> CostFunction {
        build(
            &["x", "y"],
            vec![(-5.0, 5.0), (-5.0, 5.0)],
            |v| {
                let (x, y) = (v[0], v[1]);
                (x * x + y - 11.0).powi(2) + (x + y * y - 7.0).powi(2)
            },
            |v| {
                let (x, y) = (v[0], v[1]);
                let a = x * x + y - 11.0;
                let b = x + y * y - 7.0;
                vec![4.0 * x * a + 2.0 * b, 2.0 * a + 4.0 * y * b]
            },
        )
    }

    /// `−((P − 1)² + (k − 1)²)`.
    pub fn inverted_bowl() -> CostFunction {
        build(
            &["k", "p"],
            vec![(-1.0, 3.0), (-1.0, 3.0)],
            |x| -((x[1] - 1.0).powi(2) + (x[0] - 1.0).powi(2)),
            |x| vec![-2.0 * (x[0] - 1.0), -2.0 * (x[1] - 1.0)],
        )
    }

    /// `P² − k²`.
    pub fn saddle() -> CostFunction {
        build(
            &["k", "p"],
            vec![(-1.0, 1.0), (-1.0, 1.0)],
            |x| x[1] * x[1] - x[0] * x[0],
            |x| vec![-2.0 * x[0], 2.0 * x[1]],
        )
    }

    /// `P² + k⁴`, flat in `k` at the origin.
    pub fn quartic_flat() -> CostFunction {
        build(
            &["k", "p"],
            vec![(-1.0, 1.0), (-1.0, 1.0)],
            |x| x[1] * x[1] + x[0].powi(4),
            |x| vec![4.0 * x[0].powi(3), 2.0 * x[1]],
        )
    }

    /// `(p₁ − sin k)² + (p₂ − k/2)² + ((k − 1)(k − 3)(k − 5))²`: minima at
    /// `k = 1, 3, 5` and saddles at `k = 3 ± 2/√3`.
    pub fn three_well() -> CostFunction {
        build(
            &["k", "p1", "p2"],
            vec![(0.0, 6.0), (-2.0, 2.0), (-1.0, 4.0)],
            |x| {
                let w = (x[0] - 1.0) * (x[0] - 3.0) * (x[0] - 5.0);
                (x[1] - x[0].sin()).powi(2) + (x[2] - 0.5 * x[0]).powi(2) + w * w
            },
            |x| {
                let k = x[0];
                let w = (k - 1.0) * (k - 3.0) * (k - 5.0);
                let dw = 3.0 * k * k - 18.0 * k + 23.0;
                let a = x[1] - k.sin();
                let b = x[2] - 0.5 * k;
                vec![-2.0 * a * k.cos() - b + 2.0 * w * dw, 2.0 * a, 2.0 * b]
            },
        )
    }

    /// `(P² − 1)² + (k − 2)²`: two minima sharing `k = 2`.
    pub fn two_well_same_k() -> CostFunction {
        build(
            &["k", "p"],
            vec![(0.0, 4.0), (-2.0, 2.0)],
            |x| (x[1] * x[1] - 1.0).powi(2) + (x[0] - 2.0).powi(2),
            |x| vec![2.0 * (x[0] - 2.0), 4.0 * x[1] * (x[1] * x[1] - 1.0)],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn separable_bowl_path_is_constant() {
        let c = builtins::bowl();
        for k in [0.0, 1.5, 4.0] {
            let tr = implicit_path_point(&c, k, &[0.0], &cfg()).unwrap();
            assert!((tr.params[0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_normal_equation_path() {
        let c = CostFunction::new(vec![(-5.0, 5.0), (-5.0, 5.0)], |x| (x[1] - x[0]).powi(2) + 0.1 * x[1] * x[1])
            .unwrap()
            .with_gradient(|x| vec![-2.0 * (x[1] - x[0]), 2.0 * (x[1] - x[0]) + 0.2 * x[1]]);
        for k in [-2.0, 0.5, 3.0] {
            let tr = implicit_path_point(&c, k, &[0.0], &cfg()).unwrap();
            assert!((tr.params[0] - k / 1.1).abs() < 1e-10);
        }
    }

    #[test]
    fn himmelblau_exact_critical_point() {
        let c = builtins::himmelblau();
        let tr = implicit_path_point(&c, 3.0, &[1.5], &cfg()).unwrap();
        assert!((tr.params[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn path_point_idempotent() {
        let c = builtins::three_well();
        let tr = implicit_path_point(&c, 2.2, &[0.0, 0.0], &cfg()).unwrap();
        let again = implicit_path_point(&c, 2.2, &tr.params, &cfg()).unwrap();
        assert!(dist(&tr.params, &again.params) <= 1e-12);
    }

    #[test]
    fn out_of_box_is_reported() {
        // Stationary in P at P = k + 3, outside [-1, 1] for k > -2.
        let c = CostFunction::new(vec![(-1.0, 1.0), (-1.0, 1.0)], |x| (x[1] - x[0] - 3.0).powi(2))
            .unwrap()
            .with_gradient(|x| {
                let d = 2.0 * (x[1] - x[0] - 3.0);
                vec![-d, d]
            });
        let e = implicit_path_point(&c, 0.5, &[0.0], &cfg()).unwrap_err();
        assert_eq!(e, Error::OutOfBox { k: 0.5, coordinate: 1, value: 3.5 });
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_point(&builtins::bowl(), &[3.0, 2.0], 1e-6).unwrap(), Kind::Min);
        assert_eq!(classify_point(&builtins::saddle(), &[0.0, 0.0], 1e-6).unwrap(), Kind::Saddle);
        assert_eq!(classify_point(&builtins::inverted_bowl(), &[1.0, 1.0], 1e-6).unwrap(), Kind::Max);
        assert_eq!(classify_point(&builtins::quartic_flat(), &[0.0, 0.0], 1e-6).unwrap(), Kind::Degenerate);
    }

    #[test]
    fn value_only_cost_uses_second_differences() {
        let c = CostFunction::new(vec![(-1.0, 1.0), (-1.0, 1.0)], |x| x[1] * x[1] - x[0] * x[0]).unwrap();
        assert_eq!(classify_point(&c, &[0.0, 0.0], 1e-6).unwrap(), Kind::Saddle);
    }

    #[test]
    fn bowl_scan_single_min() {
        let r = scan_stationary(&builtins::bowl(), DEFAULT_GRID, &cfg()).unwrap();
        assert_eq!(r.records.len(), 1);
        let rec = &r.records[0];
        assert!((rec.k_i - 3.0).abs() < 1e-10 && (rec.p_at_k.values[0] - 2.0).abs() < 1e-10);
        assert_eq!(rec.kind, Kind::Min);
        assert!(rec.q_value < 1e-18);
    }

    #[test]
    fn inverted_bowl_scan_single_max() {
        let r = scan_stationary(&builtins::inverted_bowl(), DEFAULT_GRID, &cfg()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].kind, Kind::Max);
        assert!((r.records[0].k_i - 1.0).abs() < 1e-10);
    }

    #[test]
    fn shared_k_minima_not_merged() {
        let r = scan_stationary(&builtins::two_well_same_k(), DEFAULT_GRID, &cfg()).unwrap();
        let mins: Vec<&StationaryPointRecord> = r.records.iter().filter(|r| r.kind == Kind::Min).collect();
        assert_eq!(mins.len(), 2, "{:?}", r.records);
        assert!(mins.iter().all(|m| (m.k_i - 2.0).abs() < 1e-10));
        assert!((mins[0].p_at_k.values[0] + mins[1].p_at_k.values[0]).abs() < 1e-10);
    }

    #[test]
    fn grid_too_small() {
        assert!(scan_stationary(&builtins::bowl(), 2, &cfg()).is_err());
    }

    #[test]
    fn scan_coordinate_choice() {
        let c = builtins::bowl().with_scan_coordinate(1).unwrap();
        let r = scan_stationary(&c, 100, &cfg()).unwrap();
        assert_eq!(r.records.len(), 1);
        assert!((r.records[0].k_i - 2.0).abs() < 1e-10);
        assert_eq!(r.records[0].p_at_k.names, vec!["k".to_string()]);
        assert!((r.records[0].p_at_k.values[0] - 3.0).abs() < 1e-10);
        assert!(c.with_scan_coordinate(2).is_err());
    }
}
