//! Exact reduction: at each `k` the inner system
//! `h_j(P, k) = Σ (y_i − f_i) ∂f_i/∂P_j = 0` is solved for `P(k)`, and `k` is
//! chosen where `Q₁'(k) = −2 Σ (y_i − f_i) ∂f_i/∂k` vanishes. On the path the
//! `dP/dk` terms of the total derivative drop out, so the one-dimensional
//! root coincides with a stationary point of the full least-squares cost.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::model::{evaluate, partials, Dataset, Model, ParameterVector};
use crate::numerics::{self, SolverConfig, SquareMatrix};
use crate::path::{search_roots, KSearch, PathPoint, PathSource, ReducedPath};
use crate::reduce_ia::{q_of_k, starting_mean};
use crate::report::{residual_table, sum_of_squares_gradient, CandidateRoot, Diagnostics, FitReport, Method};

/// Relative step for the second derivatives of `f` in `P`.
const SECOND_DIFF_STEP: f64 = 1.0e-4;
/// Allowed relative asymmetry of the inner Jacobian.
const SYMMETRY_TOL: f64 = 1.0e-8;

/// A converged inner solve at one `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveTrace {
    pub k: f64,
    pub params: Vec<f64>,
    /// Determinant of `∂h_i/∂P_j` at the solution.
    pub hessian_det: f64,
    pub newton_iters: usize,
    /// Max-norm of the inner system at the solution.
    pub residual: f64,
}

impl InnerSolveTrace {
    pub fn into_path_point(self) -> PathPoint {
        PathPoint {
            k: self.k,
            params: self.params,
            solutions: Vec::new(),
            spread: Vec::new(),
            singular_count: 0,
            hessian_det: Some(self.hessian_det),
            iterations: self.newton_iters,
            residual: self.residual,
        }
    }
}

/// Second derivatives of `f(·, t, k)` in `P`, by central differences.
fn model_hessian(model: &dyn Model, p: &[f64], t: f64, k: f64) -> Result<Vec<f64>> {
    let n = p.len();
    let h: Vec<f64> = p.iter().map(|v| SECOND_DIFF_STEP * v.abs().max(1.0)).collect();
    let mut q = p.to_vec();
    let f = |q: &[f64]| evaluate(model, q, k, t);
    let f0 = f(p)?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        q[i] = p[i] + h[i];
        let fp = f(&q)?;
        q[i] = p[i] - h[i];
        let fm = f(&q)?;
        q[i] = p[i];
        out[i * n + i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                q[i] = p[i] + si * h[i];
                q[j] = p[j] + sj * h[j];
                let v = f(&q);
                q[i] = p[i];
                q[j] = p[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * h[i] * h[j]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

/// `h_j(P, k) = Σ (y_i − f_i) ∂f_i/∂P_j`.
pub fn inner_residual(data: &Dataset, model: &dyn Model, p: &[f64], k: f64, fd_step: f64) -> Result<Vec<f64>> {
    let mut h = vec![0.0; p.len()];
    for pt in data.points() {
        let r = pt.y - evaluate(model, p, k, pt.t)?;
        let (dp, _) = partials(model, p, k, pt.t, fd_step)?;
        for (hj, d) in h.iter_mut().zip(&dp) {
            *hj += r * d;
        }
    }
    Ok(h)
}

/// `∂h_i/∂P_j = Σ ((y − f) ∂²f/∂P_i∂P_j − ∂f/∂P_i ∂f/∂P_j)`.
pub fn inner_jacobian(data: &Dataset, model: &dyn Model, p: &[f64], k: f64, fd_step: f64) -> Result<SquareMatrix> {
    let n = p.len();
    let mut m = vec![0.0; n * n];
    for pt in data.points() {
        let r = pt.y - evaluate(model, p, k, pt.t)?;
        let (dp, _) = partials(model, p, k, pt.t, fd_step)?;
        let hess = model_hessian(model, p, pt.t, k)?;
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] += r * hess[i * n + j] - dp[i] * dp[j];
            }
        }
    }
    let m = SquareMatrix::new(n, m)?;
    let asym = m.relative_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::Domain(format!("inner Jacobian asymmetric (relative {asym:e})")));
    }
    Ok(m)
}

/// Solves `h(P, k) = 0` by Newton iteration from `warm_start`.
pub fn inner_stationary(
    data: &Dataset,
    model: &dyn Model,
    k: f64,
    warm_start: &[f64],
    cfg: &SolverConfig,
) -> Result<InnerSolveTrace> {
    if warm_start.len() != model.n_params() || warm_start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("bad warm start {warm_start:?}")));
    }
    let out = numerics::solve_newton_nd_with_jacobian(
        |p| inner_residual(data, model, p, k, cfg.fd_step),
        |p| inner_jacobian(data, model, p, k, cfg.fd_step),
        warm_start,
        cfg,
    )?;
    Ok(InnerSolveTrace {
        k,
        params: out.x,
        hessian_det: out.jacobian_det,
        newton_iters: out.iterations,
        residual: out.residual,
    })
}

/// `Σ (y_i − f_i) ∂f_i/∂k` at `(P(k), k)`; `dQ₁/dk = −2 · q1_prime`.
pub fn q1_prime(path: &ReducedPath, k: f64) -> Result<f64> {
    let (data, model) = path
        .fit_problem()
        .ok_or_else(|| Error::InvalidInput("path is not attached to a dataset".into()))?;
    let p = path.eval(k)?;
    let mut s = 0.0;
    for pt in data.points() {
        let r = pt.y - evaluate(model, &p.params, k, pt.t)?;
        let (_, dk) = partials(model, &p.params, k, pt.t, path.config().fd_step)?;
        s += r * dk;
    }
    Ok(s)
}

/// The stationary path, warm-started at the low end of `search` from the
/// mean of the subset inversions there.
pub fn stationary_path<'a>(
    data: &'a Dataset,
    model: &'a dyn Model,
    search: &KSearch,
    cfg: &SolverConfig,
) -> Result<ReducedPath<'a>> {
    cfg.validate()?;
    let path = ReducedPath::stationary(data, model, *cfg);
    debug_assert_eq!(path.source(), PathSource::Ib);
    let (lo, _) = search.range();
    if let Some(h) = starting_mean(data, model, lo, cfg) {
        path.add_hint(lo, h);
    }
    Ok(path)
}

/// Fits `k` by solving `q1_prime(k) = 0` along the stationary path.
///
/// Grid points where the inner solve fails split the scan; roots are still
/// sought in the remaining segments. With no root and a tripped
/// determinant guard, the guarded intervals are returned as
/// [`Error::DegenerateSegment`].
pub fn fit_ib(data: &Dataset, model: &dyn Model, search: &KSearch, cfg: &SolverConfig) -> Result<FitReport> {
    let path = stationary_path(data, model, search, cfg)?;
    let evaluations = Cell::new(0usize);
    let scan = search_roots(
        |k| {
            evaluations.set(evaluations.get() + 1);
            q1_prime(&path, k)
        },
        search,
        cfg,
    )?;
    let (lo, hi) = search.range();

    let mut candidates = Vec::new();
    for located in &scan.roots {
        let Ok(q) = q_of_k(&path, located.root.x) else { continue };
        candidates.push((located.root, q));
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.x.total_cmp(&b.0.x)))
        .copied();
    let Some((root, _)) = best else {
        let guarded: Vec<(f64, f64)> = scan
            .failed
            .iter()
            .filter(|f| f.reason == "singular_jacobian")
            .map(|f| (f.lo, f.hi))
            .collect();
        return Err(if guarded.is_empty() {
            Error::NoRootInRange { lo, hi }
        } else {
            Error::DegenerateSegment { intervals: guarded }
        });
    };

    let k_star = root.x;
    let point = path.eval(k_star)?;
    let (residuals, q_value, fd) = residual_table(data, model, &point.params, k_star)?;
    let grad = sum_of_squares_gradient(data, model, &point.params, k_star, cfg.fd_step)?;
    Ok(FitReport {
        method: Method::Ib,
        k_star,
        params: ParameterVector::for_model(model, point.params.clone())?,
        param_spread: None,
        fd,
        q_value,
        residuals,
        iterations: root.iterations,
        root_residual: q1_prime(&path, k_star)?.abs(),
        combos_used: 0,
        combos_singular: 0,
        diagnostics: Diagnostics {
            candidate_roots: candidates
                .iter()
                .map(|(r, q)| CandidateRoot {
                    k: r.x,
                    q_value: *q,
                    root_residual: r.fx.abs(),
                })
                .collect(),
            failed_intervals: scan.failed,
            unrefined_brackets: scan.unrefined.len(),
            grid_size: search.grid_size(),
            evaluations: evaluations.get(),
            gradient_norm: Some(grad.iter().map(|g| g * g).sum::<f64>().sqrt()),
            starts_tried: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{first_order_model, FirstOrderConfig};
    use crate::model::FnModel;

    fn noisy_first_order() -> Dataset {
        let noise = [0.004, -0.006, 0.002, 0.005, -0.003, -0.004, 0.006, -0.001, 0.003, -0.002];
        let pairs: Vec<(f64, f64)> = (1..=10)
            .map(|i| {
                let t = 60.0 * i as f64;
                (t, 0.9 - 0.8 * (-0.01 * t).exp() + noise[i - 1])
            })
            .collect();
        Dataset::from_pairs("fo", &pairs).unwrap()
    }

    #[test]
    fn linear_in_p_matches_normal_equation() {
        let g = |t: f64, k: f64| (-k * t).exp() + 0.3 * t;
        let m = FnModel::new(1, move |p, t, k| p[0] * g(t, k)).with_param_partials(move |_, t, k| vec![g(t, k)]);
        let d = Dataset::from_pairs("lin", &[(0.5, 1.0), (1.0, 0.7), (2.0, 0.9), (3.0, 1.4)]).unwrap();
        let k = 0.7;
        let tr = inner_stationary(&d, &m, k, &[0.0], &SolverConfig::default()).unwrap();
        let num: f64 = d.points().iter().map(|p| p.y * g(p.t, k)).sum();
        let den: f64 = d.points().iter().map(|p| g(p.t, k).powi(2)).sum();
        assert!((tr.params[0] - num / den).abs() < 1e-12);
        assert!(tr.hessian_det < 0.0);
    }

    #[test]
    fn first_order_weighted_average() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let d = noisy_first_order();
        for k in [0.004, 0.01, 0.03] {
            let tr = inner_stationary(&d, &m, k, &[0.5], &SolverConfig::default()).unwrap();
            let (mut num, mut den) = (0.0, 0.0);
            for p in d.points() {
                let e = (-k * p.t).exp();
                num += (p.y - 0.1 * e) * (1.0 - e);
                den += (1.0 - e) * (1.0 - e);
            }
            assert!((tr.params[0] - num / den).abs() < 1e-10, "k = {k}");
        }
    }

    #[test]
    fn two_parameter_jacobian_symmetric_and_guarded() {
        let m = crate::model::offset_exponential();
        let pairs: Vec<(f64, f64)> = (0..8).map(|i| (i as f64 * 0.5, 0.3 + 1.2 * (-0.9 * i as f64 * 0.5).exp())).collect();
        let d = Dataset::from_pairs("oe", &pairs).unwrap();
        let j = inner_jacobian(&d, &m, &[0.2, 1.0], 0.9, 1e-6).unwrap();
        assert!(j.relative_asymmetry() <= 1e-8);
        let tr = inner_stationary(&d, &m, 0.9, &[0.0, 0.0], &SolverConfig::default()).unwrap();
        assert!((tr.params[0] - 0.3).abs() < 1e-9 && (tr.params[1] - 1.2).abs() < 1e-9);
        // All data at one t: the two columns are proportional.
        let flat = Dataset::from_pairs("flat", &[(1.0, 1.0), (1.0, 1.1), (1.0, 0.9)]).unwrap();
        let e = inner_stationary(&flat, &m, 0.9, &[0.0, 0.0], &SolverConfig::default()).unwrap_err();
        assert_eq!(e.kind(), "singular_jacobian");
    }

    #[test]
    fn q1_prime_matches_difference_of_q1() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let d = noisy_first_order();
        let cfg = SolverConfig::default();
        let path = ReducedPath::stationary(&d, &m, cfg);
        path.add_hint(0.0, vec![0.9]);
        for k in [0.006, 0.0123, 0.02] {
            let h = 1e-6 * k;
            let fd = (q_of_k(&path, k + h).unwrap() - q_of_k(&path, k - h).unwrap()) / (2.0 * h);
            let an = -2.0 * q1_prime(&path, k).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an.abs(), "k = {k}: {fd} vs {an}");
        }
    }

    #[test]
    fn noiseless_fit_recovers_truth() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let pairs: Vec<(f64, f64)> = (1..=10)
            .map(|i| {
                let t = 60.0 * i as f64;
                (t, 0.9 - 0.8 * (-0.01 * t).exp())
            })
            .collect();
        let d = Dataset::from_pairs("fo", &pairs).unwrap();
        let cfg = SolverConfig::default();
        let r = fit_ib(&d, &m, &KSearch::over_bounds(&m, 200), &cfg).unwrap();
        assert!((r.k_star - 0.01).abs() < 1e-9 * 0.01, "{}", r.k_star);
        assert!(r.fd <= 1e-10);
        assert!(r.root_residual <= cfg.tol);
    }
}
