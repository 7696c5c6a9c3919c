//! Unconstrained least squares in all of `(P, k)` by multi-start damped
//! Newton iteration, and the composite subset metric `Q_c`.
//!
//! Nothing here uses the reduced paths, so the results serve as independent
//! references for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{evaluate, partials, Dataset, Model, ParameterVector};
use crate::numerics::{solve_linear, SolverConfig, SquareMatrix};
use crate::reduce_ia::{mean_path, CombinationPolicy};
use crate::report::{residual_table, Diagnostics, FitReport, Method};

/// Default number of multi-start points.
pub const DEFAULT_STARTS: usize = 16;
/// Newton steps attempted after convergence; kept only while the gradient
/// norm strictly decreases.
const POLISH_STEPS: usize = 4;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FullLsResult {
    pub params: ParameterVector,
    pub k: f64,
    pub q_value: f64,
    /// Euclidean norm of the gradient in `(P, k)`.
    pub gradient_norm: f64,
    pub starts_tried: usize,
    pub starts_converged: usize,
}

/// `Σ w_i (y_i − f(P, t_i, k))²` over `x = (P, k)`.
struct Objective<'a> {
    data: &'a Dataset,
    model: &'a dyn Model,
    weights: &'a [f64],
    fd_step: f64,
}

impl Objective<'_> {
    fn split<'x>(&self, x: &'x [f64]) -> (&'x [f64], f64) {
        (&x[..x.len() - 1], x[x.len() - 1])
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let (p, k) = self.split(x);
        let mut q = 0.0;
        for (pt, w) in self.data.points().iter().zip(self.weights) {
            if *w == 0.0 {
                continue;
            }
            let r = pt.y - evaluate(self.model, p, k, pt.t)?;
            q += w * r * r;
        }
        Ok(q)
    }

    /// Gradient and the Gauss-Newton diagonal `2 Σ w (∂f/∂x_j)²`.
    fn gradient(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (p, k) = self.split(x);
        let n = x.len();
        let mut g = vec![0.0; n];
        let mut gn = vec![0.0; n];
        for (pt, w) in self.data.points().iter().zip(self.weights) {
            if *w == 0.0 {
                continue;
            }
            let r = pt.y - evaluate(self.model, p, k, pt.t)?;
            let (dp, dk) = partials(self.model, p, k, pt.t, self.fd_step)?;
            for (j, d) in dp.iter().chain(std::iter::once(&dk)).enumerate() {
                g[j] -= 2.0 * w * r * d;
                gn[j] += 2.0 * w * d * d;
            }
        }
        Ok((g, gn))
    }

    fn hessian(&self, x: &[f64]) -> Result<SquareMatrix> {
        let n = x.len();
        let mut h = vec![0.0; n * n];
        let mut y = x.to_vec();
        for j in 0..n {
            let s = self.fd_step * x[j].abs().max(1.0);
            y[j] = x[j] + s;
            let (gp, _) = self.gradient(&y)?;
            y[j] = x[j] - s;
            let (gm, _) = self.gradient(&y)?;
            y[j] = x[j];
            for i in 0..n {
                h[i * n + j] = (gp[i] - gm[i]) / (2.0 * s);
            }
        }
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (h[i * n + j] + h[j * n + i]);
                h[i * n + j] = m;
                h[j * n + i] = m;
            }
        }
        SquareMatrix::new(n, h)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Converged {
    x: Vec<f64>,
    q: f64,
    gnorm: f64,
}

/// Levenberg-Marquardt with the exact (finite-differenced) Hessian, then
/// pure Newton polish.
fn descend(obj: &Objective, x0: Vec<f64>, cfg: &SolverConfig) -> Result<Converged> {
    let mut x = x0;
    let mut q = obj.value(&x)?;
    let (mut g, mut gn) = obj.gradient(&x)?;
    let mut mu = 1e-3;
    let limit = 10 * cfg.max_iter;
    let mut it = 0;
    while norm(&g) > cfg.tol {
        if it >= limit || mu > 1e16 {
            return Err(Error::NoConvergence {
                iterations: it,
                best: x,
                residual: norm(&g),
            });
        }
        it += 1;
        let h = obj.hessian(&x)?;
        let n = x.len();
        let mut damped = h.as_slice().to_vec();
        for j in 0..n {
            damped[j * n + j] += mu * gn[j].max(1e-300);
        }
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let step = SquareMatrix::new(n, damped).and_then(|m| solve_linear(&m, &rhs));
        let Ok(dx) = step else {
            mu *= 4.0;
            continue;
        };
        let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        match obj.value(&cand) {
            Ok(qc) if qc < q => {
                x = cand;
                q = qc;
                (g, gn) = obj.gradient(&x)?;
                mu = (mu / 3.0).max(1e-12);
            }
            Ok(qc) if qc == q && dx.iter().zip(&x).all(|(d, a)| d.abs() <= f64::EPSILON * a.abs()) => break,
            _ => mu *= 4.0,
        }
    }
    for _ in 0..POLISH_STEPS {
        let gnorm = norm(&g);
        if gnorm == 0.0 {
            break;
        }
        let Ok(h) = obj.hessian(&x) else { break };
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let Ok(dx) = solve_linear(&h, &rhs) else { break };
        let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        match obj.gradient(&cand) {
            Ok((gc, _)) if norm(&gc) < gnorm => {
                x = cand;
                g = gc;
            }
            _ => break,
        }
    }
    // Independent re-check of the reported point.
    let q = obj.value(&x)?;
    let (g, _) = obj.gradient(&x)?;
    let gnorm = norm(&g);
    if gnorm > cfg.tol {
        return Err(Error::NoConvergence {
            iterations: it,
            best: x,
            residual: gnorm,
        });
    }
    Ok(Converged { x, q, gnorm })
}

/// Minimizes `Σ w_i (y_i − f(P, t_i, k))²` over `(P, k)` from `starts`
/// seeded points drawn uniformly from the model's parameter and `k` bounds.
/// The lowest converged point wins; ties go to the lexicographically
/// smallest `(P, k)`. The result does not depend on the thread count.
pub fn weighted_ls_fit(
    data: &Dataset,
    model: &dyn Model,
    weights: &[f64],
    starts: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<FullLsResult> {
    cfg.validate()?;
    if weights.len() != data.len() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "need {} non-negative weights, got {weights:?}",
            data.len()
        )));
    }
    if starts == 0 {
        return Err(Error::InvalidInput("at least one start is required".into()));
    }
    let mut bounds = model.param_bounds();
    bounds.push(model.k_bounds());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..starts)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
        .collect();
    let obj = Objective {
        data,
        model,
        weights,
        fd_step: cfg.fd_step,
    };
    let runs: Vec<Result<Converged>> = points.into_par_iter().map(|x0| descend(&obj, x0, cfg)).collect();

    let mut best: Option<Converged> = None;
    let mut converged = 0;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok(c) => {
                converged += 1;
                let better = match &best {
                    None => true,
                    Some(b) => match c.q.total_cmp(&b.q) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Equal => c.x.partial_cmp(&b.x) == Some(std::cmp::Ordering::Less),
                        std::cmp::Ordering::Greater => false,
                    },
                };
                if better {
                    best = Some(c);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some(best) = best else {
        return Err(last_err.unwrap_or(Error::NoConvergence {
            iterations: 0,
            best: Vec::new(),
            residual: f64::NAN,
        }));
    };
    let (p, k) = best.x.split_at(best.x.len() - 1);
    Ok(FullLsResult {
        params: ParameterVector::for_model(model, p.to_vec())?,
        k: k[0],
        q_value: best.q,
        gradient_norm: best.gnorm,
        starts_tried: starts,
        starts_converged: converged,
    })
}

/// Unweighted full least squares.
pub fn full_ls_fit(data: &Dataset, model: &dyn Model, starts: usize, seed: u64, cfg: &SolverConfig) -> Result<FullLsResult> {
    weighted_ls_fit(data, model, &vec![1.0; data.len()], starts, seed, cfg)
}

/// [`full_ls_fit`] packaged as a fit report. `root_residual` holds the
/// gradient norm at the winning point.
pub fn fit_full(data: &Dataset, model: &dyn Model, starts: usize, seed: u64, cfg: &SolverConfig) -> Result<FitReport> {
    let r = full_ls_fit(data, model, starts, seed, cfg)?;
    let (residuals, q_value, fd) = residual_table(data, model, &r.params.values, r.k)?;
    Ok(FitReport {
        method: Method::Full,
        k_star: r.k,
        params: r.params,
        param_spread: None,
        fd,
        q_value,
        residuals,
        iterations: 0,
        root_residual: r.gradient_norm,
        combos_used: 0,
        combos_singular: 0,
        diagnostics: Diagnostics {
            gradient_norm: Some(r.gradient_norm),
            starts_tried: Some(r.starts_tried),
            ..Diagnostics::default()
        },
    })
}

/// Number of combinations each data index appears in.
pub fn multiplicities(data: &Dataset, combos: &[Vec<usize>]) -> Vec<f64> {
    let mut w = vec![0.0; data.len()];
    for c in combos {
        for &i in c {
            if let Some(v) = w.get_mut(i) {
                *v += 1.0;
            }
        }
    }
    w
}

/// `Q_c(P, k)`: the squared residuals of every point of every combination,
/// so an index appearing in `m` combinations counts `m` times.
pub fn qc_metric(data: &Dataset, model: &dyn Model, combos: &[Vec<usize>], p: &[f64], k: f64) -> Result<f64> {
    if combos.is_empty() {
        return Err(Error::InvalidInput("no combinations".into()));
    }
    let mut q = 0.0;
    for c in combos {
        for &i in c {
            if i >= data.len() {
                return Err(Error::InvalidInput(format!("index {i} out of range")));
            }
            let pt = data.point(i);
            let r = pt.y - evaluate(model, p, k, pt.t)?;
            q += r * r;
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct QcComparison {
    pub k: f64,
    pub mean_params: Vec<f64>,
    pub q_c_at_mean: f64,
    /// `Q_c` at the full least-squares parameters, evaluated at `k`.
    pub full_ls_params: Vec<f64>,
    pub full_ls_k: f64,
    pub q_c_at_full_ls: f64,
    /// Global minimum of `Q_c` over `(P, k)`.
    pub q_c_min: f64,
    pub q_c_min_k: f64,
    /// `q_c_at_full_ls − q_c_at_mean`.
    pub delta: f64,
    /// Largest distance between two combination solutions at `k`.
    pub max_pairwise_delta_p: f64,
    /// Largest distance from the mean to a combination solution.
    pub max_mean_to_solution: f64,
    /// Smallest distance from the full least-squares parameters to a
    /// combination solution.
    pub min_full_ls_to_solution: f64,
    /// `max_mean_to_solution <= max_pairwise_delta_p`.
    pub mean_within_spread: bool,
    /// `q_c_min <= q_c_at_mean`.
    pub free_minimum_below_mean: bool,
    /// `q_c_at_full_ls > q_c_at_mean`; reported, not a guaranteed property.
    pub full_ls_above_mean: bool,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Compares `Q_c` at the subset mean, at the full least-squares solution and
/// at its own free minimum, together with the spread of the subset
/// solutions at `k`.
pub fn qc_comparison(
    data: &Dataset,
    model: &dyn Model,
    k: f64,
    policy: &CombinationPolicy,
    starts: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<QcComparison> {
    let path = mean_path(data, model, policy, cfg)?;
    let point = path.eval(k)?;
    let sols: Vec<&[f64]> = point
        .solutions
        .iter()
        .filter(|s| !s.singular)
        .map(|s| s.params.as_slice())
        .collect();
    let combos: Vec<Vec<usize>> = point
        .solutions
        .iter()
        .filter(|s| !s.singular)
        .map(|s| s.combo.clone())
        .collect();

    let q_mean = qc_metric(data, model, &combos, &point.params, k)?;
    let full = full_ls_fit(data, model, starts, seed, cfg)?;
    let q_full = qc_metric(data, model, &combos, &full.params.values, k)?;
    let free = weighted_ls_fit(data, model, &multiplicities(data, &combos), starts, seed, cfg)?;

    let mut delta_p: f64 = 0.0;
    for (a, pa) in sols.iter().enumerate() {
        for pb in &sols[a + 1..] {
            delta_p = delta_p.max(dist(pa, pb));
        }
    }
    let to_mean = sols.iter().map(|s| dist(s, &point.params)).fold(0.0, f64::max);
    let full_to = sols
        .iter()
        .map(|s| dist(s, &full.params.values))
        .fold(f64::INFINITY, f64::min);
    let slack = 1e-12 * q_mean.abs().max(1e-300);
    Ok(QcComparison {
        k,
        mean_params: point.params.clone(),
        q_c_at_mean: q_mean,
        full_ls_params: full.params.values.clone(),
        full_ls_k: full.k,
        q_c_at_full_ls: q_full,
        q_c_min: free.q_value,
        q_c_min_k: free.k,
        delta: q_full - q_mean,
        max_pairwise_delta_p: delta_p,
        max_mean_to_solution: to_mean,
        min_full_ls_to_solution: full_to,
        mean_within_spread: to_mean <= delta_p * (1.0 + 1e-12) + 1e-15,
        free_minimum_below_mean: free.q_value <= q_mean + slack,
        full_ls_above_mean: q_full > q_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{first_order_model, FirstOrderConfig};

    fn first_order(noise: &[f64]) -> Dataset {
        let pairs: Vec<(f64, f64)> = (0..noise.len())
            .map(|i| {
                let t = 60.0 * (i + 1) as f64;
                (t, 0.9 - 0.8 * (-0.01 * t).exp() + noise[i])
            })
            .collect();
        Dataset::from_pairs("fo", &pairs).unwrap()
    }

    #[test]
    fn noiseless_recovers_truth() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let d = first_order(&[0.0; 10]);
        let r = full_ls_fit(&d, &m, DEFAULT_STARTS, 1, &SolverConfig::default()).unwrap();
        assert!((r.k - 0.01).abs() < 1e-12);
        assert!((r.params.values[0] - 0.9).abs() < 1e-12);
        assert!(r.q_value <= 1e-18);
    }

    #[test]
    fn qc_metric_examples() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let d = first_order(&[0.01, -0.02, 0.0, 0.005]);
        let p = [0.88];
        let qt = crate::report::sum_of_squares(&d, &m, &p, 0.011).unwrap();
        let once = vec![vec![0, 1, 2, 3]];
        assert_eq!(qc_metric(&d, &m, &once, &p, 0.011).unwrap(), qt);
        let singles: Vec<Vec<usize>> = (0..4).map(|i| vec![i]).collect();
        assert!((qc_metric(&d, &m, &singles, &p, 0.011).unwrap() - qt).abs() <= 1e-15);
        let clean = first_order(&[0.0; 4]);
        assert!(qc_metric(&clean, &m, &[vec![0, 1], vec![1, 2], vec![1, 3]], &[0.9], 0.01).unwrap() < 1e-28);
        assert!(qc_metric(&d, &m, &[], &p, 0.01).is_err());
    }

    #[test]
    fn multiplicity_counts() {
        let d = first_order(&[0.0; 4]);
        assert_eq!(multiplicities(&d, &[vec![0, 1], vec![1, 2]]), vec![1.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let d = first_order(&[0.004, -0.006, 0.002, 0.005, -0.003, -0.004, 0.006, -0.001]);
        let a = full_ls_fit(&d, &m, 8, 42, &SolverConfig::default()).unwrap();
        let b = full_ls_fit(&d, &m, 8, 42, &SolverConfig::default()).unwrap();
        assert_eq!(a.k.to_bits(), b.k.to_bits());
        assert_eq!(a.params.values[0].to_bits(), b.params.values[0].to_bits());
    }
}
