//! Approximate reduction: every `N_p`-point subset of the data is inverted
//! exactly at a given `k`, the solutions are averaged with equal weights into
//! `P̄(k)`, and `k` is chosen where
//! `R(k) = Σ (y_i − Y_th(k, t_i)) · dY_th/dk` vanishes, with
//! `Y_th(k, t) = f(P̄(k), t, k)`. Since `Q(k) = Σ (y_i − Y_th)²`,
//! `Q'(k) = −2 R(k)`.

use std::cell::Cell;

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{evaluate, solve_subset, Dataset, Model, ParameterVector, SubsetSolution};
use crate::numerics::SolverConfig;
use crate::path::{search_roots, KSearch, PathPoint, ReducedPath};
use crate::report::{residual_table, sum_of_squares, CandidateRoot, Diagnostics, FitReport, Method};

/// Below this many combinations the per-`k` solves run sequentially.
const PARALLEL_MIN_COMBOS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum CombinationPolicy {
    All,
    /// Uniform subsample without replacement, reproducible from `seed`.
    Sample { count: usize, seed: u64 },
}

fn binomial(n: usize, r: usize) -> Option<u128> {
    if r > n {
        return Some(0);
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// The `rank`-th `r`-subset of `0..n` in lexicographic order.
fn unrank_combination(n: usize, r: usize, mut rank: u128) -> Vec<usize> {
    let mut out = Vec::with_capacity(r);
    let mut start = 0;
    for slot in 0..r {
        let remaining = r - slot - 1;
        let mut x = start;
        loop {
            let block = binomial(n - x - 1, remaining).unwrap_or(u128::MAX);
            if rank < block {
                break;
            }
            rank -= block;
            x += 1;
        }
        out.push(x);
        start = x + 1;
    }
    out
}

/// Combinations of `N_p` non-singular data indices (0-based, each sorted).
///
/// `All` yields every combination in lexicographic order; `Sample` a seeded
/// uniform subsample, also returned in lexicographic order.
pub fn enumerate_combos(
    data: &Dataset,
    model: &dyn Model,
    k_probe: f64,
    policy: &CombinationPolicy,
) -> Result<Vec<Vec<usize>>> {
    let np = model.n_params();
    let usable: Vec<usize> = data
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| !model.is_singular_point(p.t, k_probe))
        .map(|(i, _)| i)
        .collect();
    if usable.len() < np + 1 {
        return Err(Error::InsufficientData {
            usable: usable.len(),
            required: np + 1,
        });
    }
    match *policy {
        CombinationPolicy::All => Ok(usable.iter().copied().combinations(np).collect()),
        CombinationPolicy::Sample { count, seed } => {
            let total = binomial(usable.len(), np).ok_or_else(|| {
                Error::InvalidInput("combination count overflows".into())
            })?;
            if count == 0 || count as u128 > total {
                return Err(Error::InvalidInput(format!(
                    "sample count must be in 1..={total}, got {count}"
                )));
            }
            let total = usize::try_from(total)
                .map_err(|_| Error::InvalidInput("combination count exceeds usize".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ranks = rand::seq::index::sample(&mut rng, total, count).into_vec();
            ranks.sort_unstable();
            Ok(ranks
                .into_iter()
                .map(|r| {
                    unrank_combination(usable.len(), np, r as u128)
                        .into_iter()
                        .map(|j| usable[j])
                        .collect()
                })
                .collect())
        }
    }
}

/// Solves every combination at `k` and averages the non-singular solutions.
pub(crate) fn mean_point(
    data: &Dataset,
    model: &dyn Model,
    combos: &[Vec<usize>],
    k: f64,
    cfg: &SolverConfig,
    warm: Option<&[SubsetSolution]>,
) -> Result<PathPoint> {
    let np = model.n_params();
    let solve_one = |(idx, combo): (usize, &Vec<usize>)| -> Result<SubsetSolution> {
        let start = warm
            .and_then(|w| w.get(idx))
            .filter(|s| !s.singular && s.combo == *combo)
            .map(|s| s.params.as_slice());
        match solve_subset(model, data, combo, k, cfg, start) {
            Err(Error::Singular { .. }) => Ok(SubsetSolution {
                combo: combo.clone(),
                params: Vec::new(),
                singular: true,
            }),
            other => other,
        }
    };
    let solved: Vec<Result<SubsetSolution>> = if combos.len() >= PARALLEL_MIN_COMBOS {
        combos.par_iter().enumerate().map(solve_one).collect()
    } else {
        combos.iter().enumerate().map(solve_one).collect()
    };
    let solutions = solved.into_iter().collect::<Result<Vec<_>>>()?;

    let mut sum = vec![0.0; np];
    let mut used = 0usize;
    for s in solutions.iter().filter(|s| !s.singular) {
        for (acc, v) in sum.iter_mut().zip(&s.params) {
            *acc += v;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::AllSingular { k });
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / used as f64).collect();
    let mut var = vec![0.0; np];
    for s in solutions.iter().filter(|s| !s.singular) {
        for ((acc, v), m) in var.iter_mut().zip(&s.params).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let spread = var.iter().map(|v| (v / used as f64).sqrt()).collect();
    Ok(PathPoint {
        k,
        params: mean,
        singular_count: solutions.len() - used,
        solutions,
        spread,
        hessian_det: None,
        iterations: 0,
        residual: 0.0,
    })
}

/// The averaged path `P̄(k)` over the combinations chosen by `policy`.
/// Singular points are identified at the midpoint of the model's `k` bounds.
pub fn mean_path<'a>(
    data: &'a Dataset,
    model: &'a dyn Model,
    policy: &CombinationPolicy,
    cfg: &SolverConfig,
) -> Result<ReducedPath<'a>> {
    cfg.validate()?;
    let (lo, hi) = model.k_bounds();
    let combos = enumerate_combos(data, model, 0.5 * (lo + hi), policy)?;
    Ok(ReducedPath::mean(data, model, combos, *cfg))
}

/// Mean of the subset inversions at `k`, on at most 256 combinations.
/// Used as the first warm start of Newton-based paths.
pub(crate) fn starting_mean(data: &Dataset, model: &dyn Model, k: f64, cfg: &SolverConfig) -> Option<Vec<f64>> {
    const LIMIT: usize = 256;
    let usable = data
        .points()
        .iter()
        .filter(|p| !model.is_singular_point(p.t, k))
        .count();
    let total = binomial(usable, model.n_params())?;
    let policy = if total <= LIMIT as u128 {
        CombinationPolicy::All
    } else {
        CombinationPolicy::Sample { count: LIMIT, seed: 0 }
    };
    let combos = enumerate_combos(data, model, k, &policy).ok()?;
    let point = mean_point(data, model, &combos, k, cfg, None).ok()?;
    point.params.iter().all(|v| v.is_finite()).then_some(point.params)
}

fn fit_problem<'a>(path: &ReducedPath<'a>) -> Result<(&'a Dataset, &'a dyn Model)> {
    path.fit_problem()
        .ok_or_else(|| Error::InvalidInput("path is not attached to a dataset".into()))
}

/// `Q(k) = Σ (y_i − f(P(k), t_i, k))²` along the path.
pub fn q_of_k(path: &ReducedPath, k: f64) -> Result<f64> {
    let (data, model) = fit_problem(path)?;
    let p = path.eval(k)?;
    sum_of_squares(data, model, &p.params, k)
}

/// `R(k) = Σ (y_i − Y_th(k, t_i)) · Y_th'(k, t_i)` where `Y_th'` is the
/// total derivative of `k ↦ f(P(k), t_i, k)`, taken by central differences
/// so that `dP/dk` is included.
pub fn r_of_k(path: &ReducedPath, k: f64) -> Result<f64> {
    let (data, model) = fit_problem(path)?;
    let h = path.config().step_at(k);
    let (kp, km) = (k + h, k - h);
    let p0 = path.eval(k)?;
    let pp = path.eval(kp)?;
    let pm = path.eval(km)?;
    let mut r = 0.0;
    for pt in data.points() {
        let y_th = evaluate(model, &p0.params, k, pt.t)?;
        let slope = (evaluate(model, &pp.params, kp, pt.t)? - evaluate(model, &pm.params, km, pt.t)?) / (kp - km);
        r += (pt.y - y_th) * slope;
    }
    Ok(r)
}

/// Fits `k` by solving `R(k) = 0`. Among several roots the one with the
/// smallest `Q(k)` is reported; `P̄(k*)` is back-substituted from the
/// combination solutions.
pub fn fit_ia(
    data: &Dataset,
    model: &dyn Model,
    search: &KSearch,
    cfg: &SolverConfig,
    policy: &CombinationPolicy,
) -> Result<FitReport> {
    let path = mean_path(data, model, policy, cfg)?;
    let evaluations = Cell::new(0usize);
    let scan = search_roots(
        |k| {
            evaluations.set(evaluations.get() + 1);
            r_of_k(&path, k)
        },
        search,
        cfg,
    )?;
    let (lo, hi) = search.range();

    let mut candidates = Vec::new();
    for located in &scan.roots {
        let k = located.root.x;
        let Ok(q) = q_of_k(&path, k) else { continue };
        candidates.push((located.root, q));
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.x.total_cmp(&b.0.x)))
        .copied();
    let Some((root, _)) = best else {
        return Err(Error::NoRootInRange { lo, hi });
    };

    let k_star = root.x;
    let point = path.eval(k_star)?;
    let (residuals, q_value, fd) = residual_table(data, model, &point.params, k_star)?;
    let root_residual = r_of_k(&path, k_star)?.abs();
    Ok(FitReport {
        method: Method::Ia,
        k_star,
        params: ParameterVector::for_model(model, point.params.clone())?,
        param_spread: Some(point.spread.clone()),
        fd,
        q_value,
        residuals,
        iterations: root.iterations,
        root_residual,
        combos_used: point.solutions.len() - point.singular_count,
        combos_singular: point.singular_count,
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
            gradient_norm: None,
            starts_tried: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{first_order_model, FirstOrderConfig};
    use crate::model::FnModel;

    fn first_order_data(n: usize) -> Dataset {
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let t = 60.0 * i as f64;
                (t, 0.9 - 0.8 * (-0.01 * t).exp())
            })
            .collect();
        Dataset::from_pairs("fo", &pairs).unwrap()
    }

    #[test]
    fn combos_exclude_singular_points() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let d = first_order_data(10);
        let c = enumerate_combos(&d, &m, 0.01, &CombinationPolicy::All).unwrap();
        assert_eq!(c.len(), 9);
        assert!(c.iter().all(|c| c[0] != 0));
    }

    #[test]
    fn combos_all_lexicographic() {
        let m = crate::model::offset_exponential();
        let pairs: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 1.0)).collect();
        let d = Dataset::from_pairs("six", &pairs).unwrap();
        let c = enumerate_combos(&d, &m, 1.0, &CombinationPolicy::All).unwrap();
        assert_eq!(c.len(), 15);
        let mut sorted = c.clone();
        sorted.sort();
        assert_eq!(c, sorted);
        assert_eq!(c[0], vec![0, 1]);
        assert_eq!(c[14], vec![4, 5]);
    }

    #[test]
    fn combos_insufficient() {
        let m = FnModel::new(1, |p, t, _| p[0] * t).with_singular_points(|t, _| t < 2.5);
        let d = Dataset::from_pairs("four", &[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap();
        let e = enumerate_combos(&d, &m, 1.0, &CombinationPolicy::All).unwrap_err();
        assert_eq!(e, Error::InsufficientData { usable: 1, required: 2 });
    }

    #[test]
    fn sampling_is_seeded_sorted_and_unique() {
        let m = crate::model::offset_exponential();
        let pairs: Vec<(f64, f64)> = (0..12).map(|i| (i as f64, 1.0)).collect();
        let d = Dataset::from_pairs("twelve", &pairs).unwrap();
        let all = enumerate_combos(&d, &m, 1.0, &CombinationPolicy::All).unwrap();
        let p = CombinationPolicy::Sample { count: 20, seed: 7 };
        let a = enumerate_combos(&d, &m, 1.0, &p).unwrap();
        let b = enumerate_combos(&d, &m, 1.0, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|c| all.contains(c)));
        let too_many = CombinationPolicy::Sample { count: 67, seed: 7 };
        assert!(enumerate_combos(&d, &m, 1.0, &too_many).is_err());
    }

    #[test]
    fn unranking_matches_enumeration() {
        let all: Vec<Vec<usize>> = (0..7).combinations(3).collect();
        for (r, c) in all.iter().enumerate() {
            assert_eq!(&unrank_combination(7, 3, r as u128), c);
        }
    }

    #[test]
    fn mean_and_spread_of_two_solutions() {
        // One-parameter model y = P; each point inverts to its own y.
        let m = FnModel::new(1, |p, _, _| p[0]).with_inversion(|pts, _| Ok(vec![pts[0].y]));
        let d = Dataset::from_pairs("two", &[(1.0, 1.0), (2.0, 3.0)]).unwrap();
        let path = mean_path(&d, &m, &CombinationPolicy::All, &SolverConfig::default()).unwrap();
        let p = path.eval(0.5).unwrap();
        assert_eq!(p.params, vec![2.0]);
        assert_eq!(p.spread, vec![1.0]);
    }

    #[test]
    fn noiseless_mean_has_zero_spread() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let d = first_order_data(10);
        let path = mean_path(&d, &m, &CombinationPolicy::All, &SolverConfig::default()).unwrap();
        let p = path.eval(0.01).unwrap();
        assert!((p.params[0] - 0.9).abs() < 1e-12);
        assert!(p.spread[0] < 1e-12);
        assert!(r_of_k(&path, 0.01).unwrap().abs() < 1e-9);
    }

    #[test]
    fn all_singular_reported() {
        let m = FnModel::new(1, |p, _, _| p[0]).with_inversion(|_, k| {
            Err(Error::Singular {
                combo: vec![],
                k,
                reason: "always".into(),
            })
        });
        let d = Dataset::from_pairs("s", &[(1.0, 1.0), (2.0, 3.0)]).unwrap();
        let path = mean_path(&d, &m, &CombinationPolicy::All, &SolverConfig::default()).unwrap();
        assert_eq!(path.eval(0.3).unwrap_err(), Error::AllSingular { k: 0.3 });
    }

    #[test]
    fn cache_hits_are_identical() {
        let m = first_order_model(FirstOrderConfig { lambda0: 0.1 });
        let d = first_order_data(10);
        let path = mean_path(&d, &m, &CombinationPolicy::All, &SolverConfig::default()).unwrap();
        let a = path.eval(0.0123).unwrap();
        let b = path.eval(0.0123).unwrap();
        assert!(std::sync::Arc::ptr_eq(&a, &b));
        path.clear_cache();
        let c = path.eval(0.0123).unwrap();
        assert_eq!(a.params[0].to_bits(), c.params[0].to_bits());
    }

    #[test]
    fn r_changes_sign_across_symmetric_optimum() {
        // y = P * t * k with the inversion pinned by one point; the data are
        // symmetric so Q(k) has its minimum at the reflection point.
        let m = FnModel::new(1, |p, t, k| p[0] + (t - 1.5) * k)
            .with_inversion(|pts, k| Ok(vec![pts[0].y - (pts[0].t - 1.5) * k]))
            .with_k_bounds(-2.0, 2.0);
        let d = Dataset::from_pairs("sym", &[(1.0, 0.0), (2.0, 1.0), (3.0, 1.0), (0.0, 0.0)]).unwrap();
        let path = mean_path(&d, &m, &CombinationPolicy::All, &SolverConfig::default()).unwrap();
        // Grid sign oracle: R must change sign exactly once.
        let grid: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let signs: Vec<f64> = grid.iter().map(|&k| r_of_k(&path, k).unwrap().signum()).collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(changes, 1);
    }
}
