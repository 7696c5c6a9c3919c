//! The implicit parameter path `k ↦ P(k)` shared by the three engines, and
//! the grid pre-scan that locates sign changes of a reduced derivative.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::model::{Dataset, Model, SubsetSolution};
use crate::numerics::{self, Bracket1D, RootStart, SolverConfig};
use crate::optimize_ii::{self, CostFunction};
use crate::{reduce_ia, reduce_ib};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PathSource {
    /// Mean of per-subset inversions.
    Ia,
    /// Inner least-squares stationarity.
    Ib,
    /// Stationarity of a general cost in all but the scan coordinate.
    Ii,
}

/// One evaluated point of a reduced path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub k: f64,
    pub params: Vec<f64>,
    /// Per-combination solutions in combination order, singular ones
    /// included and flagged (mean paths only).
    pub solutions: Vec<SubsetSolution>,
    /// Population standard deviation of the combination solutions (mean
    /// paths only).
    pub spread: Vec<f64>,
    pub singular_count: usize,
    /// Determinant of the inner Jacobian (stationary paths only).
    pub hessian_det: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy)]
struct KKey(f64);

impl PartialEq for KKey {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for KKey {}
impl PartialOrd for KKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for KKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

enum Engine<'a> {
    Mean {
        data: &'a Dataset,
        model: &'a dyn Model,
        combos: Vec<Vec<usize>>,
    },
    Stationary {
        data: &'a Dataset,
        model: &'a dyn Model,
    },
    CostGradient {
        cost: &'a CostFunction,
    },
}

#[derive(Default)]
struct State {
    cache: BTreeMap<KKey, Arc<PathPoint>>,
    hints: BTreeMap<KKey, Vec<f64>>,
}

/// A lazily evaluated, cached implicit path `P(k)`.
///
/// Points are cached by the exact bit pattern of `k`. Newton-based
/// evaluations are warm-started from the nearest cached point (or hint), so
/// evaluating along a monotone grid performs natural continuation.
pub struct ReducedPath<'a> {
    source: PathSource,
    engine: Engine<'a>,
    cfg: SolverConfig,
    state: Mutex<State>,
}

impl<'a> ReducedPath<'a> {
    pub(crate) fn mean(data: &'a Dataset, model: &'a dyn Model, combos: Vec<Vec<usize>>, cfg: SolverConfig) -> Self {
        Self::with_engine(PathSource::Ia, Engine::Mean { data, model, combos }, cfg)
    }

    /// Path defined by inner least-squares stationarity.
    pub fn stationary(data: &'a Dataset, model: &'a dyn Model, cfg: SolverConfig) -> Self {
        Self::with_engine(PathSource::Ib, Engine::Stationary { data, model }, cfg)
    }

    /// Path defined by `∂Q_E/∂P_j = 0` for a general cost.
    pub fn cost_gradient(cost: &'a CostFunction, cfg: SolverConfig) -> Self {
        Self::with_engine(PathSource::Ii, Engine::CostGradient { cost }, cfg)
    }

    fn with_engine(source: PathSource, engine: Engine<'a>, cfg: SolverConfig) -> Self {
        Self {
            source,
            engine,
            cfg,
            state: Mutex::new(State::default()),
        }
    }

    pub fn source(&self) -> PathSource {
        self.source
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Data and model behind a fitting path; `None` for cost paths.
    pub fn fit_problem(&self) -> Option<(&'a Dataset, &'a dyn Model)> {
        match self.engine {
            Engine::Mean { data, model, .. } | Engine::Stationary { data, model } => Some((data, model)),
            Engine::CostGradient { .. } => None,
        }
    }

    pub fn combos(&self) -> &[Vec<usize>] {
        match &self.engine {
            Engine::Mean { combos, .. } => combos,
            _ => &[],
        }
    }

    /// Registers a warm start for Newton-based evaluation near `k`.
    pub fn add_hint(&self, k: f64, params: Vec<f64>) {
        self.state.lock().unwrap().hints.insert(KKey(k), params);
    }

    pub fn clear_cache(&self) {
        let mut st = self.state.lock().unwrap();
        st.cache.clear();
    }

    /// Drops the cached point at exactly `k`.
    pub(crate) fn forget(&self, k: f64) {
        self.state.lock().unwrap().cache.remove(&KKey(k));
    }

    pub fn cached_len(&self) -> usize {
        self.state.lock().unwrap().cache.len()
    }

    /// Nearest cached point (or hint) to `k`; a cached point wins ties.
    fn nearest(&self, k: f64) -> Option<(Vec<f64>, Vec<SubsetSolution>)> {
        fn closest<V>(map: &BTreeMap<KKey, V>, k: f64) -> Option<(KKey, f64)> {
            let key = KKey(k);
            let below = map.range(..=key).next_back().map(|(c, _)| *c);
            let above = map.range(key..).next().map(|(c, _)| *c);
            [below, above]
                .into_iter()
                .flatten()
                .map(|c| (c, (c.0 - k).abs()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
        }
        let st = self.state.lock().unwrap();
        let cached = closest(&st.cache, k);
        let hint = closest(&st.hints, k);
        match (cached, hint) {
            (Some(c), Some(h)) if h.1 < c.1 => Some((st.hints[&h.0].clone(), Vec::new())),
            (Some(c), _) => {
                let p = &st.cache[&c.0];
                Some((p.params.clone(), p.solutions.clone()))
            }
            (None, Some(h)) => Some((st.hints[&h.0].clone(), Vec::new())),
            (None, None) => None,
        }
    }

    /// `P(k)`, from the cache when available.
    pub fn eval(&self, k: f64) -> Result<Arc<PathPoint>> {
        if !k.is_finite() {
            return Err(Error::InvalidInput(format!("k must be finite, got {k}")));
        }
        if let Some(p) = self.state.lock().unwrap().cache.get(&KKey(k)) {
            return Ok(Arc::clone(p));
        }
        let warm = self.nearest(k);
        let point = match &self.engine {
            Engine::Mean { data, model, combos } => {
                let warm_solutions = warm.as_ref().map(|w| w.1.as_slice()).filter(|s| !s.is_empty());
                reduce_ia::mean_point(data, *model, combos, k, &self.cfg, warm_solutions)?
            }
            Engine::Stationary { data, model } => {
                let start = warm.map(|w| w.0).unwrap_or_else(|| model.initial_params());
                let tr = reduce_ib::inner_stationary(data, *model, k, &start, &self.cfg)?;
                tr.into_path_point()
            }
            Engine::CostGradient { cost } => {
                let start = warm.map(|w| w.0).ok_or_else(|| {
                    Error::InvalidInput("cost path needs a warm start hint".into())
                })?;
                let tr = optimize_ii::implicit_path_point(cost, k, &start, &self.cfg)?;
                tr.into_path_point()
            }
        };
        let point = Arc::new(point);
        self.state
            .lock()
            .unwrap()
            .cache
            .insert(KKey(k), Arc::clone(&point));
        Ok(point)
    }
}

/// How the root of a reduced derivative is searched for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KSearch {
    /// Sign-change pre-scan over a uniform grid, then refinement of every
    /// bracket found.
    Scan { lo: f64, hi: f64, grid: usize },
    Bracket(Bracket1D),
    Seed(f64),
}

/// Default pre-scan resolution.
pub const DEFAULT_SCAN_GRID: usize = 200;

impl KSearch {
    /// Pre-scan over the model's declared `k` bounds.
    pub fn over_bounds(model: &dyn Model, grid: usize) -> Self {
        let (lo, hi) = model.k_bounds();
        KSearch::Scan { lo, hi, grid }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KSearch::Scan { lo, hi, grid } => {
                Bracket1D::new(lo, hi)?;
                if grid < 2 {
                    return Err(Error::InvalidInput(format!("scan grid needs >= 2 points, got {grid}")));
                }
                Ok(())
            }
            KSearch::Bracket(b) => Bracket1D::new(b.lo, b.hi).map(|_| ()),
            KSearch::Seed(s) if s.is_finite() => Ok(()),
            KSearch::Seed(s) => Err(Error::InvalidInput(format!("seed must be finite, got {s}"))),
        }
    }

    pub fn range(&self) -> (f64, f64) {
        match *self {
            KSearch::Scan { lo, hi, .. } => (lo, hi),
            KSearch::Bracket(b) => (b.lo, b.hi),
            KSearch::Seed(s) => (s, s),
        }
    }

    pub fn grid_size(&self) -> usize {
        match *self {
            KSearch::Scan { grid, .. } => grid,
            _ => 0,
        }
    }
}

/// Runs `search` on `g`. Bracket and seed searches yield at most one root
/// and propagate the solver error; a scan collects every root it can refine.
pub fn search_roots<G>(mut g: G, search: &KSearch, cfg: &SolverConfig) -> Result<RootScan>
where
    G: FnMut(f64) -> Result<f64>,
{
    search.validate()?;
    match *search {
        KSearch::Scan { lo, hi, grid } => Ok(scan_roots(g, &linear_grid(lo, hi, grid), cfg)),
        KSearch::Bracket(b) => {
            let root = numerics::find_root_1d(&mut g, RootStart::Bracket(b), cfg)?;
            Ok(RootScan {
                roots: vec![LocatedRoot { root, bracket: (b.lo, b.hi) }],
                ..RootScan::default()
            })
        }
        KSearch::Seed(s) => {
            let root = numerics::find_root_1d(&mut g, RootStart::Seed(s), cfg)?;
            Ok(RootScan {
                roots: vec![LocatedRoot { root, bracket: (s, s) }],
                ..RootScan::default()
            })
        }
    }
}

/// A `k` interval over which path evaluation failed.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FailedInterval {
    pub lo: f64,
    pub hi: f64,
    pub reason: String,
}

/// A refined root of a reduced derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedRoot {
    pub root: numerics::Root1D,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, Default)]
pub struct RootScan {
    pub roots: Vec<LocatedRoot>,
    pub failed: Vec<FailedInterval>,
    /// Brackets whose refinement failed, with the error tag.
    pub unrefined: Vec<(f64, f64, String)>,
}

/// Uniform grid of `n >= 2` points over `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * (i as f64) / ((n - 1) as f64)
            }
        })
        .collect()
}

/// Evaluates `g` along `grid` in order, then refines every sign change
/// between consecutive successfully evaluated grid points. Grid points where
/// `g` fails split the scan into segments and are reported as failed
/// intervals.
pub fn scan_roots<G>(mut g: G, grid: &[f64], cfg: &SolverConfig) -> RootScan
where
    G: FnMut(f64) -> Result<f64>,
{
    let mut out = RootScan::default();
    let mut values: Vec<Option<f64>> = Vec::with_capacity(grid.len());
    for (i, &k) in grid.iter().enumerate() {
        match g(k) {
            Ok(v) if v.is_finite() => values.push(Some(v)),
            Ok(_) => {
                values.push(None);
                push_failed(&mut out.failed, grid, i, "non_finite");
            }
            Err(e) => {
                values.push(None);
                push_failed(&mut out.failed, grid, i, e.kind());
            }
        }
    }
    for i in 0..grid.len() {
        let Some(v) = values[i] else { continue };
        if v == 0.0 {
            out.roots.push(LocatedRoot {
                root: numerics::Root1D {
                    x: grid[i],
                    fx: 0.0,
                    iterations: 0,
                    evaluations: 1,
                },
                bracket: (grid[i], grid[i]),
            });
            continue;
        }
        let Some(Some(w)) = values.get(i + 1) else { continue };
        if *w == 0.0 || v.signum() == w.signum() {
            continue;
        }
        let bracket = Bracket1D {
            lo: grid[i],
            hi: grid[i + 1],
        };
        match numerics::find_root_1d(&mut g, RootStart::Bracket(bracket), cfg) {
            Ok(root) => out.roots.push(LocatedRoot {
                root,
                bracket: (bracket.lo, bracket.hi),
            }),
            Err(e) => out.unrefined.push((bracket.lo, bracket.hi, e.kind().to_string())),
        }
    }
    out
}

fn push_failed(failed: &mut Vec<FailedInterval>, grid: &[f64], i: usize, reason: &str) {
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    if let Some(last) = failed.last_mut() {
        if last.reason == reason && last.hi >= lo {
            last.hi = hi;
            return;
        }
    }
    failed.push(FailedInterval {
        lo,
        hi,
        reason: reason.to_string(),
    });
}
