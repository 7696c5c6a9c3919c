//! Safeguarded root finding, Newton iteration in N dimensions, finite
//! differences and the small dense linear algebra shared by every engine.

use crate::error::{Error, Result};

/// Extra Newton steps taken after the residual tolerance is met. A step is
/// kept only while it strictly lowers the residual, so the returned point is
/// never worse than the first one that satisfied the tolerance.
const POLISH_STEPS: usize = 4;

/// Tolerances shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolverConfig {
    /// Absolute residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step, scaled by `max(1, |x|)`.
    pub fd_step: f64,
    /// Relative near-singularity threshold. A matrix `A` of order `n` is
    /// treated as singular when `|det A| < det_eps * max|a_ij|^n`.
    pub det_eps: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1.0e-10,
            max_iter: 100,
            fd_step: 1.0e-6,
            det_eps: 1.0e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidInput(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be >= 1".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "fd_step must be > 0, got {}",
                self.fd_step
            )));
        }
        if !(self.det_eps >= 0.0 && self.det_eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "det_eps must be >= 0, got {}",
                self.det_eps
            )));
        }
        Ok(())
    }

    /// Finite-difference step for a coordinate currently at `x`.
    pub fn step_at(&self, x: f64) -> f64 {
        self.fd_step * x.abs().max(1.0)
    }
}

/// A closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Bracket1D {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket1D {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInput(format!(
                "bracket requires finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Where a 1-D root search starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootStart {
    Seed(f64),
    Bracket(Bracket1D),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root1D {
    pub x: f64,
    /// `f(x)` from a final evaluation made after the iteration stopped.
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Finds `x` with `|f(x)| <= cfg.tol`.
///
/// In bracket mode Newton steps use a central-difference derivative whose
/// probes are clipped to the bracket, and a bisection step replaces any
/// Newton step that leaves the current sign-change interval, fails to shrink
/// it quickly, or divides by a derivative below `det_eps`. `f` is never
/// evaluated outside `[lo, hi]`.
///
/// In seed mode plain Newton is tried first; if it diverges, a sign change is
/// searched for by expanding an interval around the seed and the bracketed
/// solver takes over.
pub fn find_root_1d<F>(mut f: F, start: RootStart, cfg: &SolverConfig) -> Result<Root1D>
where
    F: FnMut(f64) -> Result<f64>,
{
    cfg.validate()?;
    let mut evals = 0usize;
    let mut counted = |x: f64| -> Result<f64> {
        evals += 1;
        let v = f(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                context: format!("root function at x = {x}"),
            })
        }
    };
    let res = match start {
        RootStart::Bracket(b) => bracketed(&mut counted, b, cfg),
        RootStart::Seed(x0) => seeded(&mut counted, x0, cfg),
    };
    let (x, iterations) = res?;
    let fx = counted(x)?;
    if fx.abs() > cfg.tol {
        return Err(Error::NoConvergence {
            iterations,
            best: vec![x],
            residual: fx.abs(),
        });
    }
    Ok(Root1D {
        x,
        fx,
        iterations,
        evaluations: evals,
    })
}

fn clipped_derivative<F>(f: &mut F, x: f64, fx: f64, lo: f64, hi: f64, cfg: &SolverConfig) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let h = cfg.step_at(x);
    let xr = (x + h).min(hi);
    let xl = (x - h).max(lo);
    let (fl, fr) = match (xl < x, xr > x) {
        (true, true) => (f(xl)?, f(xr)?),
        (true, false) => (f(xl)?, fx),
        (false, true) => (fx, f(xr)?),
        (false, false) => return Ok(0.0),
    };
    let (xl, xr) = (if xl < x { xl } else { x }, if xr > x { xr } else { x });
    Ok((fr - fl) / (xr - xl))
}

fn bracketed<F>(f: &mut F, bracket: Bracket1D, cfg: &SolverConfig) -> Result<(f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (lo, hi) = (bracket.lo, bracket.hi);
    let f_lo = f(lo)?;
    if f_lo.abs() <= cfg.tol {
        return Ok((polish_1d(f, lo, f_lo, lo, hi, cfg)?, 0));
    }
    let f_hi = f(hi)?;
    if f_hi.abs() <= cfg.tol {
        return Ok((polish_1d(f, hi, f_hi, lo, hi, cfg)?, 0));
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::NoBracket { lo, hi, f_lo, f_hi });
    }

    // Invariant: f(a) and f(b) have opposite signs.
    let (mut a, mut fa, mut b) = (lo, f_lo, hi);
    let mut x = 0.5 * (a + b);
    let mut fx = f(x)?;
    let mut dx_old = b - a;
    let mut best = (x, fx);

    for it in 1..=cfg.max_iter {
        if fx.abs() < best.1.abs() {
            best = (x, fx);
        }
        if fx.abs() <= cfg.tol {
            return Ok((polish_1d(f, x, fx, a.min(b), a.max(b), cfg)?, it));
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
        }
        let (left, right) = (a.min(b), a.max(b));
        if right - left <= 4.0 * f64::EPSILON * left.abs().max(right.abs()) {
            break;
        }

        let d = clipped_derivative(f, x, fx, lo, hi, cfg)?;
        let newton = x - fx / d;
        let use_newton = d.abs() > cfg.det_eps
            && newton.is_finite()
            && newton > left
            && newton < right
            && (2.0 * fx).abs() <= (dx_old * d).abs();
        let next = if use_newton { newton } else { 0.5 * (left + right) };
        dx_old = next - x;
        x = next;
        fx = f(x)?;
    }
    if best.1.abs() <= cfg.tol {
        return Ok((best.0, cfg.max_iter));
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        best: vec![best.0],
        residual: best.1.abs(),
    })
}

fn polish_1d<F>(f: &mut F, mut x: f64, mut fx: f64, lo: f64, hi: f64, cfg: &SolverConfig) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    for _ in 0..POLISH_STEPS {
        if fx == 0.0 {
            break;
        }
        let d = match clipped_derivative(f, x, fx, lo, hi, cfg) {
            Ok(d) if d.abs() > cfg.det_eps && d.is_finite() => d,
            _ => break,
        };
        let cand = x - fx / d;
        if !(cand.is_finite() && cand >= lo && cand <= hi) || cand == x {
            break;
        }
        match f(cand) {
            Ok(fc) if fc.abs() < fx.abs() => {
                x = cand;
                fx = fc;
            }
            _ => break,
        }
    }
    Ok(x)
}

fn seeded<F>(f: &mut F, seed: f64, cfg: &SolverConfig) -> Result<(f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !seed.is_finite() {
        return Err(Error::InvalidInput(format!("seed must be finite, got {seed}")));
    }
    let mut x = seed;
    for it in 1..=cfg.max_iter {
        let Ok(fx) = f(x) else { break };
        if fx.abs() <= cfg.tol {
            let x = polish_1d(f, x, fx, f64::NEG_INFINITY, f64::INFINITY, cfg)?;
            return Ok((x, it));
        }
        let h = cfg.step_at(x);
        let d = match (f(x + h), f(x - h)) {
            (Ok(fr), Ok(fl)) => (fr - fl) / (2.0 * h),
            _ => break,
        };
        if !(d.is_finite() && d.abs() > cfg.det_eps) {
            break;
        }
        let next = x - fx / d;
        if !next.is_finite() {
            break;
        }
        x = next;
    }

    // Newton diverged or stalled: look for a sign change around the seed.
    let mut half = 0.1 * seed.abs().max(1.0);
    let f_seed = f(seed).ok();
    for _ in 0..60 {
        let (a, b) = (seed - half, seed + half);
        let fa = f(a).ok();
        let fb = f(b).ok();
        let candidates = [(a, fa, seed, f_seed), (seed, f_seed, b, fb), (a, fa, b, fb)];
        for (l, fl, r, fr) in candidates {
            if let (Some(fl), Some(fr)) = (fl, fr) {
                if fl.signum() != fr.signum() {
                    return bracketed(f, Bracket1D { lo: l, hi: r }, cfg);
                }
            }
        }
        half *= 1.6;
    }
    let f_lo = f(seed - half).unwrap_or(f64::NAN);
    let f_hi = f(seed + half).unwrap_or(f64::NAN);
    Err(Error::NoBracket {
        lo: seed - half,
        hi: seed + half,
        f_lo,
        f_hi,
    })
}

/// Dense square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::InvalidInput(format!(
                "square matrix of order {n} needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("matrix entry ({}, {})", pos / n, pos % n),
            });
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("rows must all have length n".into()));
        }
        Self::new(n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest absolute entry.
    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|a_ij - a_ji|` relative to the max-norm.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.max_norm();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn mul(&self, other: &SquareMatrix) -> Result<SquareMatrix> {
        if self.n != other.n {
            return Err(Error::InvalidInput("matrix orders differ".into()));
        }
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    out[i * n + j] += a * other.get(k, j);
                }
            }
        }
        SquareMatrix::new(n, out)
    }

    /// Threshold below which `|det|` counts as singular.
    pub fn singular_threshold(&self, det_eps: f64) -> f64 {
        det_eps * self.max_norm().powi(self.n as i32)
    }

    pub fn is_near_singular(&self, det: f64, det_eps: f64) -> bool {
        det == 0.0 || det.abs() < self.singular_threshold(det_eps)
    }
}

struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
}

fn lu_decompose(m: &SquareMatrix) -> Lu {
    let n = m.n;
    let mut lu = m.data.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    let mut singular = false;
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, lu[i * n + k].abs()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if pivot == 0.0 {
            singular = true;
            continue;
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
            sign = -sign;
        }
        let diag = lu[k * n + k];
        for i in (k + 1)..n {
            let factor = lu[i * n + k] / diag;
            lu[i * n + k] = factor;
            for j in (k + 1)..n {
                lu[i * n + j] -= factor * lu[k * n + j];
            }
        }
    }
    Lu {
        n,
        lu,
        perm,
        sign,
        singular,
    }
}

/// Determinant by LU factorization with partial pivoting. Exactly singular
/// input yields `0.0`.
pub fn determinant(m: &SquareMatrix) -> f64 {
    let lu = lu_decompose(m);
    if lu.singular {
        return 0.0;
    }
    (0..lu.n).fold(lu.sign, |acc, i| acc * lu.lu[i * lu.n + i])
}

/// Solves `m x = b`.
pub fn solve_linear(m: &SquareMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != m.n {
        return Err(Error::InvalidInput(format!(
            "right-hand side has length {}, matrix order is {}",
            b.len(),
            m.n
        )));
    }
    let lu = lu_decompose(m);
    if lu.singular {
        return Err(Error::SingularJacobian {
            det: 0.0,
            threshold: 0.0,
        });
    }
    let n = lu.n;
    let mut y: Vec<f64> = lu.perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            y[i] -= lu.lu[i * n + j] * y[j];
        }
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            y[i] -= lu.lu[i * n + j] * y[j];
        }
        y[i] /= lu.lu[i * n + i];
    }
    Ok(y)
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Central-difference gradient with componentwise step
/// `fd_step * max(1, |x_i|)`.
pub fn fd_gradient<F>(mut f: F, x: &[f64], fd_step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = fd_step * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient probe along coordinate {i} at {x:?}"),
            });
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector function.
pub fn fd_jacobian<F>(f: &mut F, x: &[f64], fd_step: f64) -> Result<SquareMatrix>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut data = vec![0.0; n * n];
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = fd_step * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let fp = f(&probe)?;
        probe[j] = x[j] - h;
        let fm = f(&probe)?;
        probe[j] = x[j];
        if fp.len() != n || fm.len() != n {
            return Err(Error::InvalidInput("system is not square".into()));
        }
        for i in 0..n {
            data[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    SquareMatrix::new(n, data)
}

/// Result of an N-dimensional Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    /// Max-norm of `F(x)` from a final, separate evaluation.
    pub residual: f64,
    pub iterations: usize,
    /// Jacobian at the returned point.
    pub jacobian: SquareMatrix,
    pub jacobian_det: f64,
}

/// Newton's method with a finite-difference Jacobian.
pub fn solve_newton_nd<F>(f: F, x0: &[f64], cfg: &SolverConfig) -> Result<NewtonOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let f = std::cell::RefCell::new(f);
    let fd_step = cfg.fd_step;
    solve_newton_nd_with_jacobian(
        |x| (f.borrow_mut())(x),
        |x| fd_jacobian(&mut *f.borrow_mut(), x, fd_step),
        x0,
        cfg,
    )
}

/// Newton's method with a caller-supplied Jacobian. Steps are damped by
/// halving until the squared residual norm decreases. The determinant guard
/// is applied at every iterate, including the returned one.
pub fn solve_newton_nd_with_jacobian<F, J>(
    mut f: F,
    mut jac: J,
    x0: &[f64],
    cfg: &SolverConfig,
) -> Result<NewtonOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    J: FnMut(&[f64]) -> Result<SquareMatrix>,
{
    cfg.validate()?;
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty unknown vector".into()));
    }
    let eval = |f: &mut F, x: &[f64]| -> Result<Vec<f64>> {
        let v = f(x)?;
        if v.len() != n {
            return Err(Error::InvalidInput(format!(
                "system has {} equations for {n} unknowns",
                v.len()
            )));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("system residual at {x:?}"),
            });
        }
        Ok(v)
    };
    let guarded = |jac: &mut J, x: &[f64]| -> Result<(SquareMatrix, f64)> {
        let m = jac(x)?;
        let det = determinant(&m);
        if m.is_near_singular(det, cfg.det_eps) {
            return Err(Error::SingularJacobian {
                det,
                threshold: m.singular_threshold(cfg.det_eps),
            });
        }
        Ok((m, det))
    };

    let mut x = x0.to_vec();
    let mut fx = eval(&mut f, &x)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        if max_norm(&fx) <= cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let (m, _) = guarded(&mut jac, &x)?;
        let rhs: Vec<f64> = fx.iter().map(|v| -v).collect();
        let dx = solve_linear(&m, &rhs)?;
        let base = sum_sq(&fx);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(xi, d)| xi + lambda * d).collect();
            if let Ok(fc) = eval(&mut f, &cand) {
                if sum_sq(&fc) < base {
                    accepted = Some((cand, fc));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                x = cand;
                fx = fc;
            }
            None => break,
        }
    }
    if !converged && max_norm(&fx) <= cfg.tol {
        converged = true;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            best: x,
            residual: max_norm(&fx),
        });
    }

    for _ in 0..POLISH_STEPS {
        if max_norm(&fx) == 0.0 {
            break;
        }
        let Ok((m, _)) = guarded(&mut jac, &x) else { break };
        let rhs: Vec<f64> = fx.iter().map(|v| -v).collect();
        let Ok(dx) = solve_linear(&m, &rhs) else { break };
        let cand: Vec<f64> = x.iter().zip(&dx).map(|(xi, d)| xi + d).collect();
        match eval(&mut f, &cand) {
            Ok(fc) if max_norm(&fc) < max_norm(&fx) => {
                x = cand;
                fx = fc;
            }
            _ => break,
        }
    }

    let check = eval(&mut f, &x)?;
    let residual = max_norm(&check);
    if residual > cfg.tol {
        return Err(Error::NoConvergence {
            iterations,
            best: x,
            residual,
        });
    }
    let (jacobian, jacobian_det) = guarded(&mut jac, &x)?;
    Ok(NewtonOutcome {
        x,
        residual,
        iterations,
        jacobian,
        jacobian_det,
    })
}
