//! Rate-law models: pseudo-first-order growth of a measured property and
//! second-order kinetics with unequal initial concentrations. Both have one
//! fitted parameter (the `t → ∞` value) plus the rate constant `k`, and both
//! invert in closed form on a single data point.

use crate::error::{Error, Result};
use crate::model::{DataPoint, Model};

/// Inversion denominators below this magnitude mark the point singular.
pub const SINGULAR_DENOMINATOR: f64 = 1.0e-12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FirstOrderConfig {
    /// Property value at `t = 0`; a known datum, not fitted.
    pub lambda0: f64,
}

/// `λ(t) = λ∞ − (λ∞ − λ0) exp(−k t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderModel {
    cfg: FirstOrderConfig,
    k_bounds: (f64, f64),
    param_bounds: (f64, f64),
}

pub fn first_order_model(cfg: FirstOrderConfig) -> FirstOrderModel {
    FirstOrderModel {
        cfg,
        k_bounds: (1.0e-5, 1.0),
        param_bounds: (-2.0, 2.0),
    }
}

impl FirstOrderModel {
    pub fn config(&self) -> FirstOrderConfig {
        self.cfg
    }

    pub fn with_k_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.k_bounds = (lo, hi);
        self
    }

    pub fn with_param_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.param_bounds = (lo, hi);
        self
    }

    /// `1 − exp(−k t)`, accurate for small `k t`.
    fn growth(k: f64, t: f64) -> f64 {
        -(-k * t).exp_m1()
    }
}

impl Model for FirstOrderModel {
    fn n_params(&self) -> usize {
        1
    }

    fn param_names(&self) -> Vec<String> {
        vec!["lambda_inf".into()]
    }

    fn eval(&self, p: &[f64], t: f64, k: f64) -> f64 {
        let (inf, l0) = (p[0], self.cfg.lambda0);
        inf - (inf - l0) * (-k * t).exp()
    }

    fn param_partials(&self, _p: &[f64], t: f64, k: f64) -> Option<Vec<f64>> {
        Some(vec![Self::growth(k, t)])
    }

    fn k_partial(&self, p: &[f64], t: f64, k: f64) -> Option<f64> {
        Some((p[0] - self.cfg.lambda0) * t * (-k * t).exp())
    }

    fn invert_closed_form(&self, points: &[DataPoint], k: f64) -> Option<Result<Vec<f64>>> {
        let pt = points[0];
        let denom = Self::growth(k, pt.t);
        if denom.abs() < SINGULAR_DENOMINATOR {
            return Some(Err(Error::Singular {
                combo: vec![],
                k,
                reason: format!("1 - exp(-k t) = {denom:e} at t = {}", pt.t),
            }));
        }
        Some(Ok(vec![(pt.y - self.cfg.lambda0 * (-k * pt.t).exp()) / denom]))
    }

    fn is_singular_point(&self, t: f64, k: f64) -> bool {
        Self::growth(k, t).abs() < SINGULAR_DENOMINATOR
    }

    fn k_bounds(&self) -> (f64, f64) {
        self.k_bounds
    }

    fn param_bounds(&self) -> Vec<(f64, f64)> {
        vec![self.param_bounds]
    }
}

/// Initial conditions for `A + B → products` with `[B]0 > [A]0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SecondOrderConfig {
    /// Measured property at `t = 0`.
    pub y0: f64,
    /// `[A]0`, molar.
    pub a0: f64,
    /// `[B]0`, molar.
    pub b0: f64,
}

impl SecondOrderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.y0.is_finite() && self.a0.is_finite() && self.b0.is_finite()) {
            return Err(Error::InvalidInput("second-order constants must be finite".into()));
        }
        if !(self.b0 > self.a0 && self.a0 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "second-order kinetics needs [B]0 > [A]0 > 0, got A0 = {}, B0 = {}",
                self.a0, self.b0
            )));
        }
        Ok(())
    }

    /// `[A]0 / [B]0`.
    pub fn ratio(&self) -> f64 {
        self.a0 / self.b0
    }

    /// `[B]0 − [A]0`.
    pub fn delta0(&self) -> f64 {
        self.b0 - self.a0
    }
}

/// `Y(t) = [Y∞ + {Y0(1−α) − Y∞} E] / (1 − α E)` with `E = exp(−k Δ0 t)`,
/// `α = [A]0/[B]0` and `Δ0 = [B]0 − [A]0`. `k` is in (M s)⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderModel {
    cfg: SecondOrderConfig,
    k_bounds: (f64, f64),
    param_bounds: (f64, f64),
}

pub fn second_order_model(cfg: SecondOrderConfig) -> Result<SecondOrderModel> {
    cfg.validate()?;
    Ok(SecondOrderModel {
        cfg,
        k_bounds: (1.0, 1.0e4),
        param_bounds: (-1.0, 1.0),
    })
}

impl SecondOrderModel {
    pub fn config(&self) -> SecondOrderConfig {
        self.cfg
    }

    pub fn with_k_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.k_bounds = (lo, hi);
        self
    }

    pub fn with_param_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.param_bounds = (lo, hi);
        self
    }
}

impl Model for SecondOrderModel {
    fn n_params(&self) -> usize {
        1
    }

    fn param_names(&self) -> Vec<String> {
        vec!["y_inf".into()]
    }

    fn eval(&self, p: &[f64], t: f64, k: f64) -> f64 {
        let (inf, alpha) = (p[0], self.cfg.ratio());
        let e = (-k * self.cfg.delta0() * t).exp();
        (inf + (self.cfg.y0 * (1.0 - alpha) - inf) * e) / (1.0 - alpha * e)
    }

    fn param_partials(&self, _p: &[f64], t: f64, k: f64) -> Option<Vec<f64>> {
        let x = k * self.cfg.delta0() * t;
        let e = (-x).exp();
        Some(vec![-(-x).exp_m1() / (1.0 - self.cfg.ratio() * e)])
    }

    fn k_partial(&self, p: &[f64], t: f64, k: f64) -> Option<f64> {
        let (alpha, d0) = (self.cfg.ratio(), self.cfg.delta0());
        let e = (-k * d0 * t).exp();
        let denom = 1.0 - alpha * e;
        Some(-d0 * t * e * (1.0 - alpha) * (self.cfg.y0 - p[0]) / (denom * denom))
    }

    fn invert_closed_form(&self, points: &[DataPoint], k: f64) -> Option<Result<Vec<f64>>> {
        let pt = points[0];
        let alpha = self.cfg.ratio();
        let x = k * self.cfg.delta0() * pt.t;
        if x.exp_m1().abs() < SINGULAR_DENOMINATOR {
            return Some(Err(Error::Singular {
                combo: vec![],
                k,
                reason: format!("exp(k Δ0 t) − 1 vanishes at t = {}", pt.t),
            }));
        }
        // Multiplied through by exp(−x) so large k Δ0 t cannot overflow.
        let e = (-x).exp();
        let num = pt.y * (1.0 - alpha * e) - self.cfg.y0 * (1.0 - alpha) * e;
        Some(Ok(vec![num / -(-x).exp_m1()]))
    }

    fn is_singular_point(&self, t: f64, k: f64) -> bool {
        (k * self.cfg.delta0() * t).exp_m1().abs() < SINGULAR_DENOMINATOR
    }

    fn k_bounds(&self) -> (f64, f64) {
        self.k_bounds
    }

    fn param_bounds(&self) -> Vec<(f64, f64)> {
        vec![self.param_bounds]
    }
}

/// Difference between the two sides of the logarithmic rearrangement of the
/// second-order law,
/// `ln{1 + Δ0 (Y0 − Y∞) / ([A]0 (y − Y∞))} − ln([B]0/[A]0) − k Δ0 t`.
/// Zero for points lying on the model curve.
pub fn equivalent_log_form_check(cfg: &SecondOrderConfig, y_inf: f64, k: f64, t: f64, y: f64) -> Result<f64> {
    cfg.validate()?;
    let gap = y - y_inf;
    if gap == 0.0 {
        return Err(Error::Domain(format!("y equals Y∞ = {y_inf} at t = {t}")));
    }
    let arg = 1.0 + cfg.delta0() * (cfg.y0 - y_inf) / (cfg.a0 * gap);
    if !(arg > 0.0 && arg.is_finite()) {
        return Err(Error::Domain(format!(
            "logarithm argument {arg} is not positive at t = {t}"
        )));
    }
    Ok(arg.ln() - (cfg.b0 / cfg.a0).ln() - k * cfg.delta0() * t)
}
