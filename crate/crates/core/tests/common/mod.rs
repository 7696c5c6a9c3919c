//! Synthetic instances and reference formulas shared by the integration
//! tests. The forward formulas here are written independently of the
//! library's model code.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use redopt::kinetics::{first_order_model, second_order_model, FirstOrderConfig, FirstOrderModel, SecondOrderConfig, SecondOrderModel};
use redopt::Dataset;

pub const FO_LAMBDA0: f64 = 0.1;
pub const FO_LAMBDA_INF: f64 = 0.9;
pub const FO_K: f64 = 0.01;

pub const SO_Y0: f64 = 0.043;
pub const SO_Y_INF: f64 = 0.0245;
pub const SO_K: f64 = 938.0;
pub const SO_A0: f64 = 3.82e-5;
pub const SO_B0: f64 = 4.47e-5;

/// `λ(t)` written as relaxation from `λ₀` towards `λ∞`.
pub fn first_order_reference(lambda0: f64, lambda_inf: f64, k: f64, t: f64) -> f64 {
    lambda0 * (-k * t).exp() + lambda_inf * (1.0 - (-k * t).exp())
}

/// Property linear in the remaining concentration of the limiting reagent,
/// `[A](t) = Δ₀ / ((B₀/A₀) e^{kΔ₀t} − 1)`.
pub fn second_order_reference(y0: f64, y_inf: f64, k: f64, a0: f64, b0: f64, t: f64) -> f64 {
    let d0 = b0 - a0;
    let a_t = d0 / ((b0 / a0) * (k * d0 * t).exp() - 1.0);
    y_inf + (y0 - y_inf) * a_t / a0
}

pub fn first_order_times() -> Vec<f64> {
    (0..=10).map(|i| 60.0 * i as f64).collect()
}

pub fn second_order_times() -> Vec<f64> {
    (0..=16).map(|i| 25.0 * i as f64).collect()
}

fn add_noise(clean: &[(f64, f64)], sigma_frac: f64, seed: u64) -> Vec<(f64, f64)> {
    if sigma_frac == 0.0 {
        return clean.to_vec();
    }
    let (lo, hi) = clean
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let normal = Normal::new(0.0, sigma_frac * (hi - lo)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clean.iter().map(|&(t, y)| (t, y + normal.sample(&mut rng))).collect()
}

/// First-order data on `t = 0, 60, …, 600` with Gaussian noise of
/// `sigma_frac` times the clean range. The `t = 0` row is kept noise-free
/// since it fixes `λ₀`.
pub fn first_order_instance(sigma_frac: f64, seed: u64) -> (Dataset, FirstOrderModel) {
    let clean: Vec<(f64, f64)> = first_order_times()
        .into_iter()
        .map(|t| (t, first_order_reference(FO_LAMBDA0, FO_LAMBDA_INF, FO_K, t)))
        .collect();
    let mut pairs = add_noise(&clean, sigma_frac, seed);
    pairs[0] = clean[0];
    (
        Dataset::from_pairs(format!("first-order-{seed}"), &pairs).unwrap(),
        first_order_model(FirstOrderConfig { lambda0: FO_LAMBDA0 }),
    )
}

pub fn second_order_config() -> SecondOrderConfig {
    SecondOrderConfig {
        y0: SO_Y0,
        a0: SO_A0,
        b0: SO_B0,
    }
}

/// Second-order data on `t = 0, 25, …, 400` s, noise as above.
pub fn second_order_instance(sigma_frac: f64, seed: u64) -> (Dataset, SecondOrderModel) {
    let clean: Vec<(f64, f64)> = second_order_times()
        .into_iter()
        .map(|t| (t, second_order_reference(SO_Y0, SO_Y_INF, SO_K, SO_A0, SO_B0, t)))
        .collect();
    let mut pairs = add_noise(&clean, sigma_frac, seed);
    pairs[0] = clean[0];
    (
        Dataset::from_pairs(format!("second-order-{seed}"), &pairs).unwrap(),
        second_order_model(second_order_config()).unwrap(),
    )
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Closed-form inner least-squares `λ∞(k)` for the first-order model.
pub fn first_order_inner_lambda(data: &Dataset, lambda0: f64, k: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in data.points() {
        let e = (-k * p.t).exp();
        num += (p.y - lambda0 * e) * (1.0 - e);
        den += (1.0 - e) * (1.0 - e);
    }
    num / den
}

/// Plain average of the single-point inversions over the non-singular
/// points.
pub fn first_order_mean_lambda(data: &Dataset, lambda0: f64, k: f64) -> f64 {
    let vals: Vec<f64> = data
        .points()
        .iter()
        .filter(|p| (1.0 - (-k * p.t).exp()).abs() >= 1e-12)
        .map(|p| {
            let e = (-k * p.t).exp();
            (p.y - lambda0 * e) / (1.0 - e)
        })
        .collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Himmelblau's function and its derivatives.
pub fn himmelblau_grad(x: f64, y: f64) -> [f64; 2] {
    let a = x * x + y - 11.0;
    let b = x + y * y - 7.0;
    [4.0 * x * a + 2.0 * b, 2.0 * a + 4.0 * y * b]
}

pub fn himmelblau_hessian(x: f64, y: f64) -> [[f64; 2]; 2] {
    let hxx = 12.0 * x * x + 4.0 * y - 42.0;
    let hyy = 12.0 * y * y + 4.0 * x - 26.0;
    let hxy = 4.0 * (x + y);
    [[hxx, hxy], [hxy, hyy]]
}

/// Distinct Himmelblau minima reached by plain Newton iteration from a
/// 21x21 grid of starts in `[-5, 5]²`.
pub fn himmelblau_minima_oracle() -> Vec<[f64; 2]> {
    let mut found: Vec<[f64; 2]> = Vec::new();
    for i in 0..=20 {
        for j in 0..=20 {
            let (mut x, mut y) = (-5.0 + 0.5 * i as f64, -5.0 + 0.5 * j as f64);
            for _ in 0..100 {
                let g = himmelblau_grad(x, y);
                let h = himmelblau_hessian(x, y);
                let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
                if det.abs() < 1e-12 {
                    break;
                }
                x -= (h[1][1] * g[0] - h[0][1] * g[1]) / det;
                y -= (-h[1][0] * g[0] + h[0][0] * g[1]) / det;
            }
            let g = himmelblau_grad(x, y);
            let h = himmelblau_hessian(x, y);
            let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
            let is_min = det > 0.0 && h[0][0] > 0.0;
            if g[0].hypot(g[1]) < 1e-10 && is_min && x.abs() <= 5.0 && y.abs() <= 5.0 && !found.iter().any(|m| (m[0] - x).hypot(m[1] - y) < 1e-6) {
                found.push([x, y]);
            }
        }
    }
    found.sort_by(|a, b| a[0].total_cmp(&b[0]));
    found
}
