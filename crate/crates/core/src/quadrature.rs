//! Discounted quadrature on uniform grids.
//!
//! Integrals `∫ e^{−α(τ−t)} v(τ) dτ` are approximated by the trapezoidal
//! construction with the exponential integrated exactly: `v` is
//! interpolated linearly between grid nodes and each step contributes
//! `a_k v_k + b_k v_{k+1}` where
//!
//! ```text
//! a_k = ∫_{kh}^{(k+1)h} e^{−ατ} (1 − s) dτ,  b_k = ∫_{kh}^{(k+1)h} e^{−ατ} s dτ,  s = τ/h − k.
//! ```
//!
//! For `α = 0` this is exactly the composite trapezoidal rule; for constant
//! integrands it reproduces `(1 − e^{−αT})/α` to rounding.
//!
//! Integrands that contain a zero-order-held input (`u` constant on each
//! step) use the per-step pair directly: `u_k (a_k v_k + b_k v_{k+1})`.

use crate::error::{Error, Result};

/// `(∫₀¹ e^{−cs}(1−s) ds, ∫₀¹ e^{−cs} s ds)`
fn unit_step_weights(c: f64) -> (f64, f64) {
    if c.abs() < 0.5 {
        // Σ (−c)^n/(n+1)! and Σ (−c)^n/(n!(n+2)); 24 terms reach rounding for |c| < 0.5.
        let mut total = 0.0;
        let mut upper = 0.0;
        let mut pow_over_fact = 1.0; // (−c)^n / n!
        for n in 0..24 {
            total += pow_over_fact / (n + 1) as f64;
            upper += pow_over_fact / (n + 2) as f64;
            pow_over_fact *= -c / (n + 1) as f64;
        }
        (total - upper, upper)
    } else {
        let e = (-c).exp();
        let total = (1.0 - e) / c;
        let upper = (1.0 - e * (1.0 + c)) / (c * c);
        (total - upper, upper)
    }
}

/// Precomputed weights for `steps` uniform steps of width `h` starting at
/// discount offset zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountedRule {
    alpha: f64,
    h: f64,
    step_weights: Vec<(f64, f64)>,
    node_weights: Vec<f64>,
}

impl DiscountedRule {
    pub fn new(alpha: f64, h: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("discounted quadrature needs at least 2 grid points".into()));
        }
        if !(h > 0.0) || !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "discounted quadrature needs h > 0 and α ≥ 0 (h = {h}, α = {alpha})"
            )));
        }
        let (a, b) = unit_step_weights(alpha * h);
        let step_weights: Vec<(f64, f64)> = (0..steps)
            .map(|k| {
                let scale = h * (-alpha * k as f64 * h).exp();
                (a * scale, b * scale)
            })
            .collect();
        let mut node_weights = vec![0.0; steps + 1];
        for (k, &(a, b)) in step_weights.iter().enumerate() {
            node_weights[k] += a;
            node_weights[k + 1] += b;
        }
        Ok(Self { alpha, h, step_weights, node_weights })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn steps(&self) -> usize {
        self.step_weights.len()
    }

    /// Weights applied to node values of a continuous integrand.
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// `(a_k, b_k)` per step.
    pub fn step_weights(&self) -> &[(f64, f64)] {
        &self.step_weights
    }

    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.node_weights.len() {
            return Err(Error::DimensionMismatch {
                context: "quadrature node values",
                expected: self.node_weights.len(),
                actual: values.len(),
            });
        }
        Ok(values.iter().zip(&self.node_weights).map(|(v, w)| v * w).sum())
    }

    /// Running integrals `∫₀^{t_k}`, starting with 0 at the first node.
    pub fn cumulative(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.node_weights.len() {
            return Err(Error::DimensionMismatch {
                context: "quadrature node values",
                expected: self.node_weights.len(),
                actual: values.len(),
            });
        }
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(values.len());
        out.push(0.0);
        for (k, &(a, b)) in self.step_weights.iter().enumerate() {
            acc += a * values[k] + b * values[k + 1];
            out.push(acc);
        }
        Ok(out)
    }
}

/// `∫ e^{−α(τ−t₀)} v(τ) dτ` over node values `values` spaced `h` apart.
pub fn discounted_quadrature(values: &[f64], alpha: f64, h: f64) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InvalidConfig("discounted quadrature needs at least 2 grid points".into()));
    }
    DiscountedRule::new(alpha, h, values.len() - 1)?.integrate(values)
}
