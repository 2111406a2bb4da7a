//! Empirical check of `‖Φ_X^t(x) − Φ_X̃^t(x)‖ ≤ ε t exp(Lip(X) t)`.

use crate::fields::VectorField;
use crate::flows;
use crate::linalg;

#[derive(Clone, Debug, PartialEq)]
pub struct GronwallSample {
    pub t: f64,
    pub deviation: f64,
    pub bound: f64,
}

impl GronwallSample {
    pub fn holds(&self) -> bool {
        self.deviation <= self.bound
    }
}

/// Integrate `X` and `X̃ = X + δ` from `x` with RK4 (`steps_per_unit`
/// steps per unit time) and compare against the bound at each `t`, where
/// `ε` is a supplied bound on `sup ‖δ‖` and `lip` one on `Lip(X)`.
pub fn gronwall_check(
    field: &VectorField,
    delta: &dyn Fn(&[f64]) -> Vec<f64>,
    eps: f64,
    lip: f64,
    x: &[f64],
    times: &[f64],
    steps_per_unit: usize,
) -> Vec<GronwallSample> {
    times
        .iter()
        .map(|&t| {
            let steps = ((t * steps_per_unit as f64).ceil() as usize).max(1);
            let a = flows::rk4(|z| field.value(z), x, t, steps);
            let b = flows::rk4(|z| linalg::add(&field.value(z), &delta(z)), x, t, steps);
            GronwallSample { t, deviation: linalg::norm(&linalg::sub(&a, &b)), bound: eps * t * (lip * t).exp() }
        })
        .collect()
}
