//! Certified per-layer Lipschitz constants.
//!
//! All spectral norms here are exact (eigenvalues of `WᵀW` by Jacobi
//! rotations) so the product is a true upper bound, not an estimate.

use super::{Layer, Network, Op};
use crate::fields::VectorField;
use crate::flows::{FlowStep, Scheme};
use crate::linalg::{self, Mat};

fn norm2(m: &Mat) -> f64 {
    linalg::singular_value_range(m).1
}

/// Euler step of a gradient field with sign −1 and `α ≥ 0`.
pub(crate) fn is_contractive(step: &FlowStep) -> bool {
    matches!(step.scheme().base().0, Scheme::ExplicitEuler)
        && matches!(step.field(), VectorField::Grad(g) if g.sign() < 0.0 && g.alpha().iter().all(|&a| a >= 0.0))
}

fn euler_factor(field: &VectorField, h: f64) -> f64 {
    match field {
        VectorField::Zero { .. } => 1.0,
        VectorField::Linear(f) => {
            let n = f.dim();
            norm2(&Mat::identity(n).add(&f.matrix().scale(h)))
        }
        VectorField::Grad(g) if g.sign() < 0.0 && g.alpha().iter().all(|&a| a >= 0.0) => {
            // One-sided Lipschitz −μ with μ = a·min(α)·λ_min(AᵀA) and Lip(∇V) ≤ max(α)‖A‖²:
            // ‖Δ + hΔf‖² ≤ (1 − 2hμ + h²L²)‖Δ‖².
            let (smin, smax) = linalg::singular_value_range(g.matrix());
            let amin = g.alpha().iter().copied().fold(f64::INFINITY, f64::min);
            let amax = g.alpha().iter().copied().fold(0.0, f64::max);
            let lmin = if g.width() >= g.dim() { smin * smin } else { 0.0 };
            let mu = g.activation().slope() * amin * lmin;
            let lip = amax * smax * smax;
            (1.0 - 2.0 * h * mu + h * h * lip * lip).max(0.0).sqrt()
        }
        f => 1.0 + h * f.lipschitz_bound(),
    }
}

fn base_factor(step: &FlowStep, scheme: &Scheme, h: f64) -> f64 {
    let field = step.field();
    match scheme {
        Scheme::ExplicitEuler => euler_factor(field, h),
        Scheme::GradientModule(_) => 1.0 + h * field.lipschitz_bound(),
        Scheme::SplitVolume => match field {
            VectorField::VolumeSplit(f) => (1.0 + h * f.u().lipschitz_bound()) * (1.0 + h * f.v().lipschitz_bound()),
            _ => f64::INFINITY,
        },
        Scheme::SymplecticEuler => match field {
            VectorField::Separable(f) => {
                (1.0 + h * f.kinetic().lipschitz_bound()) * (1.0 + h * f.potential().lipschitz_bound())
            }
            _ => f64::INFINITY,
        },
        Scheme::EulerHeunNorm | Scheme::GonzalezDg => {
            if h == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        }
        Scheme::Substeps { count, inner } => base_factor(step, inner, h / *count as f64).powi(*count as i32),
    }
}

/// Certified Lipschitz constant of one flow step with step size `h`.
pub fn step_factor(step: &FlowStep, h: f64) -> f64 {
    if h == 0.0 {
        return 1.0;
    }
    base_factor(step, step.scheme(), h)
}

fn layer_factor(layer: &Layer) -> f64 {
    match layer {
        Layer::Lift { weight, scale, .. } => scale.abs() * norm2(weight.get()),
        Layer::Project { weight, .. } | Layer::Affine { weight, .. } => norm2(weight.get()),
        Layer::MassLift { .. } => 1.0,
        // [I | (1/k)𝟏𝟏ᵀ] has squared norm 1 + s/k.
        Layer::MassProject { k, s } => (1.0 + *s as f64 / *k as f64).sqrt(),
        Layer::Flow(_) => unreachable!(),
    }
}

pub(crate) fn network_bound(net: &Network) -> f64 {
    net.ops()
        .into_iter()
        .map(|op| match op {
            Op::Step { layer, step } => {
                let Layer::Flow(b) = &net.layers[layer] else { unreachable!() };
                let s = &b.steps[step];
                step_factor(s, net.step_h(s, &b.bind[step]))
            }
            Op::Linear { layer } => layer_factor(&net.layers[layer]),
        })
        .product()
}
