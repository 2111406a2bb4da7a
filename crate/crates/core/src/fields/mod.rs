//! Parametric vector fields `ℝⁿ → ℝⁿ`.
//!
//! Each family provides its value, the state Jacobian action, and a reverse
//! mode rule that returns `wᵀ ∂f/∂z` while accumulating `wᵀ ∂f/∂θ` into a
//! flat gradient buffer laid out in visitor order.

mod activation;
mod blockwise;
mod gradient;
mod metric;
mod mlp;
mod skew;

pub use activation::Activation;
pub use blockwise::{SeparableField, VolumeSplitField};
pub use gradient::{ActivationField, GradField, LinearField};
pub use metric::MetricField;
pub use mlp::Mlp;
pub use skew::{triangle_len, MassField, SphereField, SphereParam};

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::params::{Param, ParamMut, Parameterized};

#[derive(Clone, Debug)]
pub enum VectorField {
    Zero { dim: usize },
    Linear(LinearField),
    Grad(GradField),
    Activation(ActivationField),
    /// Unconstrained perceptron field `BΣ(Cz+c)`.
    Mlp(Mlp),
    Sphere(SphereField),
    Mass(MassField),
    VolumeSplit(VolumeSplitField),
    Metric(MetricField),
    Separable(SeparableField),
    Lifted(HamiltonianLift),
}

/// `X_{H_f}(z, p) = (f(z), −∂_z[pᵀ f(z)])` on `ℝ²ⁿ`.
#[derive(Clone, Debug)]
pub struct HamiltonianLift {
    base: Box<VectorField>,
}

impl HamiltonianLift {
    pub fn base(&self) -> &VectorField {
        &self.base
    }
}

impl VectorField {
    pub fn dim(&self) -> usize {
        match self {
            VectorField::Zero { dim } => *dim,
            VectorField::Linear(f) => f.dim(),
            VectorField::Grad(f) => f.dim(),
            VectorField::Activation(f) => f.dim(),
            VectorField::Mlp(f) => f.input_dim(),
            VectorField::Sphere(f) => f.dim(),
            VectorField::Mass(f) => f.dim(),
            VectorField::VolumeSplit(f) => f.dim(),
            VectorField::Metric(f) => f.dim(),
            VectorField::Separable(f) => f.dim(),
            VectorField::Lifted(f) => 2 * f.base.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            VectorField::Zero { .. } => "zero",
            VectorField::Linear(_) => "linear",
            VectorField::Grad(_) => "grad",
            VectorField::Activation(_) => "activation",
            VectorField::Mlp(_) => "mlp",
            VectorField::Sphere(_) => "sphere",
            VectorField::Mass(_) => "mass",
            VectorField::VolumeSplit(_) => "volume",
            VectorField::Metric(_) => "metric",
            VectorField::Separable(_) => "separable",
            VectorField::Lifted(_) => "lifted",
        }
    }

    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        Ok(self.value(z))
    }

    pub fn jacobian_action(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        check_dim(self.dim(), v.len())?;
        Ok(self.jvp(z, v))
    }

    /// `wᵀ ∂f/∂z` without touching any parameter gradient.
    pub fn vjp(&self, z: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), z.len())?;
        check_dim(self.dim(), w.len())?;
        let mut scratch = vec![0.0; self.n_params()];
        Ok(self.backward(z, w, &mut scratch))
    }

    pub(crate) fn value(&self, z: &[f64]) -> Vec<f64> {
        match self {
            VectorField::Zero { dim } => vec![0.0; *dim],
            VectorField::Linear(f) => f.value(z),
            VectorField::Grad(f) => f.value(z),
            VectorField::Activation(f) => f.value(z),
            VectorField::Mlp(f) => f.value(z),
            VectorField::Sphere(f) => f.value(z),
            VectorField::Mass(f) => f.value(z),
            VectorField::VolumeSplit(f) => f.value(z),
            VectorField::Metric(f) => f.value(z),
            VectorField::Separable(f) => f.value(z),
            VectorField::Lifted(f) => {
                let n = f.base.dim();
                let (q, p) = z.split_at(n);
                let mut out = f.base.value(q);
                let mut scratch = vec![0.0; f.base.n_params()];
                let jp = f.base.backward(q, p, &mut scratch);
                out.extend(jp.into_iter().map(|x| -x));
                out
            }
        }
    }

    pub(crate) fn jvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        match self {
            VectorField::Zero { dim } => vec![0.0; *dim],
            VectorField::Linear(f) => f.jvp(z, v),
            VectorField::Grad(f) => f.jvp(z, v),
            VectorField::Activation(f) => f.jvp(z, v),
            VectorField::Mlp(f) => f.jvp(z, v),
            VectorField::Sphere(f) => f.jvp(z, v),
            VectorField::Mass(f) => f.jvp(z, v),
            VectorField::VolumeSplit(f) => f.jvp(z, v),
            VectorField::Metric(f) => f.jvp(z, v),
            VectorField::Separable(f) => f.jvp(z, v),
            VectorField::Lifted(f) => {
                // The base Jacobian is locally constant for piecewise linear
                // families, so the lifted Jacobian is block diagonal.
                let n = f.base.dim();
                let (q, _) = z.split_at(n);
                let (vq, vp) = v.split_at(n);
                let mut out = f.base.jvp(q, vq);
                let mut scratch = vec![0.0; f.base.n_params()];
                out.extend(f.base.backward(q, vp, &mut scratch).into_iter().map(|x| -x));
                out
            }
        }
    }

    /// Accumulates `wᵀ ∂f/∂θ` into `grad` and returns `wᵀ ∂f/∂z`.
    pub(crate) fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        match self {
            VectorField::Zero { dim } => vec![0.0; *dim],
            VectorField::Linear(f) => f.backward(z, w, grad),
            VectorField::Grad(f) => f.backward(z, w, grad),
            VectorField::Activation(f) => f.backward(z, w, grad),
            VectorField::Mlp(f) => f.backward(z, w, grad),
            VectorField::Sphere(f) => f.backward(z, w, grad),
            VectorField::Mass(f) => f.backward(z, w, grad),
            VectorField::VolumeSplit(f) => f.backward(z, w, grad),
            VectorField::Metric(f) => f.backward(z, w, grad),
            VectorField::Separable(f) => f.backward(z, w, grad),
            VectorField::Lifted(f) => {
                let n = f.base.dim();
                let (q, p) = z.split_at(n);
                let (wq, wp) = w.split_at(n);
                let mut dq = f.base.backward(q, wq, grad);
                // −pᵀ J(q) wp: its q-derivative vanishes almost everywhere.
                let mut tmp = vec![0.0; grad.len()];
                f.base.bilinear_param_grad(q, wp, p, &mut tmp);
                linalg::axpy(grad, -1.0, &tmp);
                let dp = linalg::scaled(&f.base.jvp(q, wp), -1.0);
                dq.extend(dp);
                dq
            }
        }
    }

    /// Accumulates `∂θ [wᵀ J(z) v]` with the activation pattern held fixed.
    pub(crate) fn bilinear_param_grad(&self, z: &[f64], v: &[f64], w: &[f64], grad: &mut [f64]) {
        match self {
            VectorField::Zero { .. } => {}
            VectorField::Linear(f) => f.bilinear_param_grad(z, v, w, grad),
            VectorField::Grad(f) => f.bilinear_param_grad(z, v, w, grad),
            VectorField::Activation(f) => f.bilinear_param_grad(z, v, w, grad),
            VectorField::Mlp(f) => f.bilinear_param_grad(z, v, w, grad),
            VectorField::Mass(f) => f.bilinear_param_grad(z, v, w, grad),
            VectorField::VolumeSplit(f) => f.bilinear_param_grad(z, v, w, grad),
            VectorField::Metric(f) => f.bilinear_param_grad(z, v, w, grad),
            VectorField::Separable(f) => f.bilinear_param_grad(z, v, w, grad),
            VectorField::Lifted(f) => {
                let n = f.base.dim();
                let q = &z[..n];
                let (vq, vp) = v.split_at(n);
                let (wq, wp) = w.split_at(n);
                f.base.bilinear_param_grad(q, vq, wq, grad);
                let mut tmp = vec![0.0; grad.len()];
                f.base.bilinear_param_grad(q, wp, vp, &mut tmp);
                linalg::axpy(grad, -1.0, &tmp);
            }
            VectorField::Sphere(_) => unreachable!("sphere fields are rejected by lift_hamiltonian"),
        }
    }

    /// Whether the Jacobian is locally constant, which the lift relies on.
    pub fn is_piecewise_linear(&self) -> bool {
        match self {
            VectorField::Sphere(_) => false,
            VectorField::Lifted(f) => f.base.is_piecewise_linear(),
            _ => true,
        }
    }

    /// Global Lipschitz constant of the field (not of a flow step).
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            VectorField::Zero { .. } => 0.0,
            VectorField::Linear(f) => f.lipschitz_bound(),
            VectorField::Grad(f) => f.lipschitz_bound(),
            VectorField::Activation(f) => f.lipschitz_bound(),
            VectorField::Mlp(f) => f.lipschitz_bound(),
            VectorField::Mass(f) => f.lipschitz_bound(),
            VectorField::VolumeSplit(f) => f.lipschitz_bound(),
            VectorField::Metric(f) => f.lipschitz_bound(),
            VectorField::Separable(f) => f.lipschitz_bound(),
            VectorField::Sphere(_) | VectorField::Lifted(_) => f64::INFINITY,
        }
    }
}

/// Lift `f` to `X_{H_f}` on `ℝ²ⁿ`. Only families with locally constant
/// Jacobians are supported.
pub fn lift_hamiltonian(f: VectorField) -> Result<VectorField> {
    if !f.is_piecewise_linear() {
        return Err(Error::Incompatible(format!(
            "hamiltonian lift needs a piecewise linear field, got {}",
            f.kind_name()
        )));
    }
    Ok(VectorField::Lifted(HamiltonianLift { base: Box::new(f) }))
}

impl Parameterized for VectorField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        match self {
            VectorField::Zero { .. } => {}
            VectorField::Linear(x) => x.visit_params(f),
            VectorField::Grad(x) => x.visit_params(f),
            VectorField::Activation(x) => x.visit_params(f),
            VectorField::Mlp(x) => x.visit_params(f),
            VectorField::Sphere(x) => x.visit_params(f),
            VectorField::Mass(x) => x.visit_params(f),
            VectorField::VolumeSplit(x) => x.visit_params(f),
            VectorField::Metric(x) => x.visit_params(f),
            VectorField::Separable(x) => x.visit_params(f),
            VectorField::Lifted(x) => x.base.visit_params(f),
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        match self {
            VectorField::Zero { .. } => {}
            VectorField::Linear(x) => x.visit_params_mut(f),
            VectorField::Grad(x) => x.visit_params_mut(f),
            VectorField::Activation(x) => x.visit_params_mut(f),
            VectorField::Mlp(x) => x.visit_params_mut(f),
            VectorField::Sphere(x) => x.visit_params_mut(f),
            VectorField::Mass(x) => x.visit_params_mut(f),
            VectorField::VolumeSplit(x) => x.visit_params_mut(f),
            VectorField::Metric(x) => x.visit_params_mut(f),
            VectorField::Separable(x) => x.visit_params_mut(f),
            VectorField::Lifted(x) => x.base.visit_params_mut(f),
        }
    }
}

macro_rules! from_family {
    ($($ty:ty => $variant:ident),*) => {
        $(impl From<$ty> for VectorField {
            fn from(f: $ty) -> Self {
                VectorField::$variant(f)
            }
        })*
    };
}

from_family!(
    LinearField => Linear,
    GradField => Grad,
    ActivationField => Activation,
    Mlp => Mlp,
    SphereField => Sphere,
    MassField => Mass,
    VolumeSplitField => VolumeSplit,
    MetricField => Metric,
    SeparableField => Separable
);
