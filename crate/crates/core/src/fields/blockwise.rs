//! Fields on a product `ℝᵐ × ℝᵐ` whose halves only see the other block.

use crate::error::{Error, Result};
use crate::fields::{GradField, Mlp};
use crate::params::{Param, ParamMut, Parameterized};

/// `(u(z₂), v(z₁))` on `ℝᵐ × ℝᵐ`; each half depends only on the other block,
/// so both half-fields are divergence free.
#[derive(Clone, Debug)]
pub struct VolumeSplitField {
    pub(crate) u: Mlp,
    pub(crate) v: Mlp,
}

impl VolumeSplitField {
    pub fn new(u: Mlp, v: Mlp) -> Result<Self> {
        let m = u.input_dim();
        if u.output_dim() != m || v.input_dim() != m || v.output_dim() != m {
            return Err(Error::Incompatible("volume split field needs u, v : R^m -> R^m".into()));
        }
        Ok(VolumeSplitField { u, v })
    }

    pub fn half(&self) -> usize {
        self.u.input_dim()
    }

    pub fn dim(&self) -> usize {
        2 * self.half()
    }

    pub fn u(&self) -> &Mlp {
        &self.u
    }

    pub fn v(&self) -> &Mlp {
        &self.v
    }

    pub(crate) fn u_params(&self) -> usize {
        self.u.n_params()
    }

    pub fn value(&self, z: &[f64]) -> Vec<f64> {
        let m = self.half();
        let mut out = self.u.value(&z[m..]);
        out.extend(self.v.value(&z[..m]));
        out
    }

    pub fn jvp(&self, z: &[f64], dz: &[f64]) -> Vec<f64> {
        let m = self.half();
        let mut out = self.u.jvp(&z[m..], &dz[m..]);
        out.extend(self.v.jvp(&z[..m], &dz[..m]));
        out
    }

    pub fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let m = self.half();
        let (gu, gv) = grad.split_at_mut(self.u_params());
        let d2 = self.u.backward(&z[m..], &w[..m], gu);
        let mut d1 = self.v.backward(&z[..m], &w[m..], gv);
        d1.extend(d2);
        d1
    }

    pub fn bilinear_param_grad(&self, z: &[f64], dz: &[f64], w: &[f64], grad: &mut [f64]) {
        let m = self.half();
        let (gu, gv) = grad.split_at_mut(self.u_params());
        self.u.bilinear_param_grad(&z[m..], &dz[m..], &w[..m], gu);
        self.v.bilinear_param_grad(&z[..m], &dz[..m], &w[m..], gv);
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.u.lipschitz_bound().max(self.v.lipschitz_bound())
    }
}

impl Parameterized for VolumeSplitField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        self.u.visit_params(f);
        self.v.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.u.visit_params_mut(f);
        self.v.visit_params_mut(f);
    }
}

/// Separable Hamiltonian field `(∇K(p), −∇V(q))` on `(q, p) ∈ ℝⁿ × ℝⁿ`
/// with `K` and `V` potentials of gradient fields.
#[derive(Clone, Debug)]
pub struct SeparableField {
    pub(crate) kinetic: GradField,
    pub(crate) potential: GradField,
}

impl SeparableField {
    pub fn new(kinetic: GradField, potential: GradField) -> Result<Self> {
        if kinetic.dim() != potential.dim() {
            return Err(Error::Incompatible(format!(
                "kinetic on R^{} and potential on R^{}",
                kinetic.dim(),
                potential.dim()
            )));
        }
        Ok(SeparableField { kinetic, potential })
    }

    pub fn half(&self) -> usize {
        self.kinetic.dim()
    }

    pub fn dim(&self) -> usize {
        2 * self.half()
    }

    pub fn kinetic(&self) -> &GradField {
        &self.kinetic
    }

    pub fn potential(&self) -> &GradField {
        &self.potential
    }

    pub fn hamiltonian(&self, z: &[f64]) -> f64 {
        let n = self.half();
        self.kinetic.potential(&z[n..]) + self.potential.potential(&z[..n])
    }

    pub(crate) fn kinetic_params(&self) -> usize {
        self.kinetic.n_params()
    }

    pub fn value(&self, z: &[f64]) -> Vec<f64> {
        let n = self.half();
        let mut out = self.kinetic.potential_gradient(&z[n..]);
        out.extend(self.potential.potential_gradient(&z[..n]).into_iter().map(|x| -x));
        out
    }

    pub fn jvp(&self, z: &[f64], dz: &[f64]) -> Vec<f64> {
        let n = self.half();
        let mut out = self.kinetic.potential_hvp(&z[n..], &dz[n..]);
        out.extend(self.potential.potential_hvp(&z[..n], &dz[..n]).into_iter().map(|x| -x));
        out
    }

    pub fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n = self.half();
        let (gk, gv) = grad.split_at_mut(self.kinetic_params());
        let dp = self.kinetic.gradient_backward(&z[n..], &w[..n], gk);
        let wq: Vec<f64> = w[n..].iter().map(|x| -x).collect();
        let mut dq = self.potential.gradient_backward(&z[..n], &wq, gv);
        dq.extend(dp);
        dq
    }

    pub fn bilinear_param_grad(&self, z: &[f64], dz: &[f64], w: &[f64], grad: &mut [f64]) {
        let n = self.half();
        let (gk, gv) = grad.split_at_mut(self.kinetic_params());
        self.kinetic.bilinear_with_sign(&z[n..], &dz[n..], &w[..n], 1.0, gk);
        self.potential.bilinear_with_sign(&z[..n], &dz[..n], &w[n..], -1.0, gv);
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.kinetic.lipschitz_bound().max(self.potential.lipschitz_bound())
    }
}

impl Parameterized for SeparableField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        self.kinetic.visit_params(f);
        self.potential.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.kinetic.visit_params_mut(f);
        self.potential.visit_params_mut(f);
    }
}
