use crate::fields::Activation;
use crate::linalg::{self, Mat, Rng};
use crate::params::{GradSlots, Param, ParamMut, Parameterized, Weight};

/// One-hidden-layer map `z ↦ B Σ(C z + c)`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub(crate) outer: Weight,
    pub(crate) inner: Weight,
    pub(crate) bias: Vec<f64>,
    pub(crate) act: Activation,
}

impl Mlp {
    pub fn new(outer: Mat, inner: Mat, bias: Vec<f64>, act: Activation) -> crate::Result<Self> {
        if outer.cols() != inner.rows() || bias.len() != inner.rows() {
            return Err(crate::Error::Incompatible(format!(
                "mlp shapes {:?} / {:?} / bias {}",
                outer.shape(),
                inner.shape(),
                bias.len()
            )));
        }
        Ok(Mlp { outer: Weight::free(outer), inner: Weight::free(inner), bias, act })
    }

    pub fn random(input: usize, hidden: usize, output: usize, scale: f64, act: Activation, rng: &mut Rng) -> Self {
        let inner = Mat::randn(hidden, input, 1.0 / (input as f64).sqrt(), rng);
        let outer = Mat::randn(output, hidden, scale / (hidden as f64).sqrt(), rng);
        let bias = linalg::randn(rng, hidden).into_iter().map(|v| 0.5 * v).collect();
        Mlp { outer: Weight::free(outer), inner: Weight::free(inner), bias, act }
    }

    pub fn input_dim(&self) -> usize {
        self.inner.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.outer.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.inner.rows()
    }

    pub fn outer(&self) -> &Mat {
        self.outer.get()
    }

    pub fn inner(&self) -> &Mat {
        self.inner.get()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    fn pre(&self, z: &[f64]) -> Vec<f64> {
        linalg::add(&self.inner.get().matvec(z), &self.bias)
    }

    pub fn value(&self, z: &[f64]) -> Vec<f64> {
        self.outer.get().matvec(&self.act.apply(&self.pre(z)))
    }

    pub fn jvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let d = self.act.derivative(&self.pre(z));
        let cv = self.inner.get().matvec(v);
        let dc: Vec<f64> = d.iter().zip(&cv).map(|(a, b)| a * b).collect();
        self.outer.get().matvec(&dc)
    }

    /// Accumulates `wᵀ ∂out/∂θ` into `grad` and returns `wᵀ ∂out/∂z`.
    pub fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let pre = self.pre(z);
        let s = self.act.apply(&pre);
        let mut slots = GradSlots::new(grad);
        let g_outer = slots.take(self.outer.len());
        let g_inner = slots.take(self.inner.len());
        let g_bias = slots.take(self.bias.len());
        slots.finish();
        linalg::add_outer(g_outer, 1.0, w, &s);
        let ds = self.outer.get().tmatvec(w);
        let dh: Vec<f64> = ds.iter().zip(&pre).map(|(g, &h)| g * self.act.dsigma(h)).collect();
        linalg::add_outer(g_inner, 1.0, &dh, z);
        linalg::axpy(g_bias, 1.0, &dh);
        self.inner.get().tmatvec(&dh)
    }

    /// Accumulates `∂θ [wᵀ J(z) v]` with the activation pattern held fixed.
    pub fn bilinear_param_grad(&self, z: &[f64], v: &[f64], w: &[f64], grad: &mut [f64]) {
        let d = self.act.derivative(&self.pre(z));
        let cv = self.inner.get().matvec(v);
        let dcv: Vec<f64> = d.iter().zip(&cv).map(|(a, b)| a * b).collect();
        let btw = self.outer.get().tmatvec(w);
        let dbtw: Vec<f64> = d.iter().zip(&btw).map(|(a, b)| a * b).collect();
        let mut slots = GradSlots::new(grad);
        let g_outer = slots.take(self.outer.len());
        let g_inner = slots.take(self.inner.len());
        let _ = slots.take(self.bias.len());
        slots.finish();
        linalg::add_outer(g_outer, 1.0, w, &dcv);
        linalg::add_outer(g_inner, 1.0, &dbtw, v);
    }

    pub fn lipschitz_bound(&self) -> f64 {
        linalg::singular_value_range(self.outer.get()).1 * linalg::singular_value_range(self.inner.get()).1
    }
}

impl Parameterized for Mlp {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        f(Param::Weight(&self.outer));
        f(Param::Weight(&self.inner));
        f(Param::Values(&self.bias));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut::Weight(&mut self.outer));
        f(ParamMut::Weight(&mut self.inner));
        f(ParamMut::Values(&mut self.bias));
    }
}
