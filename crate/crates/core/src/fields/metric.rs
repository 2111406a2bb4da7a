use crate::error::{Error, Result};
use crate::fields::Activation;
use crate::linalg::{self, Mat};
use crate::params::{GradSlots, Param, ParamMut, Parameterized, Weight};

/// `−Wᵀ Σ(M W z + b)` with a fixed symmetric positive definite `M`.
///
/// `M` is a modelling choice, not a trained parameter.
#[derive(Clone, Debug)]
pub struct MetricField {
    pub(crate) w: Weight,
    pub(crate) b: Vec<f64>,
    pub(crate) m: Mat,
    pub(crate) act: Activation,
}

impl MetricField {
    pub fn new(w: Mat, b: Vec<f64>, m: Mat, act: Activation) -> Result<Self> {
        if !m.is_square() || m.rows() != w.rows() || b.len() != w.rows() {
            return Err(Error::Incompatible(format!(
                "metric field with W {:?}, M {:?}, |b| = {}",
                w.shape(),
                m.shape(),
                b.len()
            )));
        }
        let asym = m.sub(&m.transpose()).norm_max();
        if asym > 1e-12 * (1.0 + m.norm_max()) {
            return Err(Error::InvalidArgument(format!("metric M is not symmetric (asymmetry {asym:e})")));
        }
        let lmin = linalg::sym_eigenvalues(&m)?[0];
        if lmin <= 0.0 {
            return Err(Error::InvalidArgument(format!("metric M is not positive definite (λ_min = {lmin:e})")));
        }
        Ok(MetricField { w: Weight::free(w), b, m, act })
    }

    pub fn dim(&self) -> usize {
        self.w.cols()
    }

    pub fn weight(&self) -> &Mat {
        self.w.get()
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn metric(&self) -> &Mat {
        &self.m
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    fn pre(&self, z: &[f64]) -> Vec<f64> {
        linalg::add(&self.m.matvec(&self.w.get().matvec(z)), &self.b)
    }

    pub fn value(&self, z: &[f64]) -> Vec<f64> {
        linalg::scaled(&self.w.get().tmatvec(&self.act.apply(&self.pre(z))), -1.0)
    }

    pub fn jvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let mwv = self.m.matvec(&self.w.get().matvec(v));
        let d: Vec<f64> = self.pre(z).iter().zip(&mwv).map(|(&h, x)| self.act.dsigma(h) * x).collect();
        linalg::scaled(&self.w.get().tmatvec(&d), -1.0)
    }

    pub fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let h = self.pre(z);
        let s = self.act.apply(&h);
        let mut slots = GradSlots::new(grad);
        let g_w = slots.take(self.w.len());
        let g_b = slots.take(self.b.len());
        slots.finish();
        linalg::add_outer(g_w, -1.0, &s, w);
        let ds = linalg::scaled(&self.w.get().matvec(w), -1.0);
        let dh: Vec<f64> = ds.iter().zip(&h).map(|(g, &x)| g * self.act.dsigma(x)).collect();
        let mdh = self.m.tmatvec(&dh);
        linalg::add_outer(g_w, 1.0, &mdh, z);
        linalg::axpy(g_b, 1.0, &dh);
        self.w.get().tmatvec(&mdh)
    }

    pub fn bilinear_param_grad(&self, z: &[f64], v: &[f64], w: &[f64], grad: &mut [f64]) {
        // wᵀJv = −(Ww)ᵀ D M (Wv)
        let d = self.act.derivative(&self.pre(z));
        let ww = self.w.get().matvec(w);
        let wv = self.w.get().matvec(v);
        let dmwv: Vec<f64> = d.iter().zip(self.m.matvec(&wv)).map(|(a, b)| a * b).collect();
        let dww: Vec<f64> = d.iter().zip(&ww).map(|(a, b)| a * b).collect();
        let mdww = self.m.tmatvec(&dww);
        let g_w = &mut grad[..self.w.len()];
        linalg::add_outer(g_w, -1.0, &dmwv, w);
        linalg::add_outer(g_w, -1.0, &mdww, v);
    }

    pub fn lipschitz_bound(&self) -> f64 {
        let s = linalg::singular_value_range(self.w.get()).1;
        s * s * linalg::singular_value_range(&self.m).1
    }
}

impl Parameterized for MetricField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        f(Param::Weight(&self.w));
        f(Param::Values(&self.b));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut::Weight(&mut self.w));
        f(ParamMut::Values(&mut self.b));
    }
}
