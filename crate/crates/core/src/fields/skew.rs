//! Fields built from a state-dependent skew matrix `A(z) − A(z)ᵀ`, where the
//! strictly upper triangular `A(z)` is filled row by row from the output of a
//! one-hidden-layer net.

use crate::error::{Error, Result};
use crate::fields::{Activation, Mlp};
use crate::linalg::{self, Mat, Rng};
use crate::params::{GradSlots, Param, ParamMut, Parameterized, Weight};

/// Number of strictly upper triangular entries of an `n x n` matrix.
pub fn triangle_len(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// `(i, j, k)` for `i < j` with `k` the row-major position within the triangle.
fn upper_pairs(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).flat_map(move |i| ((i + 1)..n).map(move |j| (i, j))).enumerate().map(|(k, (i, j))| (i, j, k))
}

#[derive(Clone, Debug)]
pub enum SphereParam {
    /// `(A(z) − A(z)ᵀ) z`
    Skew { net: Mlp },
    /// `P(z) Bᵀ Σ(C z + d)` with `P(z) = I − z zᵀ/‖z‖²`.
    Projector { b: Weight, c: Weight, d: Vec<f64>, act: Activation },
}

/// Sphere-preserving field: `zᵀ X(z) = 0` for every `z`.
#[derive(Clone, Debug)]
pub struct SphereField {
    pub(crate) dim: usize,
    pub(crate) param: SphereParam,
}

impl SphereField {
    pub fn skew(dim: usize, net: Mlp) -> Result<Self> {
        if net.input_dim() != dim || net.output_dim() != triangle_len(dim) {
            return Err(Error::Incompatible(format!(
                "skew sphere field on R^{dim} needs a net {dim} -> {}, got {} -> {}",
                triangle_len(dim),
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(SphereField { dim, param: SphereParam::Skew { net } })
    }

    pub fn projector(b: Mat, c: Mat, d: Vec<f64>, act: Activation) -> Result<Self> {
        if b.shape() != c.shape() || d.len() != c.rows() {
            return Err(Error::Incompatible("projector sphere field needs B, C of equal shape m x n and |d| = m".into()));
        }
        let dim = c.cols();
        Ok(SphereField { dim, param: SphereParam::Projector { b: Weight::free(b), c: Weight::free(c), d, act } })
    }

    pub fn random_skew(dim: usize, hidden: usize, scale: f64, act: Activation, rng: &mut Rng) -> Self {
        let net = Mlp::random(dim, hidden, triangle_len(dim), scale, act, rng);
        SphereField { dim, param: SphereParam::Skew { net } }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parameterization(&self) -> &SphereParam {
        &self.param
    }

    pub fn value(&self, z: &[f64]) -> Vec<f64> {
        match &self.param {
            SphereParam::Skew { net } => skew_apply(&net.value(z), z),
            SphereParam::Projector { b, c, d, act } => {
                let u = b.get().tmatvec(&act.apply(&linalg::add(&c.get().matvec(z), d)));
                let q = linalg::dot(z, z);
                if q == 0.0 {
                    return u;
                }
                let s = linalg::dot(z, &u) / q;
                u.iter().zip(z).map(|(ui, zi)| ui - s * zi).collect()
            }
        }
    }

    pub fn jvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        match &self.param {
            SphereParam::Skew { net } => {
                let a = net.value(z);
                let da = net.jvp(z, v);
                let mut out = skew_apply(&da, z);
                linalg::axpy(&mut out, 1.0, &skew_apply(&a, v));
                out
            }
            SphereParam::Projector { b, c, d, act } => {
                let h = linalg::add(&c.get().matvec(z), d);
                let u = b.get().tmatvec(&act.apply(&h));
                let cv = c.get().matvec(v);
                let dh: Vec<f64> = h.iter().zip(&cv).map(|(&hi, x)| act.dsigma(hi) * x).collect();
                let du = b.get().tmatvec(&dh);
                let q = linalg::dot(z, z);
                if q == 0.0 {
                    return du;
                }
                let s = linalg::dot(z, &u);
                let ds = linalg::dot(v, &u) + linalg::dot(z, &du);
                let dq = 2.0 * linalg::dot(z, v);
                (0..self.dim)
                    .map(|i| du[i] - v[i] * s / q - z[i] * (ds / q - s * dq / (q * q)))
                    .collect()
            }
        }
    }

    pub fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        match &self.param {
            SphereParam::Skew { net } => {
                let a = net.value(z);
                let mut dz = skew_apply_transpose(&a, w);
                let mut da = vec![0.0; a.len()];
                for (i, j, k) in upper_pairs(self.dim) {
                    da[k] = w[i] * z[j] - w[j] * z[i];
                }
                linalg::axpy(&mut dz, 1.0, &net.backward(z, &da, grad));
                dz
            }
            SphereParam::Projector { b, c, d, act } => {
                let h = linalg::add(&c.get().matvec(z), d);
                let sig = act.apply(&h);
                let u = b.get().tmatvec(&sig);
                let q = linalg::dot(z, z);
                let (du, mut dz) = if q == 0.0 {
                    (w.to_vec(), vec![0.0; self.dim])
                } else {
                    let s = linalg::dot(z, &u);
                    let wz = linalg::dot(w, z);
                    let du: Vec<f64> = w.iter().zip(z).map(|(wi, zi)| wi - zi * wz / q).collect();
                    let dz: Vec<f64> = (0..self.dim)
                        .map(|i| -(s / q) * w[i] - wz * (u[i] / q - 2.0 * s * z[i] / (q * q)))
                        .collect();
                    (du, dz)
                };
                let mut slots = GradSlots::new(grad);
                let g_b = slots.take(b.len());
                let g_c = slots.take(c.len());
                let g_d = slots.take(d.len());
                slots.finish();
                linalg::add_outer(g_b, 1.0, &sig, &du);
                let dsig = b.get().matvec(&du);
                let dh: Vec<f64> = dsig.iter().zip(&h).map(|(g, &hi)| g * act.dsigma(hi)).collect();
                linalg::add_outer(g_c, 1.0, &dh, z);
                linalg::axpy(g_d, 1.0, &dh);
                linalg::axpy(&mut dz, 1.0, &c.get().tmatvec(&dh));
                dz
            }
        }
    }
}

/// `(A − Aᵀ) z` for strictly upper triangular `A` given by its entries.
fn skew_apply(a: &[f64], z: &[f64]) -> Vec<f64> {
    let n = z.len();
    let mut out = vec![0.0; n];
    for (i, j, k) in upper_pairs(n) {
        out[i] += a[k] * z[j];
        out[j] -= a[k] * z[i];
    }
    out
}

/// `(A − Aᵀ)ᵀ w = −(A − Aᵀ) w`
fn skew_apply_transpose(a: &[f64], w: &[f64]) -> Vec<f64> {
    linalg::scaled(&skew_apply(a, w), -1.0)
}

impl Parameterized for SphereField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        match &self.param {
            SphereParam::Skew { net } => net.visit_params(f),
            SphereParam::Projector { b, c, d, .. } => {
                f(Param::Weight(b));
                f(Param::Weight(c));
                f(Param::Values(d));
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        match &mut self.param {
            SphereParam::Skew { net } => net.visit_params_mut(f),
            SphereParam::Projector { b, c, d, .. } => {
                f(ParamMut::Weight(b));
                f(ParamMut::Weight(c));
                f(ParamMut::Values(d));
            }
        }
    }
}

/// Mass-preserving field `(A(y) − A(y)ᵀ) 𝟏`; `𝟏ᵀ X(y) = 0`.
#[derive(Clone, Debug)]
pub struct MassField {
    pub(crate) dim: usize,
    pub(crate) net: Mlp,
}

impl MassField {
    pub fn new(dim: usize, net: Mlp) -> Result<Self> {
        if net.input_dim() != dim || net.output_dim() != triangle_len(dim) {
            return Err(Error::Incompatible(format!(
                "mass field on R^{dim} needs a net {dim} -> {}, got {} -> {}",
                triangle_len(dim),
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(MassField { dim, net })
    }

    pub fn random(dim: usize, hidden: usize, scale: f64, act: Activation, rng: &mut Rng) -> Self {
        MassField { dim, net: Mlp::random(dim, hidden, triangle_len(dim), scale, act, rng) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    fn spread(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, j, k) in upper_pairs(self.dim) {
            out[i] += a[k];
            out[j] -= a[k];
        }
        out
    }

    fn gather(&self, w: &[f64]) -> Vec<f64> {
        let mut da = vec![0.0; triangle_len(self.dim)];
        for (i, j, k) in upper_pairs(self.dim) {
            da[k] = w[i] - w[j];
        }
        da
    }

    pub fn value(&self, y: &[f64]) -> Vec<f64> {
        self.spread(&self.net.value(y))
    }

    pub fn jvp(&self, y: &[f64], v: &[f64]) -> Vec<f64> {
        self.spread(&self.net.jvp(y, v))
    }

    pub fn backward(&self, y: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        self.net.backward(y, &self.gather(w), grad)
    }

    pub fn bilinear_param_grad(&self, y: &[f64], v: &[f64], w: &[f64], grad: &mut [f64]) {
        self.net.bilinear_param_grad(y, v, &self.gather(w), grad)
    }

    /// The spreading map has norm `√n` (incidence matrix of the complete graph).
    pub fn lipschitz_bound(&self) -> f64 {
        (self.dim as f64).sqrt() * self.net.lipschitz_bound()
    }
}

impl Parameterized for MassField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        self.net.visit_params(f)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        self.net.visit_params_mut(f)
    }
}
