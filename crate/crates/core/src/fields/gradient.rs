use crate::error::{Error, Result};
use crate::fields::Activation;
use crate::linalg::{self, Mat, Rng};
use crate::params::{GradSlots, Param, ParamMut, Parameterized, Weight};

/// Gradient field `sign · Aᵀ diag(α) Σ(A z + b) = sign · ∇V(z)` with
/// potential `V(z) = αᵀ Γ(A z + b)`.
///
/// With `sign = −1`, `α ≥ 0` and `A` orthogonal the field is one-sided
/// Lipschitz with constant `−a·min(α)`.
#[derive(Clone, Debug)]
pub struct GradField {
    pub(crate) a: Weight,
    pub(crate) b: Vec<f64>,
    pub(crate) alpha: Vec<f64>,
    pub(crate) sign: f64,
    pub(crate) train_alpha: bool,
    /// Keep `α ≥ 0` under training (the expansive/contractive halves of a split).
    pub(crate) alpha_nonneg: bool,
    pub(crate) act: Activation,
}

impl GradField {
    pub fn new(a: Weight, b: Vec<f64>, alpha: Vec<f64>, sign: f64, act: Activation) -> Result<Self> {
        if b.len() != a.rows() || alpha.len() != a.rows() {
            return Err(Error::Incompatible(format!(
                "gradient field with A {}x{}, |b| = {}, |α| = {}",
                a.rows(),
                a.cols(),
                b.len(),
                alpha.len()
            )));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidArgument(format!("sign must be ±1, got {sign}")));
        }
        Ok(GradField { a, b, alpha, sign, train_alpha: true, alpha_nonneg: false, act })
    }

    /// Contractive member of the `−AᵀΣ(Ax+b)` family with orthogonal `A = expm(W−Wᵀ)` and `α = 𝟏` frozen.
    pub fn contractive_orthogonal(n: usize, act: Activation, rng: &mut Rng) -> Self {
        Self::orthogonal_unit(n, -1.0, act, rng)
    }

    /// Expansive `+QᵀΣ(Qx+q)` with orthogonal `Q` and `α = 𝟏` frozen.
    pub fn expansive_orthogonal(n: usize, act: Activation, rng: &mut Rng) -> Self {
        Self::orthogonal_unit(n, 1.0, act, rng)
    }

    fn orthogonal_unit(n: usize, sign: f64, act: Activation, rng: &mut Rng) -> Self {
        let a = Weight::orthogonal(Mat::randn(n, n, 0.5, rng)).expect("square");
        let b = linalg::randn(rng, n).into_iter().map(|v| 0.1 * v).collect();
        GradField { a, b, alpha: vec![1.0; n], sign, train_alpha: false, alpha_nonneg: false, act }
    }

    /// Free weights, `α` uniform in `[−1, 1]`.
    pub fn random(n: usize, width: usize, sign: f64, act: Activation, rng: &mut Rng) -> Self {
        use rand::Rng as _;
        let a = Weight::free(Mat::randn(width, n, 1.0 / (n as f64).sqrt(), rng));
        let b = linalg::randn(rng, width).into_iter().map(|v| 0.5 * v).collect();
        let alpha = (0..width).map(|_| rng.random_range(-1.0..=1.0)).collect();
        GradField { a, b, alpha, sign, train_alpha: true, alpha_nonneg: false, act }
    }

    pub fn with_alpha_frozen(mut self) -> Self {
        self.train_alpha = false;
        self
    }

    /// Split `∇Ũ = Aᵀdiag(α)Σ(Az+b)` into an expansive part (`α⁺`, sign +1)
    /// and a contractive part (`α⁻`, sign −1) using positive homogeneity of `σ`.
    pub fn split_signs(&self) -> (GradField, GradField) {
        let pos: Vec<f64> = self.alpha.iter().map(|&v| (self.sign * v).max(0.0)).collect();
        let neg: Vec<f64> = self.alpha.iter().map(|&v| -(self.sign * v).min(0.0)).collect();
        let mut expansive = self.clone();
        expansive.alpha = pos;
        expansive.sign = 1.0;
        expansive.alpha_nonneg = true;
        let mut contractive = self.clone();
        contractive.alpha = neg;
        contractive.sign = -1.0;
        contractive.alpha_nonneg = true;
        (expansive, contractive)
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn width(&self) -> usize {
        self.a.rows()
    }

    pub fn weight(&self) -> &Weight {
        &self.a
    }

    pub fn matrix(&self) -> &Mat {
        self.a.get()
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn alpha_trainable(&self) -> bool {
        self.train_alpha
    }

    pub fn alpha_nonneg(&self) -> bool {
        self.alpha_nonneg
    }

    pub(crate) fn clamp_alpha(&mut self) {
        if self.alpha_nonneg {
            self.alpha.iter_mut().for_each(|a| *a = a.max(0.0));
        }
    }

    fn pre(&self, z: &[f64]) -> Vec<f64> {
        linalg::add(&self.a.get().matvec(z), &self.b)
    }

    /// `V(z) = αᵀΓ(Az+b)`
    pub fn potential(&self, z: &[f64]) -> f64 {
        self.pre(z).iter().zip(&self.alpha).map(|(&h, &al)| al * self.act.gamma(h)).sum()
    }

    /// `∇V(z)`, independent of `sign`.
    pub fn potential_gradient(&self, z: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.pre(z).iter().zip(&self.alpha).map(|(&h, &al)| al * self.act.sigma(h)).collect();
        self.a.get().tmatvec(&r)
    }

    /// `∇²V(z) v`
    pub fn potential_hvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let av = self.a.get().matvec(v);
        let r: Vec<f64> = self
            .pre(z)
            .iter()
            .zip(&self.alpha)
            .zip(&av)
            .map(|((&h, &al), &x)| al * self.act.dsigma(h) * x)
            .collect();
        self.a.get().tmatvec(&r)
    }

    pub fn value(&self, z: &[f64]) -> Vec<f64> {
        linalg::scaled(&self.potential_gradient(z), self.sign)
    }

    pub fn jvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        linalg::scaled(&self.potential_hvp(z, v), self.sign)
    }

    pub fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        self.gradient_backward(z, &linalg::scaled(w, self.sign), grad)
    }

    /// Reverse mode of `z ↦ ∇V(z)` (unsigned).
    pub fn gradient_backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let pre = self.pre(z);
        let s = self.act.apply(&pre);
        let r: Vec<f64> = s.iter().zip(&self.alpha).map(|(a, b)| a * b).collect();
        let (g_a, g_b, g_alpha) = self.slots(grad);
        linalg::add_outer(g_a, 1.0, &r, w);
        let dr = self.a.get().matvec(w);
        if let Some(g_alpha) = g_alpha {
            g_alpha.iter_mut().zip(dr.iter().zip(&s)).for_each(|(g, (d, s))| *g += d * s);
        }
        let dh: Vec<f64> = dr
            .iter()
            .zip(&pre)
            .zip(&self.alpha)
            .map(|((d, &h), al)| d * al * self.act.dsigma(h))
            .collect();
        linalg::add_outer(g_a, 1.0, &dh, z);
        linalg::axpy(g_b, 1.0, &dh);
        self.a.get().tmatvec(&dh)
    }

    /// Accumulates `scale · ∂V/∂θ` and returns `scale · ∇V(z)`.
    pub fn potential_backward(&self, z: &[f64], scale: f64, grad: &mut [f64]) -> Vec<f64> {
        let pre = self.pre(z);
        let (g_a, g_b, g_alpha) = self.slots(grad);
        let r: Vec<f64> = pre.iter().zip(&self.alpha).map(|(&h, &al)| scale * al * self.act.sigma(h)).collect();
        linalg::add_outer(g_a, 1.0, &r, z);
        linalg::axpy(g_b, 1.0, &r);
        if let Some(g_alpha) = g_alpha {
            g_alpha.iter_mut().zip(&pre).for_each(|(g, &h)| *g += scale * self.act.gamma(h));
        }
        self.a.get().tmatvec(&r)
    }

    /// Accumulates `∂θ [wᵀ J(z) v]` with the activation pattern frozen.
    pub fn bilinear_param_grad(&self, z: &[f64], v: &[f64], w: &[f64], grad: &mut [f64]) {
        self.bilinear_with_sign(z, v, w, self.sign, grad)
    }

    pub(crate) fn bilinear_with_sign(&self, z: &[f64], v: &[f64], w: &[f64], s: f64, grad: &mut [f64]) {
        let d = self.act.derivative(&self.pre(z));
        let av = self.a.get().matvec(v);
        let aw = self.a.get().matvec(w);
        let (g_a, _g_b, g_alpha) = self.slots(grad);
        let dav: Vec<f64> = (0..d.len()).map(|i| self.alpha[i] * d[i] * av[i]).collect();
        let daw: Vec<f64> = (0..d.len()).map(|i| self.alpha[i] * d[i] * aw[i]).collect();
        linalg::add_outer(g_a, s, &dav, w);
        linalg::add_outer(g_a, s, &daw, v);
        if let Some(g_alpha) = g_alpha {
            for i in 0..d.len() {
                g_alpha[i] += s * aw[i] * d[i] * av[i];
            }
        }
    }

    fn slots<'g>(&self, grad: &'g mut [f64]) -> (&'g mut [f64], &'g mut [f64], Option<&'g mut [f64]>) {
        let mut slots = GradSlots::new(grad);
        let g_a = slots.take(self.a.len());
        let g_b = slots.take(self.b.len());
        let g_alpha = if self.train_alpha { Some(slots.take(self.alpha.len())) } else { None };
        slots.finish();
        (g_a, g_b, g_alpha)
    }

    pub fn lipschitz_bound(&self) -> f64 {
        let amax = self.alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let s = linalg::singular_value_range(self.a.get()).1;
        amax * s * s
    }
}

impl Parameterized for GradField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        f(Param::Weight(&self.a));
        f(Param::Values(&self.b));
        if self.train_alpha {
            f(Param::Values(&self.alpha));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut::Weight(&mut self.a));
        f(ParamMut::Values(&mut self.b));
        if self.train_alpha {
            f(ParamMut::Values(&mut self.alpha));
        }
    }
}

/// `Σ(A z + b)` with square `A`; the non-gradient member used for expansive layers.
#[derive(Clone, Debug)]
pub struct ActivationField {
    pub(crate) a: Weight,
    pub(crate) b: Vec<f64>,
    pub(crate) act: Activation,
}

impl ActivationField {
    pub fn new(a: Weight, b: Vec<f64>, act: Activation) -> Result<Self> {
        if a.rows() != a.cols() || b.len() != a.rows() {
            return Err(Error::Incompatible(format!(
                "activation field needs square A and matching bias, got {}x{} and {}",
                a.rows(),
                a.cols(),
                b.len()
            )));
        }
        Ok(ActivationField { a, b, act })
    }

    pub fn orthogonal(n: usize, act: Activation, rng: &mut Rng) -> Self {
        let a = Weight::orthogonal(Mat::randn(n, n, 0.5, rng)).expect("square");
        let b = linalg::randn(rng, n).into_iter().map(|v| 0.1 * v).collect();
        ActivationField { a, b, act }
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn matrix(&self) -> &Mat {
        self.a.get()
    }

    pub fn weight(&self) -> &Weight {
        &self.a
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    fn pre(&self, z: &[f64]) -> Vec<f64> {
        linalg::add(&self.a.get().matvec(z), &self.b)
    }

    pub fn value(&self, z: &[f64]) -> Vec<f64> {
        self.act.apply(&self.pre(z))
    }

    pub fn jvp(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let av = self.a.get().matvec(v);
        self.pre(z).iter().zip(&av).map(|(&h, x)| self.act.dsigma(h) * x).collect()
    }

    pub fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let dh: Vec<f64> = self.pre(z).iter().zip(w).map(|(&h, x)| self.act.dsigma(h) * x).collect();
        let mut slots = GradSlots::new(grad);
        let g_a = slots.take(self.a.len());
        let g_b = slots.take(self.b.len());
        slots.finish();
        linalg::add_outer(g_a, 1.0, &dh, z);
        linalg::axpy(g_b, 1.0, &dh);
        self.a.get().tmatvec(&dh)
    }

    pub fn bilinear_param_grad(&self, z: &[f64], v: &[f64], w: &[f64], grad: &mut [f64]) {
        let dw: Vec<f64> = self.pre(z).iter().zip(w).map(|(&h, x)| self.act.dsigma(h) * x).collect();
        let g_a = &mut grad[..self.a.len()];
        linalg::add_outer(g_a, 1.0, &dw, v);
    }

    pub fn lipschitz_bound(&self) -> f64 {
        linalg::singular_value_range(self.a.get()).1
    }
}

impl Parameterized for ActivationField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        f(Param::Weight(&self.a));
        f(Param::Values(&self.b));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut::Weight(&mut self.a));
        f(ParamMut::Values(&mut self.b));
    }
}

/// `z ↦ B z`
#[derive(Clone, Debug)]
pub struct LinearField {
    pub(crate) b: Weight,
}

impl LinearField {
    pub fn new(b: Mat) -> Result<Self> {
        if !b.is_square() {
            return Err(Error::NotSquare { rows: b.rows(), cols: b.cols() });
        }
        Ok(LinearField { b: Weight::free(b) })
    }

    pub fn matrix(&self) -> &Mat {
        self.b.get()
    }

    pub fn dim(&self) -> usize {
        self.b.cols()
    }

    pub fn value(&self, z: &[f64]) -> Vec<f64> {
        self.b.get().matvec(z)
    }

    pub fn jvp(&self, _z: &[f64], v: &[f64]) -> Vec<f64> {
        self.b.get().matvec(v)
    }

    pub fn backward(&self, z: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        linalg::add_outer(grad, 1.0, w, z);
        self.b.get().tmatvec(w)
    }

    pub fn bilinear_param_grad(&self, _z: &[f64], v: &[f64], w: &[f64], grad: &mut [f64]) {
        linalg::add_outer(grad, 1.0, w, v);
    }

    pub fn lipschitz_bound(&self) -> f64 {
        linalg::singular_value_range(self.b.get()).1
    }
}

impl Parameterized for LinearField {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        f(Param::Weight(&self.b));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        f(ParamMut::Weight(&mut self.b));
    }
}
