//! One-step discrete flow maps used as network layers.
//!
//! Every scheme has a forward map and a reverse-mode rule returning the
//! state cotangent and the derivative with respect to the step size, while
//! accumulating parameter gradients of the underlying field.

use crate::error::{check_dim, Error, Result};
use crate::fields::{GradField, VectorField};
use crate::linalg::{self, Mat};
use crate::params::Parameterized;

#[derive(Clone, Debug, PartialEq)]
pub enum Scheme {
    ExplicitEuler,
    /// Requires a separable Hamiltonian field.
    SymplecticEuler,
    /// Shear `q += h g(p)` (kind 1) or `p += h g(q)` (kind 2) for a gradient field `g` on `ℝⁿ`,
    /// acting on `(q, p) ∈ ℝ²ⁿ`.
    GradientModule(u8),
    /// Requires a volume split field.
    SplitVolume,
    /// Heun's method followed by renormalization; requires a sphere field.
    EulerHeunNorm,
    /// Implicit discrete gradient step; requires a gradient field.
    GonzalezDg,
    Substeps { count: usize, inner: Box<Scheme> },
}

impl Scheme {
    pub fn substeps(count: usize, inner: Scheme) -> Scheme {
        Scheme::Substeps { count, inner: Box::new(inner) }
    }

    pub fn name(&self) -> String {
        match self {
            Scheme::ExplicitEuler => "euler".into(),
            Scheme::SymplecticEuler => "symplectic_euler".into(),
            Scheme::GradientModule(k) => format!("gradient_module{k}"),
            Scheme::SplitVolume => "split_volume".into(),
            Scheme::EulerHeunNorm => "euler_heun_norm".into(),
            Scheme::GonzalezDg => "gonzalez".into(),
            Scheme::Substeps { count, inner } => format!("substeps{count}:{}", inner.name()),
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        if let Some(rest) = s.strip_prefix("substeps") {
            let (count, inner) = rest
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("bad scheme '{s}'")))?;
            let count = count.parse().map_err(|_| Error::InvalidArgument(format!("bad substep count in '{s}'")))?;
            return Ok(Scheme::substeps(count, Scheme::parse(inner)?));
        }
        Ok(match s {
            "euler" => Scheme::ExplicitEuler,
            "symplectic_euler" => Scheme::SymplecticEuler,
            "gradient_module1" => Scheme::GradientModule(1),
            "gradient_module2" => Scheme::GradientModule(2),
            "split_volume" => Scheme::SplitVolume,
            "euler_heun_norm" => Scheme::EulerHeunNorm,
            "gonzalez" => Scheme::GonzalezDg,
            _ => return Err(Error::InvalidArgument(format!("unknown scheme '{s}'"))),
        })
    }

    /// Innermost scheme and the total substep multiplicity.
    pub fn base(&self) -> (&Scheme, usize) {
        match self {
            Scheme::Substeps { count, inner } => {
                let (b, c) = inner.base();
                (b, c * count)
            }
            s => (s, 1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowStep {
    pub(crate) field: VectorField,
    pub(crate) h: f64,
    pub(crate) scheme: Scheme,
}

impl FlowStep {
    pub fn new(field: VectorField, h: f64, scheme: Scheme) -> Result<Self> {
        if !h.is_finite() || h < 0.0 {
            return Err(Error::InvalidArgument(format!("step size must be finite and ≥ 0, got {h}")));
        }
        check_compat(&field, &scheme)?;
        Ok(FlowStep { field, h, scheme })
    }

    pub fn euler(field: impl Into<VectorField>, h: f64) -> Result<Self> {
        Self::new(field.into(), h, Scheme::ExplicitEuler)
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn field_mut(&mut self) -> &mut VectorField {
        &mut self.field
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn set_h(&mut self, h: f64) {
        self.h = h;
    }

    /// Dimension of the state the step acts on.
    pub fn dim(&self) -> usize {
        match self.scheme.base().0 {
            Scheme::GradientModule(_) => 2 * self.field.dim(),
            _ => self.field.dim(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply_with(x, self.h)
    }

    pub fn apply_with(&self, x: &[f64], h: f64) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        forward(&self.field, &self.scheme, h, x)
    }

    /// Returns `(wᵀ ∂y/∂x, wᵀ ∂y/∂h)` and accumulates `wᵀ ∂y/∂θ` into `grad`.
    pub fn backward(&self, x: &[f64], h: f64, w: &[f64], grad: &mut [f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), w.len())?;
        check_dim(self.field.n_params(), grad.len())?;
        backward(&self.field, &self.scheme, h, x, w, grad)
    }

    /// Inverse map for the shear-type schemes.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y.len())?;
        inverse(&self.field, &self.scheme, self.h, y)
    }
}

fn check_compat(field: &VectorField, scheme: &Scheme) -> Result<()> {
    let bad = |what: &str| Err(Error::Incompatible(format!("{} requires {what}, got {}", scheme.name(), field.kind_name())));
    match scheme {
        Scheme::ExplicitEuler => Ok(()),
        Scheme::SymplecticEuler => match field {
            VectorField::Separable(_) => Ok(()),
            _ => bad("a separable field"),
        },
        Scheme::GradientModule(k) => {
            if *k != 1 && *k != 2 {
                return Err(Error::InvalidArgument(format!("gradient module kind must be 1 or 2, got {k}")));
            }
            match field {
                VectorField::Grad(_) => Ok(()),
                _ => bad("a gradient field"),
            }
        }
        Scheme::SplitVolume => match field {
            VectorField::VolumeSplit(_) => Ok(()),
            _ => bad("a volume split field"),
        },
        Scheme::EulerHeunNorm => match field {
            VectorField::Sphere(_) => Ok(()),
            _ => bad("a sphere field"),
        },
        Scheme::GonzalezDg => match field {
            VectorField::Grad(_) => Ok(()),
            _ => bad("a gradient field"),
        },
        Scheme::Substeps { count, inner } => {
            if *count == 0 {
                return Err(Error::InvalidArgument("substep count must be ≥ 1".into()));
            }
            check_compat(field, inner)
        }
    }
}

fn as_grad(f: &VectorField) -> &GradField {
    match f {
        VectorField::Grad(g) => g,
        _ => unreachable!("checked at construction"),
    }
}

pub(crate) fn forward(field: &VectorField, scheme: &Scheme, h: f64, x: &[f64]) -> Result<Vec<f64>> {
    Ok(match scheme {
        Scheme::ExplicitEuler => {
            let mut y = x.to_vec();
            linalg::axpy(&mut y, h, &field.value(x));
            y
        }
        Scheme::SymplecticEuler => {
            let VectorField::Separable(f) = field else { unreachable!() };
            let n = f.half();
            let (q, p) = x.split_at(n);
            let mut q1 = q.to_vec();
            linalg::axpy(&mut q1, h, &f.kinetic().potential_gradient(p));
            let mut p1 = p.to_vec();
            linalg::axpy(&mut p1, -h, &f.potential().potential_gradient(&q1));
            q1.extend(p1);
            q1
        }
        Scheme::GradientModule(kind) => {
            let g = as_grad(field);
            let n = g.dim();
            let mut y = x.to_vec();
            let (src, dst) = if *kind == 1 { (n, 0) } else { (0, n) };
            let v = g.value(&x[src..src + n]);
            linalg::axpy(&mut y[dst..dst + n], h, &v);
            y
        }
        Scheme::SplitVolume => {
            let VectorField::VolumeSplit(f) = field else { unreachable!() };
            let m = f.half();
            let mut y = x.to_vec();
            let u = f.u().value(&x[m..]);
            linalg::axpy(&mut y[..m], h, &u);
            let v = f.v().value(&y[..m]);
            linalg::axpy(&mut y[m..], h, &v);
            y
        }
        Scheme::EulerHeunNorm => heun_norm(field, h, x).out,
        Scheme::GonzalezDg => {
            let g = as_grad(field);
            let mut guess = x.to_vec();
            linalg::axpy(&mut guess, h, &g.value(x));
            gonzalez_solve(g, h, x, &guess)?
        }
        Scheme::Substeps { count, inner } => {
            let hs = h / *count as f64;
            let mut y = x.to_vec();
            for _ in 0..*count {
                y = forward(field, inner, hs, &y)?;
            }
            y
        }
    })
}

pub(crate) fn backward(
    field: &VectorField,
    scheme: &Scheme,
    h: f64,
    x: &[f64],
    w: &[f64],
    grad: &mut [f64],
) -> Result<(Vec<f64>, f64)> {
    Ok(match scheme {
        Scheme::ExplicitEuler => {
            let dh = linalg::dot(w, &field.value(x));
            let mut dx = w.to_vec();
            linalg::axpy(&mut dx, 1.0, &field.backward(x, &linalg::scaled(w, h), grad));
            (dx, dh)
        }
        Scheme::SymplecticEuler => {
            let VectorField::Separable(f) = field else { unreachable!() };
            let n = f.half();
            let (q, p) = x.split_at(n);
            let (wq, wp) = w.split_at(n);
            let gk = f.kinetic().potential_gradient(p);
            let mut q1 = q.to_vec();
            linalg::axpy(&mut q1, h, &gk);
            let (grad_k, grad_v) = grad.split_at_mut(f.kinetic_params());
            // p1 = p − h ∇V(q1)
            let mut dh = -linalg::dot(wp, &f.potential().potential_gradient(&q1));
            let mut dq1 = wq.to_vec();
            linalg::axpy(&mut dq1, 1.0, &f.potential().gradient_backward(&q1, &linalg::scaled(wp, -h), grad_v));
            // q1 = q + h ∇K(p)
            dh += linalg::dot(&dq1, &gk);
            let mut dp = wp.to_vec();
            linalg::axpy(&mut dp, 1.0, &f.kinetic().gradient_backward(p, &linalg::scaled(&dq1, h), grad_k));
            dq1.extend(dp);
            (dq1, dh)
        }
        Scheme::GradientModule(kind) => {
            let g = as_grad(field);
            let n = g.dim();
            let (src, dst) = if *kind == 1 { (n, 0) } else { (0, n) };
            let xs = &x[src..src + n];
            let wd = &w[dst..dst + n];
            let dh = linalg::dot(wd, &g.value(xs));
            let mut dx = w.to_vec();
            let ds = g.backward(xs, &linalg::scaled(wd, h), grad);
            linalg::axpy(&mut dx[src..src + n], 1.0, &ds);
            (dx, dh)
        }
        Scheme::SplitVolume => {
            let VectorField::VolumeSplit(f) = field else { unreachable!() };
            let m = f.half();
            let (grad_u, grad_v) = grad.split_at_mut(f.u_params());
            let u = f.u().value(&x[m..]);
            let mut y1 = x[..m].to_vec();
            linalg::axpy(&mut y1, h, &u);
            let (w1, w2) = w.split_at(m);
            let mut dh = linalg::dot(w2, &f.v().value(&y1));
            let mut dy1 = w1.to_vec();
            linalg::axpy(&mut dy1, 1.0, &f.v().backward(&y1, &linalg::scaled(w2, h), grad_v));
            dh += linalg::dot(&dy1, &u);
            let mut dz2 = w2.to_vec();
            linalg::axpy(&mut dz2, 1.0, &f.u().backward(&x[m..], &linalg::scaled(&dy1, h), grad_u));
            dy1.extend(dz2);
            (dy1, dh)
        }
        Scheme::EulerHeunNorm => heun_norm_backward(field, h, x, w, grad),
        Scheme::GonzalezDg => {
            let g = as_grad(field);
            let y = forward(field, scheme, h, x)?;
            gonzalez_backward(g, h, x, &y, w, grad)?
        }
        Scheme::Substeps { count, inner } => {
            let hs = h / *count as f64;
            let mut traj = Vec::with_capacity(*count);
            let mut y = x.to_vec();
            for _ in 0..*count {
                let next = forward(field, inner, hs, &y)?;
                traj.push(std::mem::replace(&mut y, next));
            }
            let mut wy = w.to_vec();
            let mut dh = 0.0;
            for xs in traj.iter().rev() {
                let (dx, dhs) = backward(field, inner, hs, xs, &wy, grad)?;
                wy = dx;
                dh += dhs / *count as f64;
            }
            (wy, dh)
        }
    })
}

fn inverse(field: &VectorField, scheme: &Scheme, h: f64, y: &[f64]) -> Result<Vec<f64>> {
    Ok(match scheme {
        Scheme::SymplecticEuler => {
            let VectorField::Separable(f) = field else { unreachable!() };
            let n = f.half();
            let (q1, p1) = y.split_at(n);
            let mut p = p1.to_vec();
            linalg::axpy(&mut p, h, &f.potential().potential_gradient(q1));
            let mut q = q1.to_vec();
            linalg::axpy(&mut q, -h, &f.kinetic().potential_gradient(&p));
            q.extend(p);
            q
        }
        Scheme::GradientModule(kind) => {
            let g = as_grad(field);
            let n = g.dim();
            let (src, dst) = if *kind == 1 { (n, 0) } else { (0, n) };
            let mut x = y.to_vec();
            let v = g.value(&y[src..src + n]);
            linalg::axpy(&mut x[dst..dst + n], -h, &v);
            x
        }
        Scheme::SplitVolume => {
            let VectorField::VolumeSplit(f) = field else { unreachable!() };
            let m = f.half();
            let mut x = y.to_vec();
            let v = f.v().value(&y[..m]);
            linalg::axpy(&mut x[m..], -h, &v);
            let u = f.u().value(&x[m..]);
            linalg::axpy(&mut x[..m], -h, &u);
            x
        }
        Scheme::Substeps { count, inner } => {
            let hs = h / *count as f64;
            let mut x = y.to_vec();
            for _ in 0..*count {
                x = inverse(field, inner, hs, &x)?;
            }
            x
        }
        _ => return Err(Error::InvalidArgument(format!("{} has no closed-form inverse", scheme.name()))),
    })
}

struct HeunTrace {
    k1: Vec<f64>,
    mid: Vec<f64>,
    k2: Vec<f64>,
    raw: Vec<f64>,
    out: Vec<f64>,
    r: f64,
    rho: f64,
}

fn heun_norm(field: &VectorField, h: f64, z: &[f64]) -> HeunTrace {
    let k1 = field.value(z);
    let mut mid = z.to_vec();
    linalg::axpy(&mut mid, h, &k1);
    let k2 = field.value(&mid);
    let mut raw = z.to_vec();
    linalg::axpy(&mut raw, 0.5 * h, &k1);
    linalg::axpy(&mut raw, 0.5 * h, &k2);
    let r = linalg::norm(z);
    let rho = linalg::norm(&raw);
    let out = if r == 0.0 {
        vec![0.0; z.len()]
    } else if rho == 0.0 {
        raw.clone()
    } else {
        linalg::scaled(&raw, r / rho)
    };
    HeunTrace { k1, mid, k2, raw, out, r, rho }
}

fn heun_norm_backward(field: &VectorField, h: f64, z: &[f64], w: &[f64], grad: &mut [f64]) -> (Vec<f64>, f64) {
    let t = heun_norm(field, h, z);
    let n = z.len();
    if t.r == 0.0 {
        return (vec![0.0; n], 0.0);
    }
    let mut dz = vec![0.0; n];
    let draw = if t.rho == 0.0 {
        w.to_vec()
    } else {
        let s = t.r / t.rho;
        let proj = linalg::dot(&t.raw, w) / (t.rho * t.rho);
        let dr = linalg::dot(w, &t.raw) / t.rho;
        linalg::axpy(&mut dz, dr / t.r, z);
        (0..n).map(|i| s * (w[i] - t.raw[i] * proj)).collect()
    };
    // raw = z + h/2 (k1 + k2)
    linalg::axpy(&mut dz, 1.0, &draw);
    let mut dh = 0.5 * (linalg::dot(&draw, &t.k1) + linalg::dot(&draw, &t.k2));
    let mut dk1 = linalg::scaled(&draw, 0.5 * h);
    let dk2 = linalg::scaled(&draw, 0.5 * h);
    // k2 = f(mid), mid = z + h k1
    let dmid = field.backward(&t.mid, &dk2, grad);
    linalg::axpy(&mut dz, 1.0, &dmid);
    linalg::axpy(&mut dk1, h, &dmid);
    dh += linalg::dot(&dmid, &t.k1);
    linalg::axpy(&mut dz, 1.0, &field.backward(z, &dk1, grad));
    (dz, dh)
}

/// Below this squared distance (relative to the points' scale) the discrete
/// gradient falls back to the midpoint gradient.
fn degenerate(x: &[f64], d2: f64) -> bool {
    d2 <= 1e-24 * (1.0 + linalg::dot(x, x))
}

/// Gonzalez discrete gradient of the potential `V` of `g`:
/// `∇̄V(x,y) = ∇V(m) + [(V(y) − V(x) − ∇V(m)·(y−x)) / ‖y−x‖²] (y−x)`, `m = (x+y)/2`.
pub fn discrete_grad(g: &GradField, x: &[f64], y: &[f64]) -> Vec<f64> {
    let m: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
    let gm = g.potential_gradient(&m);
    let d = linalg::sub(y, x);
    let d2 = linalg::dot(&d, &d);
    if degenerate(x, d2) {
        return gm;
    }
    let c = (g.potential(y) - g.potential(x) - linalg::dot(&gm, &d)) / d2;
    let mut out = gm;
    linalg::axpy(&mut out, c, &d);
    out
}

/// Reverse mode of [`discrete_grad`]: returns `(λᵀ∂D/∂x, λᵀ∂D/∂y)` and
/// accumulates `λᵀ∂D/∂θ`.
pub(crate) fn discrete_grad_vjp(g: &GradField, x: &[f64], y: &[f64], lam: &[f64], grad: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let m: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
    let d = linalg::sub(y, x);
    let d2 = linalg::dot(&d, &d);
    let mut dm = g.gradient_backward(&m, lam, grad);
    let mut dx = vec![0.0; x.len()];
    let mut dy = vec![0.0; y.len()];
    if !degenerate(x, d2) {
        let gm = g.potential_gradient(&m);
        let num = g.potential(y) - g.potential(x) - linalg::dot(&gm, &d);
        let c = num / d2;
        let dc = linalg::dot(lam, &d);
        let dnum = dc / d2;
        let dq = -dc * num / (d2 * d2);
        let mut dd = linalg::scaled(lam, c);
        linalg::axpy(&mut dd, 2.0 * dq, &d);
        linalg::axpy(&mut dd, -dnum, &gm);
        linalg::axpy(&mut dy, 1.0, &g.potential_backward(y, dnum, grad));
        linalg::axpy(&mut dx, 1.0, &g.potential_backward(x, -dnum, grad));
        linalg::axpy(&mut dm, 1.0, &g.gradient_backward(&m, &linalg::scaled(&d, -dnum), grad));
        linalg::axpy(&mut dy, 1.0, &dd);
        linalg::axpy(&mut dx, -1.0, &dd);
    }
    linalg::axpy(&mut dx, 0.5, &dm);
    linalg::axpy(&mut dy, 0.5, &dm);
    (dx, dy)
}

const GONZALEZ_TOL: f64 = 1e-12;
const GONZALEZ_ITERS: usize = 100;

/// Solve `y = x + s·h·∇̄V(x, y)` (with `s` the field sign) by damped
/// fixed-point iteration from `guess`.
pub fn gonzalez_step(g: &GradField, h: f64, x: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
    check_dim(g.dim(), x.len())?;
    check_dim(g.dim(), guess.len())?;
    gonzalez_solve(g, h, x, guess)
}

fn gonzalez_solve(g: &GradField, h: f64, x: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
    let sh = g.sign() * h;
    let mut last = f64::INFINITY;
    for damping in [1.0, 0.5] {
        let mut y = guess.to_vec();
        for _ in 0..GONZALEZ_ITERS {
            let mut target = x.to_vec();
            linalg::axpy(&mut target, sh, &discrete_grad(g, x, &y));
            let res = linalg::norm(&linalg::sub(&target, &y));
            if !res.is_finite() {
                break;
            }
            last = res;
            if res <= GONZALEZ_TOL * (1.0 + linalg::norm(&y)) {
                return Ok(y);
            }
            for (yi, ti) in y.iter_mut().zip(&target) {
                *yi += damping * (ti - *yi);
            }
        }
    }
    Err(Error::Solver { iterations: 2 * GONZALEZ_ITERS, residual: last })
}

/// Implicit differentiation through `G(x, y) = y − x − s h ∇̄V(x, y) = 0`.
fn gonzalez_backward(g: &GradField, h: f64, x: &[f64], y: &[f64], w: &[f64], grad: &mut [f64]) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    let sh = g.sign() * h;
    // Rows of ∂D/∂y via unit cotangents.
    let mut scratch = vec![0.0; grad.len()];
    let mut jt = Mat::identity(n);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let (_, dy) = discrete_grad_vjp(g, x, y, &e, &mut scratch);
        for j in 0..n {
            // (I − sh J)ᵀ stored directly: entry (j, i) = δ − sh ∂D_i/∂y_j
            jt[(j, i)] -= sh * dy[j];
        }
    }
    let lam = linalg::lu_solve(&jt, w)?;
    let d = discrete_grad(g, x, y);
    let dh = g.sign() * linalg::dot(&lam, &d);
    let mut gtmp = vec![0.0; grad.len()];
    let (dx, _) = discrete_grad_vjp(g, x, y, &lam, &mut gtmp);
    linalg::axpy(grad, sh, &gtmp);
    let mut out = lam;
    linalg::axpy(&mut out, sh, &dx);
    Ok((out, dh))
}

pub fn explicit_euler(field: &VectorField, h: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(field.dim(), x.len())?;
    forward(field, &Scheme::ExplicitEuler, h, x)
}

pub fn euler_heun_norm(field: &VectorField, h: f64, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(field.dim(), z.len())?;
    check_compat(field, &Scheme::EulerHeunNorm)?;
    Ok(heun_norm(field, h, z).out)
}

/// Classical RK4 with `steps` equal steps over `[0, t]`.
pub fn rk4(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let dt = t / steps as f64;
    let mut y = x.to_vec();
    let mut tmp = vec![0.0; x.len()];
    for _ in 0..steps {
        let k1 = f(&y);
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * dt * k1[i];
        }
        let k2 = f(&tmp);
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * dt * k2[i];
        }
        let k3 = f(&tmp);
        for i in 0..y.len() {
            tmp[i] = y[i] + dt * k3[i];
        }
        let k4 = f(&tmp);
        for i in 0..y.len() {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}
