//! Shared oracles for the integration tests. Everything here is written
//! independently of the library internals it checks.
#![allow(dead_code, clippy::needless_range_loop)]

use geoflow::blocks::{Block, Layer, Network, StepBinding, StepConstraint, StepPair};
use geoflow::fields::{
    lift_hamiltonian, Activation, ActivationField, GradField, LinearField, MassField, MetricField, Mlp, SeparableField,
    SphereField, VectorField, VolumeSplitField,
};
use geoflow::flows::{FlowStep, Scheme};
use geoflow::linalg::{self, Mat, Rng};
use geoflow::params::Weight;

pub fn rng(seed: u64) -> Rng {
    linalg::rng(seed)
}

pub fn act() -> Activation {
    Activation::leaky_max(0.5).unwrap()
}

/// Central-difference Jacobian, column `j` = ∂f/∂x_j.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], eps: f64) -> Mat {
    let m = f(x).len();
    let mut jac = Mat::zeros(m, x.len());
    for j in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += eps;
        xm[j] -= eps;
        let (fp, fm) = (f(&xp), f(&xm));
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * eps);
        }
    }
    jac
}

/// Singular values by one-sided Jacobi rotations on the columns, descending.
pub fn jacobi_singular_values(a: &Mat) -> Vec<f64> {
    let (m, n) = a.shape();
    let mut u: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[(i, j)]).collect()).collect();
    for _ in 0..100 {
        let mut off: f64 = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                let beta: f64 = u[q].iter().map(|x| x * x).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-300 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (u[p][i], u[q][i]);
                    u[p][i] = c * x - s * y;
                    u[q][i] = s * x + c * y;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = u.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `Σ Wᵏ/k!` summed until the terms stop changing the result.
pub fn taylor_expm(w: &Mat) -> Mat {
    let n = w.rows();
    let mut out = Mat::identity(n);
    let mut term = Mat::identity(n);
    for k in 1..400 {
        term = term.matmul(w).scale(1.0 / k as f64);
        out = out.add(&term);
        if term.norm_max() < 1e-300 || term.norm_max() < 1e-18 * out.norm_max() {
            break;
        }
    }
    out
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(a: &Mat) -> f64 {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut d = 1.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        if m[p][k] == 0.0 {
            return 0.0;
        }
        if p != k {
            m.swap(p, k);
            d = -d;
        }
        d *= m[k][k];
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    d
}

pub fn symplectic_j(n: usize) -> Mat {
    Mat::from_fn(2 * n, 2 * n, |i, j| {
        if j == i + n {
            1.0
        } else if i == j + n {
            -1.0
        } else {
            0.0
        }
    })
}

fn small(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::randn(rows, cols, 0.6, rng)
}

/// Generic (non-zero) bias so kinks of σ are avoided almost surely.
fn bias(n: usize, rng: &mut Rng) -> Vec<f64> {
    linalg::scaled(&linalg::randn(rng, n), 0.3)
}

pub fn grad_field(n: usize, m: usize, sign: f64, orthogonal: bool, rng: &mut Rng) -> GradField {
    let a = if orthogonal { Weight::orthogonal(small(n, n, rng)).unwrap() } else { Weight::free(small(m, n, rng)) };
    let width = a.rows();
    let alpha = (0..width).map(|_| 0.5 + rand::Rng::random::<f64>(rng)).collect();
    GradField::new(a, bias(width, rng), alpha, sign, act()).unwrap()
}

/// One field of every family on `ℝⁿ` (`n` even), with names.
pub fn every_field(n: usize, rng: &mut Rng) -> Vec<(&'static str, VectorField)> {
    let h = n / 2;
    let metric_w = {
        let b = small(n, n, rng);
        b.add(&b.transpose()).scale(0.5)
    };
    let metric_m = metric_w.matmul(&metric_w).add(&Mat::identity(n));
    vec![
        ("zero", VectorField::Zero { dim: n }),
        ("linear", LinearField::new(small(n, n, rng)).unwrap().into()),
        ("grad", grad_field(n, n + 1, -1.0, false, rng).into()),
        ("grad_orthogonal", grad_field(n, n, -1.0, true, rng).into()),
        (
            "activation",
            ActivationField::new(Weight::orthogonal(small(n, n, rng)).unwrap(), bias(n, rng), act()).unwrap().into(),
        ),
        ("mlp", Mlp::random(n, 5, n, 0.8, act(), rng).into()),
        ("sphere_skew", SphereField::random_skew(n, 5, 0.8, act(), rng).into()),
        ("sphere_projector", SphereField::projector(small(3, n, rng), small(3, n, rng), bias(3, rng), act()).unwrap().into()),
        ("mass", MassField::random(n, 5, 0.8, act(), rng).into()),
        (
            "volume_split",
            VolumeSplitField::new(Mlp::random(h, 4, h, 0.8, act(), rng), Mlp::random(h, 4, h, 0.8, act(), rng)).unwrap().into(),
        ),
        ("metric", MetricField::new(metric_w, bias(n, rng), metric_m, act()).unwrap().into()),
        ("separable", SeparableField::new(grad_field(h, h + 1, 1.0, false, rng), grad_field(h, h, 1.0, false, rng)).unwrap().into()),
        ("lifted_grad", lift_hamiltonian(grad_field(h, h, -1.0, false, rng).into()).unwrap()),
    ]
}

/// Networks covering every layer kind, scheme and step binding.
pub fn every_network(seed: u64) -> Vec<(&'static str, Network)> {
    let mut r = rng(seed);
    let r = &mut r;
    let mut out = Vec::new();
    let n = 4;
    for (name, f) in every_field(n, r) {
        let mut net = Network::new(n);
        net.push(Layer::flow(FlowStep::euler(f, 0.3).unwrap())).unwrap();
        out.push((name, net));
    }
    let sphere: VectorField = SphereField::random_skew(n, 5, 0.8, act(), r).into();
    let proj: VectorField = SphereField::projector(small(3, n, r), small(3, n, r), bias(3, r), act()).unwrap().into();
    let vol: VectorField =
        VolumeSplitField::new(Mlp::random(2, 4, 2, 0.8, act(), r), Mlp::random(2, 4, 2, 0.8, act(), r)).unwrap().into();
    let sep: VectorField = SeparableField::new(grad_field(2, 3, 1.0, false, r), grad_field(2, 2, 1.0, false, r)).unwrap().into();
    let gm: VectorField = grad_field(2, 3, 1.0, false, r).into();
    let gz: VectorField = grad_field(n, 5, -1.0, false, r).into();
    let steps = [
        ("euler_heun_norm_skew", FlowStep::new(sphere, 0.3, Scheme::EulerHeunNorm).unwrap()),
        ("euler_heun_norm_projector", FlowStep::new(proj, 0.3, Scheme::EulerHeunNorm).unwrap()),
        ("split_volume", FlowStep::new(vol, 0.3, Scheme::SplitVolume).unwrap()),
        ("symplectic_euler", FlowStep::new(sep, 0.3, Scheme::SymplecticEuler).unwrap()),
        ("gradient_module1", FlowStep::new(gm.clone(), 0.3, Scheme::GradientModule(1)).unwrap()),
        ("gradient_module2", FlowStep::new(gm, 0.3, Scheme::GradientModule(2)).unwrap()),
        ("gonzalez", FlowStep::new(gz.clone(), 0.2, Scheme::GonzalezDg).unwrap()),
        ("substeps", FlowStep::new(gz, 0.3, Scheme::substeps(3, Scheme::ExplicitEuler)).unwrap()),
    ];
    for (name, s) in steps {
        let mut net = Network::new(s.dim());
        net.push(Layer::flow(s)).unwrap();
        out.push((name, net));
    }

    // Lift, region pair with substeps, fixed step, project and affine head.
    let mut net = Network::new(2);
    net.push(Layer::lift(small(n, 2, r), 0.8, true)).unwrap();
    let pair = net.add_pair(StepPair::new(0.4, 0.3, 0.5, 2, StepConstraint::Region));
    let c = FlowStep::euler(grad_field(n, n, -1.0, true, r), 0.0).unwrap();
    let e = FlowStep::euler(ActivationField::orthogonal(n, act(), r), 0.0).unwrap();
    let b = Block::new(
        vec![c, e],
        vec![StepBinding::Pair { pair, which: 0, frac: 0.5 }, StepBinding::Pair { pair, which: 1, frac: 0.5 }],
        2,
    )
    .unwrap();
    net.push(Layer::Flow(b)).unwrap();
    net.push(Layer::Flow(Block::single(FlowStep::euler(Mlp::random(n, 3, n, 0.5, act(), r), 0.2).unwrap(), StepBinding::Fixed)))
        .unwrap();
    net.push(Layer::project(small(3, n, r), false)).unwrap();
    net.push(Layer::affine(small(2, 3, r), bias(2, r), true)).unwrap();
    out.push(("lift_pair_project_affine", net));

    // Mass lift and projection around a mass flow.
    let mut net = Network::new(3);
    net.push(Layer::MassLift { k: 3, s: 2 }).unwrap();
    net.push(Layer::flow(FlowStep::euler(MassField::random(5, 4, 0.8, act(), r), 0.3).unwrap())).unwrap();
    net.push(Layer::MassProject { k: 3, s: 2 }).unwrap();
    out.push(("mass_chain", net));
    out
}

/// Worst `|fd − analytic| / max(1e-4, 1e-3·|fd|)` over all parameters of
/// the mean-squared loss against random targets, and over input gradients of
/// a random output functional. A value ≤ 1 passes.
pub fn gradient_errors(net: &Network, seed: u64) -> (f64, f64) {
    use geoflow::params::Parameterized;
    use geoflow::train::{grad, LossSpec, Targets};
    let mut r = rng(seed);
    let (n, m) = (net.input_dim(), net.output_dim());
    let x: Vec<Vec<f64>> = (0..3).map(|_| input_for(net, &mut r)).collect();
    let t = Targets::Values((0..3).map(|_| linalg::randn(&mut r, m)).collect());
    let loss = |p: &[f64]| {
        let mut c = net.clone();
        c.set_params(p);
        grad(&c, &LossSpec::Mse, &x, &t).unwrap().loss
    };
    let g = grad(net, &LossSpec::Mse, &x, &t).unwrap().grad;
    let theta = net.params();
    let scaled = |fd: f64, an: f64| (fd - an).abs() / 1e-4f64.max(1e-3 * fd.abs());
    let mut worst_p: f64 = 0.0;
    for i in 0..theta.len() {
        let e = 1e-6 * (1.0 + theta[i].abs());
        let mut p = theta.clone();
        p[i] += e;
        let up = loss(&p);
        p[i] -= 2.0 * e;
        let dn = loss(&p);
        worst_p = worst_p.max(scaled((up - dn) / (2.0 * e), g[i]));
    }
    let w = linalg::randn(&mut r, m);
    let x0 = &x[0];
    let gi = net.input_vjp(x0, &w).unwrap();
    let mut worst_x: f64 = 0.0;
    for j in 0..n {
        let e = 1e-6 * (1.0 + x0[j].abs());
        let mut xp = x0.clone();
        xp[j] += e;
        let mut xm = x0.clone();
        xm[j] -= e;
        let fd = (linalg::dot(&w, &net.forward(&xp).unwrap()) - linalg::dot(&w, &net.forward(&xm).unwrap())) / (2.0 * e);
        worst_x = worst_x.max(scaled(fd, gi[j]));
    }
    (worst_p, worst_x)
}

/// Valid random input: nonnegative for mass networks, generic otherwise.
pub fn input_for(net: &Network, r: &mut Rng) -> Vec<f64> {
    let x = linalg::randn(r, net.input_dim());
    if matches!(net.layers().first(), Some(Layer::MassLift { .. })) {
        x.iter().map(|v| v.abs()).collect()
    } else {
        x
    }
}
