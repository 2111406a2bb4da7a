//! Quick structural checks run by `geoflow selftest`.

use crate::blocks::{build_lipschitz_block, project_region, read_model, region_excess, write_model, BlockPattern, REGION_TOL};
use crate::fields::{Activation, MassField, SphereField, VectorField};
use crate::flows;
use crate::linalg;
use crate::params::Parameterized;
use crate::robust::empirical_lipschitz;
use crate::train::{grad, LossSpec, Targets};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn selftest(seed: u64) -> Vec<Check> {
    let mut rng = linalg::rng(seed);
    let act = Activation::default();
    let mut out = Vec::new();

    let mass: VectorField = MassField::random(5, 8, 0.3, act, &mut rng).into();
    let mut y = vec![0.2; 5];
    let mut scale: f64 = 1.0;
    for _ in 0..1000 {
        y = flows::explicit_euler(&mass, 0.01, &y).expect("dims");
        scale = scale.max(y.iter().map(|v| v.abs()).sum());
    }
    // Relative to the largest state seen: rounding scales with |y|.
    let drift = (y.iter().sum::<f64>() - 1.0).abs() / scale;
    out.push(check("mass conservation", drift <= 1e-12, format!("relative drift of 1ᵀy {drift:e}")));

    let sphere: VectorField = SphereField::random_skew(4, 8, 0.5, act, &mut rng).into();
    let z = linalg::randn(&mut rng, 4);
    let z1 = flows::euler_heun_norm(&sphere, 0.3, &z).expect("dims");
    let rel = (linalg::norm(&z1) - linalg::norm(&z)).abs() / linalg::norm(&z);
    out.push(check("sphere norm", rel <= 1e-13, format!("relative change {rel:e}")));

    let mut worst: f64 = f64::NEG_INFINITY;
    let mut idempotent = true;
    for k in 0..50 {
        let (u1, u2) = (1.5 * (k as f64 / 49.0), 1.5 * ((k * 7 % 50) as f64 / 49.0));
        let p = project_region(u1, u2, 0.5);
        worst = worst.max(region_excess(p.0, p.1, 0.5));
        idempotent &= project_region(p.0, p.1, 0.5) == p;
    }
    out.push(check("step region", worst <= REGION_TOL && idempotent, format!("max excess {worst:e}")));

    let net = build_lipschitz_block(4, 3, 1, 0.5, BlockPattern::GradFree, &mut rng).expect("valid");
    let bound = net.lipschitz_bound();
    let emp = empirical_lipschitz(&net, &mut |r| linalg::randn(r, 4), 40, seed).expect("dims");
    out.push(check(
        "lipschitz bound",
        emp <= bound + 1e-9 && bound <= 1.0 + 1e-9,
        format!("empirical {emp:.6} ≤ bound {bound:.6}"),
    ));

    let x: Vec<Vec<f64>> = (0..4).map(|_| linalg::randn(&mut rng, 4)).collect();
    let t = Targets::Values((0..4).map(|_| linalg::randn(&mut rng, 4)).collect());
    let g = grad(&net, &LossSpec::Mse, &x, &t).expect("finite");
    let theta = net.params();
    let mut err: f64 = 0.0;
    let d = 1e-6;
    for i in (0..theta.len()).step_by(5) {
        let mut m = net.clone();
        let mut p = theta.clone();
        p[i] += d;
        m.set_params(&p);
        let up = grad(&m, &LossSpec::Mse, &x, &t).expect("finite").loss;
        p[i] -= 2.0 * d;
        m.set_params(&p);
        let dn = grad(&m, &LossSpec::Mse, &x, &t).expect("finite").loss;
        let fd = (up - dn) / (2.0 * d);
        err = err.max((fd - g.grad[i]).abs() / 1e-4f64.max(1e-3 * fd.abs()));
    }
    out.push(check("parameter gradient", err <= 1.0, format!("worst scaled error {err:.3}")));

    let back = read_model(&write_model(&net));
    let same = back.as_ref().is_ok_and(|b| x.iter().all(|xi| b.forward(xi).ok() == net.forward(xi).ok()));
    out.push(check("model round trip", same, "outputs bit-identical after reload".into()));
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::selftest(3) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
