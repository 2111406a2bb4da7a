mod common;

use common::{act, grad_field, rng};
use geoflow::blocks::{build_lipschitz_block, build_mass_network, project_region, region_excess, BlockPattern, REGION_TOL};
use geoflow::blocks::{fmt_hex, parse_hex};
use geoflow::fields::{MassField, SphereField, VectorField};
use geoflow::flows::{discrete_grad, euler_heun_norm};
use geoflow::linalg::{self, expm, norm, Mat};
use geoflow::robust::{certified_radius, margin};
use geoflow::train::hinge_loss;
use proptest::prelude::*;

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn skew_exponential_inverts(seed in any::<u64>(), n in 1usize..7, scale in 0.0f64..10.0) {
        let w = Mat::randn(n, n, 1.0, &mut rng(seed));
        let s = w.sub(&w.transpose());
        let nrm = s.norm_fro().max(1e-300);
        let s = s.scale(scale / nrm);
        let p = expm(&s.scale(-1.0)).unwrap().matmul(&expm(&s).unwrap());
        prop_assert!(p.sub(&Mat::identity(n)).norm_max() <= 1e-10);
    }

    #[test]
    fn region_projection_is_feasible_and_idempotent(u1 in -1.0f64..3.0, u2 in -1.0f64..3.0, a in 0.01f64..0.99) {
        let (p1, p2) = project_region(u1, u2, a);
        prop_assert!((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p2));
        prop_assert!(region_excess(p1, p2, a) <= REGION_TOL);
        prop_assert_eq!(project_region(p1, p2, a), (p1, p2));
    }

    #[test]
    fn hex_floats_round_trip(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        let back = parse_hex(&fmt_hex(x)).unwrap();
        prop_assert!(back.to_bits() == x.to_bits() || (x.is_nan() && back.is_nan()));
    }

    #[test]
    fn sphere_and_mass_structure(seed in any::<u64>(), z in vec_of(4)) {
        let mut r = rng(seed);
        let s: VectorField = SphereField::random_skew(4, 5, 1.0, act(), &mut r).into();
        let v = s.eval(&z).unwrap();
        prop_assert!(linalg::dot(&z, &v).abs() <= 1e-13 * norm(&z) * norm(&v) + 1e-300);
        let out = euler_heun_norm(&s, 0.4, &z).unwrap();
        prop_assert!((norm(&out) - norm(&z)).abs() <= 1e-13 * norm(&z));
        let m: VectorField = MassField::random(4, 5, 1.0, act(), &mut r).into();
        let v = m.eval(&z).unwrap();
        let scale: f64 = v.iter().map(|x| x.abs()).sum();
        prop_assert!(v.iter().sum::<f64>().abs() <= 1e-13 * scale.max(1e-300));
    }

    #[test]
    fn discrete_gradient_identity(seed in any::<u64>(), x in vec_of(3), y in vec_of(3)) {
        let g = grad_field(3, 4, -1.0, false, &mut rng(seed));
        let d = discrete_grad(&g, &x, &y);
        let gap = g.potential(&y) - g.potential(&x) - linalg::dot(&d, &linalg::sub(&y, &x));
        let scale = 1.0 + g.potential(&x).abs() + g.potential(&y).abs();
        prop_assert!(gap.abs() <= 1e-12 * scale);
    }

    #[test]
    fn mass_networks_preserve_sum(seed in any::<u64>(), s in 1usize..5, x in prop::collection::vec(0.0f64..1.0, 3)) {
        let net = build_mass_network(3, s, 3, 4, act(), &mut rng(seed)).unwrap();
        let y = net.forward(&x).unwrap();
        prop_assert!((x.iter().sum::<f64>() - y.iter().sum::<f64>()).abs() <= 1e-12);
    }

    #[test]
    fn lipschitz_blocks_bound_random_pairs(seed in any::<u64>(), n in 2usize..8, depth in 1usize..5, x in vec_of(8), d in vec_of(8)) {
        let net = build_lipschitz_block(n, depth, 1 + (seed % 3) as usize, 0.5, BlockPattern::GradFree, &mut rng(seed)).unwrap();
        let (x, y) = (&x[..n], linalg::add(&x[..n], &linalg::scaled(&d[..n], 0.1)));
        let lhs = norm(&linalg::sub(&net.forward(x).unwrap(), &net.forward(&y).unwrap()));
        prop_assert!(lhs <= net.lipschitz_bound() * norm(&linalg::sub(x, &y)) * (1.0 + 1e-12) + 1e-15);
        prop_assert!(net.lipschitz_bound() <= 1.0 + 1e-9);
    }

    #[test]
    fn margins_and_losses(z in vec_of(4), label in 0usize..4, m in 0.01f64..3.0) {
        let mg = margin(&z, label).unwrap();
        let others = z.iter().enumerate().filter(|(i, _)| *i != label).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(mg, z[label] - others);
        prop_assert!(hinge_loss(&z, label, m).unwrap() >= 0.0);
        if mg >= m {
            prop_assert_eq!(hinge_loss(&z, label, m).unwrap(), 0.0);
        }
        let r = certified_radius(mg, 1.0).unwrap();
        prop_assert!(r >= 0.0 && r >= certified_radius(mg, 2.0).unwrap());
    }
}
