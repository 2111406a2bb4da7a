mod common;

use common::{act, every_network, grad_field, rng};
use geoflow::blocks::{
    build_lipschitz_block, build_mass_network, build_presnov_block, contractive_factor, project_region, read_model, region_excess,
    write_model, Block, BlockPattern, Layer, Network, PresnovOptions, StepBinding, StepConstraint, StepPair, SwitchSchedule,
    REGION_TOL,
};
use geoflow::fields::{ActivationField, GradField, VectorField};
use geoflow::flows::{euler_heun_norm, FlowStep};
use geoflow::linalg::{self, norm, Mat};
use geoflow::params::{Parameterized, Weight};
use geoflow::robust::empirical_lipschitz;

fn feasible(u1: f64, u2: f64, a: f64) -> bool {
    (0.0..=1.0).contains(&u1) && (0.0..=1.0).contains(&u2) && (1.0 + u2) * (1.0 - 2.0 * u1 * a + u1 * u1).sqrt() <= 1.0
}

/// Upper edge of the feasible set above `u1`.
fn upper(u1: f64, a: f64) -> f64 {
    (1.0 / (1.0 - 2.0 * u1 * a + u1 * u1).sqrt() - 1.0).clamp(0.0, 1.0)
}

/// Nearest feasible point from a dense search over the boundary of the set,
/// refined once around the best sample.
fn grid_nearest(p: (f64, f64), a: f64) -> (f64, f64) {
    if feasible(p.0, p.1, a) {
        return p;
    }
    let d = |u: (f64, f64)| (u.0 - p.0).hypot(u.1 - p.1);
    let mut cands = vec![
        (p.0.clamp(0.0, 1.0), 0.0),
        (0.0, p.1.clamp(0.0, upper(0.0, a))),
        (1.0, p.1.clamp(0.0, upper(1.0, a))),
    ];
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..3 {
        let n = 100_000;
        let best = (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .map(|u1| (u1, upper(u1, a)))
            .min_by(|x, y| d(*x).total_cmp(&d(*y)))
            .unwrap();
        cands.push(best);
        let w = 2.0 * (hi - lo) / n as f64;
        (lo, hi) = ((best.0 - w).max(0.0), (best.0 + w).min(1.0));
    }
    cands.into_iter().filter(|u| feasible(u.0, u.1, a) || region_excess(u.0, u.1, a) <= 1e-15).min_by(|x, y| d(*x).total_cmp(&d(*y))).unwrap()
}

#[test]
fn region_projection_examples() {
    assert_eq!(project_region(0.0, 0.0, 0.5), (0.0, 0.0));
    assert_eq!(project_region(1.0, 0.0, 0.5), (1.0, 0.0));
    let q = project_region(0.0, 0.5, 0.5);
    assert!(region_excess(q.0, q.1, 0.5) <= REGION_TOL);
    assert!(q.1 < 0.5);
    let g = grid_nearest((0.0, 0.5), 0.5);
    assert!((q.0 - g.0).abs() <= 1e-6 && (q.1 - g.1).abs() <= 1e-6, "{q:?} vs {g:?}");
}

#[test]
fn region_projection_matches_grid_and_is_idempotent() {
    let mut r = rng(1);
    for _ in 0..30 {
        let v = linalg::randn(&mut r, 3);
        let a = 0.2 + 0.6 * v[2].abs().min(1.0);
        let p = (0.5 + 0.8 * v[0], 0.5 + 0.8 * v[1]);
        let q = project_region(p.0, p.1, a);
        assert!(region_excess(q.0, q.1, a) <= REGION_TOL);
        assert_eq!(project_region(q.0, q.1, a), q);
        let g = grid_nearest(p, a);
        let (dq, dg) = ((q.0 - p.0).hypot(q.1 - p.1), (g.0 - p.0).hypot(g.1 - p.1));
        assert!(dq <= dg + 1e-7, "{p:?}: {q:?} vs {g:?}");
    }
}

fn unit_contractive(h: f64) -> Network {
    let g = GradField::new(Weight::orthogonal(Mat::randn(3, 3, 0.5, &mut rng(2))).unwrap(), vec![0.0; 3], vec![1.0; 3], -1.0, act())
        .unwrap();
    let mut net = Network::new(3);
    net.push(Layer::flow(FlowStep::euler(g, h).unwrap())).unwrap();
    net
}

#[test]
fn lipschitz_bound_examples() {
    assert_eq!(Network::new(4).lipschitz_bound(), 1.0);
    let b = unit_contractive(0.5).lipschitz_bound();
    assert!((b - 0.75f64.sqrt()).abs() <= 1e-12, "{b}");
    assert!((contractive_factor(0.5, 0.5) - 0.75f64.sqrt()).abs() <= 1e-15);
}

#[test]
fn lipschitz_bound_dominates_empirical_ratio() {
    for (name, net) in every_network(3) {
        let bound = net.lipschitz_bound();
        if !bound.is_finite() {
            continue;
        }
        let n = net.input_dim();
        let emp = empirical_lipschitz(&net, &mut |r| linalg::scaled(&linalg::randn(r, n), 2.0), 10_000, 5).unwrap();
        assert!(emp <= bound + 1e-9, "{name}: empirical {emp} > bound {bound}");
    }
}

#[test]
fn lipschitz_blocks_are_feasible_and_non_expansive() {
    let mut r = rng(4);
    for pattern in [BlockPattern::GradGrad, BlockPattern::GradFree] {
        for s in [1, 3] {
            let mut net = build_lipschitz_block(5, 4, s, 0.5, pattern, &mut r).unwrap();
            let mut p = net.params();
            // push the step parameters out of the region, then project back
            p.iter_mut().for_each(|v| *v *= 3.0);
            net.set_params(&p);
            net.project_steps();
            let once: Vec<(f64, f64)> = net.pairs().iter().map(|q| (q.h1(), q.h2())).collect();
            for q in net.pairs() {
                let (u1, u2) = (q.h1() / q.substeps as f64, q.h2() / q.substeps as f64);
                assert!(region_excess(u1, u2, 0.5) <= REGION_TOL);
            }
            net.project_steps();
            let twice: Vec<(f64, f64)> = net.pairs().iter().map(|q| (q.h1(), q.h2())).collect();
            assert_eq!(once, twice);
            assert!(net.lipschitz_bound() <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn zero_step_block_is_identity() {
    let mut r = rng(5);
    let mut net = build_lipschitz_block(4, 1, 1, 0.5, BlockPattern::GradFree, &mut r).unwrap();
    net.pairs_mut()[0] = StepPair::new(0.0, 0.0, 0.5, 1, StepConstraint::Region);
    let x = linalg::randn(&mut r, 4);
    assert_eq!(net.forward(&x).unwrap(), x);
    assert_eq!(net.lipschitz_bound(), 1.0);
}

#[test]
fn presnov_block_examples() {
    let mut r = rng(6);
    let opts = PresnovOptions::default();
    let mut net = build_presnov_block(4, 1, &opts, &mut r).unwrap();
    let x = linalg::randn(&mut r, 4);
    // The step size is a parameter too; zero everything except it.
    let mut zeroed = net.clone();
    zeroed.set_params(&vec![0.0; net.n_params()]);
    zeroed.pairs_mut()[0] = StepPair::new(0.3, 0.0, 0.5, 1, StepConstraint::NonNegative);
    let y = zeroed.forward(&x).unwrap();
    assert!(linalg::sub(&y, &x).iter().all(|d| d.abs() < 1e-15), "{y:?}");

    net.pairs_mut()[0] = StepPair::new(0.3, 0.0, 0.5, 1, StepConstraint::NonNegative);
    let Layer::Flow(b) = &net.layers()[0] else { panic!("flow layer") };
    let sphere = &b.steps()[0];
    let z = sphere.apply_with(&x, 0.3).unwrap();
    assert!((norm(&z) - norm(&x)).abs() <= 1e-13 * norm(&x));
    assert_eq!(z, euler_heun_norm(sphere.field(), 0.3, &x).unwrap());
    assert!(build_presnov_block(4, 0, &opts, &mut r).is_err());
}

#[test]
fn empty_network_is_identity() {
    let net = Network::new(3);
    assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    assert!(net.forward(&[1.0]).is_err());
}

#[test]
fn mass_chain_preserves_sum() {
    let mut r = rng(7);
    let mut id = Network::new(3);
    id.push(Layer::MassLift { k: 3, s: 2 }).unwrap();
    id.push(Layer::MassProject { k: 3, s: 2 }).unwrap();
    let x = linalg::randn(&mut r, 3);
    assert_eq!(id.forward(&x).unwrap(), x);

    for s in [1, 3, 5] {
        let net = build_mass_network(3, s, 4, 6, act(), &mut r).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = linalg::randn(&mut r, 3).iter().map(|v| v.abs()).collect();
            let y = net.forward(&x).unwrap();
            let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
            assert!((sx - sy).abs() <= 1e-12 * sx.max(1.0), "s={s}: {sx} vs {sy}");
        }
    }
}

#[test]
fn lift_block_lift_block_project_shape() {
    let mut r = rng(8);
    let n = 3;
    let mut net = Network::new(n);
    net.push(Layer::lift(Mat::randn(2 * n, n, 0.5, &mut r), 1.0, false)).unwrap();
    net.append(build_lipschitz_block(2 * n, 2, 1, 0.5, BlockPattern::GradFree, &mut r).unwrap()).unwrap();
    net.push(Layer::lift(Mat::randn(4 * n, 2 * n, 0.5, &mut r), 1.0, false)).unwrap();
    net.append(build_lipschitz_block(4 * n, 2, 2, 0.5, BlockPattern::GradGrad, &mut r).unwrap()).unwrap();
    net.push(Layer::project(Mat::randn(2, 4 * n, 0.5, &mut r), true)).unwrap();
    assert_eq!((net.input_dim(), net.output_dim()), (n, 2));
    assert_eq!(net.forward(&[0.1, 0.2, 0.3]).unwrap().len(), 2);
    assert_eq!(net.pairs().len(), 4);

    // mismatched layer dims are rejected
    let mut bad = Network::new(3);
    assert!(bad.push(Layer::project(Mat::zeros(2, 4), false)).is_err());
}

#[test]
fn constrained_linear_layers_are_capped() {
    let mut r = rng(9);
    let mut net = Network::new(2);
    net.push(Layer::lift(Mat::randn(4, 2, 3.0, &mut r), 2.0, true)).unwrap();
    net.push(Layer::affine(Mat::randn(2, 4, 3.0, &mut r), vec![0.1, 0.2], true)).unwrap();
    geoflow::train::enforce_constraints(&mut net);
    assert!(net.lipschitz_bound() <= 1.0 + 1e-9);
}

#[test]
fn balanced_switching_is_non_expansive() {
    let mut r = rng(10);
    let a = act();
    let c: VectorField = GradField::contractive_orthogonal(3, a, &mut r).into();
    let e: VectorField = ActivationField::orthogonal(3, a, &mut r).into();
    // μ = 0.5 and L = 1: contracting for 1.0 pays for expanding for 0.45.
    let balanced = SwitchSchedule::new(vec![c.clone(), e.clone()], vec![(0, 0.6), (1, 0.2), (0, 0.4), (1, 0.25)]).unwrap();
    assert!(balanced.is_balanced());
    assert!((balanced.balance() + 0.05).abs() < 1e-9);
    for _ in 0..50 {
        let x = linalg::randn(&mut r, 3);
        let y = linalg::add(&x, &linalg::scaled(&linalg::randn(&mut r, 3), 0.3));
        let d0 = norm(&linalg::sub(&x, &y));
        let d1 = norm(&linalg::sub(&balanced.simulate(&x, 2000), &balanced.simulate(&y, 2000)));
        assert!(d1 <= d0 * (1.0 + 1e-9));
    }
    let unbalanced = SwitchSchedule::new(vec![c, e.clone()], vec![(0, 0.1), (1, 1.0)]).unwrap();
    assert!(!unbalanced.is_balanced());
    assert!(SwitchSchedule::new(vec![e], vec![(0, 0.0)]).is_err());
}

#[test]
fn models_round_trip_bit_exactly() {
    let mut r = rng(11);
    for (name, net) in every_network(12) {
        let text = write_model(&net);
        assert!(text.starts_with("geoflow-model v1"));
        let back = read_model(&text).unwrap();
        assert_eq!(back.params(), net.params(), "{name}");
        for _ in 0..5 {
            let x = linalg::randn(&mut r, net.input_dim());
            assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap(), "{name}");
        }
        assert_eq!(write_model(&back), text, "{name}");
    }
    assert!(read_model("geoflow-model v9\n").is_err());
    assert!(read_model("").is_err());
}

#[test]
fn pair_bindings_share_one_step() {
    let mut r = rng(13);
    let mut net = Network::new(3);
    let pair = net.add_pair(StepPair::new(0.4, 0.2, 0.5, 1, StepConstraint::Region).projected());
    let c = FlowStep::euler(grad_field(3, 3, -1.0, true, &mut r), 0.0).unwrap();
    let b = Block::new(vec![c.clone(), c], vec![StepBinding::Pair { pair, which: 0, frac: 0.5 }; 2], 1).unwrap();
    net.push(Layer::Flow(b)).unwrap();
    assert!((net.total_time() - net.pairs()[0].h1()).abs() < 1e-15);
    assert!(Block::new(vec![], vec![], 1).is_err());
}
