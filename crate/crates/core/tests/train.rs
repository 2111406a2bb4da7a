mod common;

use common::{every_network, gradient_errors, rng};
use geoflow::blocks::{build_lipschitz_block, BlockPattern, Network, REGION_TOL};
use geoflow::experiments::splitting_network;
use geoflow::linalg;
use geoflow::params::Parameterized;
use geoflow::train::{discrete_grad_residual_loss, grad, hinge_loss, train, LossSpec, OptimConfig, Targets};
use geoflow::Error;

#[test]
fn hinge_examples() {
    assert_eq!(hinge_loss(&[1.0, 0.0], 0, 1.0).unwrap(), 0.0);
    assert_eq!(hinge_loss(&[0.5, 0.5, 0.5], 1, 1.0).unwrap(), 2.0);
    assert_eq!(hinge_loss(&[0.0, 3.0, 1.5], 1, 1.0).unwrap(), 0.0);
    assert!(hinge_loss(&[0.0, 1.0], 2, 1.0).is_err());
    assert!(LossSpec::parse("hinge", 0.0).is_err());
}

#[test]
fn zero_depth_identity_target_has_zero_gradient() {
    let net = Network::new(3);
    let x = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 0.5]];
    let g = grad(&net, &LossSpec::Mse, &x, &Targets::Values(x.clone())).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.grad.is_empty());
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..2 {
        for (name, net) in every_network(100 + seed) {
            let (p, x) = gradient_errors(&net, seed);
            assert!(p <= 1.0 && x <= 1.0, "{name}: parameter {p:.3}, input {x:.3}");
        }
    }
}

#[test]
fn training_keeps_steps_feasible_and_lr_zero_is_inert() {
    let mut r = rng(1);
    let net = build_lipschitz_block(3, 3, 1, 0.5, BlockPattern::GradFree, &mut r).unwrap();
    let x: Vec<Vec<f64>> = (0..16).map(|_| linalg::randn(&mut r, 3)).collect();
    let y = Targets::Values(x.iter().map(|v| linalg::scaled(v, 3.0)).collect());

    let mut frozen = net.clone();
    let cfg0 = OptimConfig { lr: 0.0, epochs: 3, batch: 4, ..Default::default() };
    train(&mut frozen, &x, &y, &LossSpec::Mse, &cfg0).unwrap();
    assert_eq!(frozen.params(), net.params());

    // A large rate pushes the steps against the region every update.
    let mut live = net.clone();
    let cfg = OptimConfig { lr: 0.5, epochs: 5, batch: 4, ..Default::default() };
    let h = train(&mut live, &x, &y, &LossSpec::Mse, &cfg).unwrap();
    assert_eq!(h.rows.len(), 5);
    assert!(h.rows.iter().all(|row| row.constraint_slack >= -REGION_TOL));
    assert!(live.constraint_slack() >= -REGION_TOL);
    assert!(live.lipschitz_bound() <= 1.0 + 1e-9);
}

#[test]
fn divergence_aborts_with_history() {
    use geoflow::blocks::Layer;
    use geoflow::linalg::Mat;
    let mut net = Network::new(1);
    net.push(Layer::affine(Mat::from_rows(&[&[1.0]]), vec![0.0], false)).unwrap();
    let x = vec![vec![1e3]];
    let y = Targets::Values(vec![vec![0.0]]);
    let cfg = OptimConfig { lr: 10.0, epochs: 50, batch: 1, ..Default::default() };
    match train(&mut net, &x, &y, &LossSpec::Mse, &cfg) {
        Err(Error::Diverged { history, .. }) => assert!(history.rows.len() < 50),
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn zero_field_split(n: usize) -> Network {
    let mut net = splitting_network(n, 0.1, 4, 4, 0.5, &mut rng(2)).unwrap();
    net.set_params(&vec![0.0; net.n_params()]);
    net
}

#[test]
fn residual_loss_examples() {
    let mut r = rng(3);
    // V = 0 and a zero skew net: both steps are the identity.
    let net = zero_field_split(3);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..5).map(|_| linalg::randn(&mut r, 3)).map(|x| (x.clone(), x)).collect();
    assert_eq!(discrete_grad_residual_loss(&net, &pairs).unwrap(), 0.0);

    let net = splitting_network(3, 0.1, 4, 4, 0.5, &mut r).unwrap();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        (0..5).map(|_| linalg::randn(&mut r, 3)).map(|x| (x.clone(), net.forward(&x).unwrap())).collect();
    assert!(discrete_grad_residual_loss(&net, &pairs).unwrap() <= 1e-20);
}

#[test]
fn residual_loss_gradient_matches_finite_differences() {
    let mut r = rng(4);
    let net = splitting_network(3, 0.1, 4, 4, 0.5, &mut r).unwrap();
    let x: Vec<Vec<f64>> = (0..4).map(|_| linalg::randn(&mut r, 3)).collect();
    let y = Targets::Values((0..4).map(|_| linalg::randn(&mut r, 3)).collect());
    let loss = LossSpec::DiscreteGradResidual;
    let g = grad(&net, &loss, &x, &y).unwrap();
    let theta = net.params();
    for i in 0..theta.len() {
        let e = 1e-6;
        let mut p = theta.clone();
        p[i] += e;
        let mut c = net.clone();
        c.set_params(&p);
        let up = grad(&c, &loss, &x, &y).unwrap().loss;
        p[i] -= 2.0 * e;
        c.set_params(&p);
        let dn = grad(&c, &loss, &x, &y).unwrap().loss;
        let fd = (up - dn) / (2.0 * e);
        assert!((fd - g.grad[i]).abs() <= 1e-4f64.max(1e-3 * fd.abs()), "param {i}: {fd} vs {}", g.grad[i]);
    }
}
