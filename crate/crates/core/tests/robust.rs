mod common;

use common::rng;
use geoflow::blocks::{build_lipschitz_block, BlockPattern, Layer, Network};
use geoflow::linalg::{self, Mat};
use geoflow::robust::{certified_radius, certify, empirical_lipschitz, margin, pgd_l2, robust_accuracy, AttackConfig};

#[test]
fn margin_examples() {
    assert_eq!(margin(&[1.0, 0.0, 0.0], 0).unwrap(), 1.0);
    assert_eq!(margin(&[0.4, 0.4, 0.4], 2).unwrap(), 0.0);
    assert_eq!(margin(&[3.0, 1.0, 2.0], 0).unwrap(), 1.0);
    assert!(margin(&[1.0, 2.0], 5).is_err());
}

#[test]
fn certified_radius_examples() {
    assert_eq!(certified_radius(0.0, 1.0).unwrap(), 0.0);
    assert!((certified_radius(2f64.sqrt(), 1.0).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(certified_radius(-1.0, 1.0).unwrap(), 0.0);
    assert!(certified_radius(1.0, 0.0).is_err());
    assert!(certified_radius(1.0, -2.0).is_err());
}

/// Logits `(x₁, −x₁)`: the decision boundary is the line `x₁ = 0`.
fn linear_classifier() -> Network {
    let mut net = Network::new(2);
    net.push(Layer::affine(Mat::from_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]), vec![0.0, 0.0], false)).unwrap();
    net
}

#[test]
fn pgd_finds_the_hyperplane() {
    let net = linear_classifier();
    assert_eq!(pgd_l2(&net, &[0.7, 0.3], 0, &AttackConfig::new(0.0)).unwrap(), None);
    for d in [0.1, 0.5, 1.3] {
        let x = [d, 0.4];
        assert!(pgd_l2(&net, &x, 0, &AttackConfig::new(0.95 * d)).unwrap().is_none());
        let adv = pgd_l2(&net, &x, 0, &AttackConfig::new(1.05 * d)).unwrap().expect("flip");
        assert!(linalg::norm(&linalg::sub(&adv, &x)) <= 1.05 * d + 1e-12);
    }
    assert!(pgd_l2(&net, &[1.0], 0, &AttackConfig::new(0.1)).is_err());
    assert!(pgd_l2(&net, &[1.0, 0.0], 0, &AttackConfig::new(-0.1)).is_err());
}

#[test]
fn empirical_lipschitz_examples() {
    let id = Network::new(3);
    let e = empirical_lipschitz(&id, &mut |r| linalg::randn(r, 3), 200, 0).unwrap();
    assert!((e - 1.0).abs() <= 1e-12);

    let mut twice = Network::new(3);
    twice.push(Layer::affine(Mat::identity(3).scale(2.0), vec![0.5; 3], false)).unwrap();
    let e = empirical_lipschitz(&twice, &mut |r| linalg::randn(r, 3), 200, 0).unwrap();
    assert!((e - 2.0).abs() <= 1e-9);

    let net = build_lipschitz_block(4, 5, 2, 0.5, BlockPattern::GradGrad, &mut rng(1)).unwrap();
    let e = empirical_lipschitz(&net, &mut |r| linalg::randn(r, 4), 2000, 0).unwrap();
    assert!(e <= 1.0 + 1e-9);
    assert!(empirical_lipschitz(&net, &mut |r| linalg::randn(r, 4), 0, 0).is_err());
}

#[test]
fn certification_is_sound_on_a_linear_classifier() {
    let net = linear_classifier();
    let mut r = rng(2);
    let x: Vec<Vec<f64>> = (0..40).map(|_| linalg::randn(&mut r, 2)).collect();
    let labels: Vec<usize> = x.iter().map(|p| if p[0] >= 0.0 { 0 } else { 1 }).collect();
    let attack = AttackConfig { restarts: 5, ..AttackConfig::new(0.1) };
    let report = certify(&net, &x, &labels, 0.99, &attack).unwrap();
    assert_eq!(report.certified(), 40);
    assert!(report.violations().is_empty());
    // The bound for this head is √2 and the margin 2|x₁|, so r = |x₁| exactly.
    for row in &report.rows {
        assert!((row.certified_radius - x[row.index][0].abs()).abs() <= 1e-12);
        assert!(!row.attack_found);
    }
    // Beyond the radius the attack succeeds.
    let beyond = robust_accuracy(&net, &x, &labels, &AttackConfig::new(10.0)).unwrap();
    assert_eq!(beyond, 0.0);
    assert_eq!(robust_accuracy(&net, &x, &labels, &AttackConfig::new(0.0)).unwrap(), 1.0);
}
