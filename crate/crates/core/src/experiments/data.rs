//! Synthetic datasets and the reference dynamics they are drawn from.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows;
use crate::linalg::{self, Rng};
use crate::train::Targets;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Targets,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl Dataset {
    /// Build with a seeded random split; `test_fraction` of the points (rounded down) go to the test set.
    pub fn new(inputs: Vec<Vec<f64>>, targets: Targets, test_fraction: f64, seed: u64) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dimension { expected: inputs.len(), found: targets.len() });
        }
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..inputs.len()).collect();
        idx.shuffle(&mut linalg::rng(seed ^ 0x9e37_79b9_7f4a_7c15));
        let n_test = (test_fraction * inputs.len() as f64).floor() as usize;
        let test = idx.split_off(inputs.len() - n_test);
        Ok(Dataset { inputs, targets, train: idx, test, seed })
    }

    fn subset(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Targets) {
        let x = idx.iter().map(|&i| self.inputs[i].clone()).collect();
        let t = match &self.targets {
            Targets::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i].clone()).collect()),
        };
        (x, t)
    }

    pub fn train_set(&self) -> (Vec<Vec<f64>>, Targets) {
        self.subset(&self.train)
    }

    pub fn test_set(&self) -> (Vec<Vec<f64>>, Targets) {
        self.subset(&self.test)
    }
}

pub const INNER_RADIUS: f64 = 1.0;
pub const ANNULUS: (f64, f64) = (1.5, 2.5);

fn polar(rng: &mut Rng, r: f64) -> Vec<f64> {
    let t: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    vec![r * t.cos(), r * t.sin()]
}

/// Disk of radius 1 (label 0) against the annulus `1.5 ≤ ‖x‖ ≤ 2.5` (label 1),
/// both sampled uniformly by area. Classes alternate in input order.
pub fn gen_planar_classification(n_per_class: usize, test_fraction: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("need at least one point per class".into()));
    }
    let mut rng = linalg::rng(seed);
    let (a, b) = ANNULUS;
    let mut inputs = Vec::with_capacity(2 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        let r0 = INNER_RADIUS * rng.random::<f64>().sqrt();
        inputs.push(polar(&mut rng, r0));
        labels.push(0);
        let r1 = (a * a + rng.random::<f64>() * (b * b - a * a)).sqrt();
        inputs.push(polar(&mut rng, r1));
        labels.push(1);
    }
    Dataset::new(inputs, Targets::Labels(labels), test_fraction, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionTarget {
    /// `x² + |x| + sin x` on `[−2, 2]`.
    F,
    /// `√(x² + y²)` on `[−2, 2]²`.
    G,
}

impl RegressionTarget {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f" => Some(RegressionTarget::F),
            "g" => Some(RegressionTarget::G),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            RegressionTarget::F => 1,
            RegressionTarget::G => 2,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RegressionTarget::F => x[0] * x[0] + x[0].abs() + x[0].sin(),
            RegressionTarget::G => x[0].hypot(x[1]),
        }
    }
}

pub fn gen_regression(target: RegressionTarget, n: usize, test_fraction: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut rng = linalg::rng(seed);
    let inputs: Vec<Vec<f64>> =
        (0..n).map(|_| (0..target.dim()).map(|_| rng.random_range(-2.0..=2.0)).collect()).collect();
    let values = inputs.iter().map(|x| vec![target.eval(x)]).collect();
    Dataset::new(inputs, Targets::Values(values), test_fraction, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    /// `ẏ = (−y₁y₂, y₁y₂ − y₂, y₂)`.
    Sir,
    /// `ẋᵢ = sin³xᵢ + xᵢ³` on ℝ⁴.
    X1,
    /// Pendulum `(x₂, −sin x₁)`.
    X2,
}

impl System {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sir" => Some(System::Sir),
            "x1" => Some(System::X1),
            "x2" => Some(System::X2),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Sir => "sir",
            System::X1 => "x1",
            System::X2 => "x2",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            System::Sir => 3,
            System::X1 => 4,
            System::X2 => 2,
        }
    }

    pub fn field(&self, y: &[f64]) -> Vec<f64> {
        match self {
            System::Sir => {
                let i = y[0] * y[1];
                vec![-i, i - y[1], y[1]]
            }
            System::X1 => y.iter().map(|x| x.sin().powi(3) + x.powi(3)).collect(),
            System::X2 => vec![y[1], -y[0].sin()],
        }
    }

    /// Default sampling box for the initial conditions.
    pub fn default_box(&self) -> Vec<(f64, f64)> {
        match self {
            System::Sir => vec![(0.0, 1.0); 3],
            System::X1 => vec![(-1.0, 1.0); 4],
            System::X2 => vec![(-2.0, 2.0); 2],
        }
    }
}

/// Sub-steps per unit step of the reference integrator.
pub const REFERENCE_REFINEMENT: usize = 1000;

/// Time-`h` flow map approximated by RK4 with step `h / 1000`.
pub fn reference_flow(system: System, h: f64, x: &[f64]) -> Vec<f64> {
    flows::rk4(|y| system.field(y), x, h, REFERENCE_REFINEMENT)
}

/// Pendulum energy `x₂²/2 − cos x₁`.
pub fn pendulum_energy(x: &[f64]) -> f64 {
    0.5 * x[1] * x[1] - x[0].cos()
}

/// Uniform point on the probability simplex.
fn simplex_point(rng: &mut Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Pairs `(x, Φʰ(x))`. SIR initial conditions are uniform on the simplex
/// (the box is ignored); others are uniform in `domain`.
pub fn gen_flowmap_pairs(system: System, h: f64, n: usize, domain: &[(f64, f64)], test_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("flow time must be positive, got {h}")));
    }
    if system != System::Sir && domain.len() != system.dim() {
        return Err(Error::Dimension { expected: system.dim(), found: domain.len() });
    }
    let mut rng = linalg::rng(seed);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| match system {
            System::Sir => simplex_point(&mut rng, 3),
            _ => domain.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect(),
        })
        .collect();
    let values = crate::par::map(&inputs, |x| reference_flow(system, h, x));
    Dataset::new(inputs, Targets::Values(values), test_fraction, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planar_geometry() {
        let d = gen_planar_classification(200, 0.25, 3).unwrap();
        let Targets::Labels(l) = &d.targets else { panic!() };
        for (x, &y) in d.inputs.iter().zip(l) {
            let r = linalg::norm(x);
            if y == 0 {
                assert!(r <= INNER_RADIUS);
            } else {
                assert!((ANNULUS.0..=ANNULUS.1).contains(&r));
            }
        }
        let mut gap = f64::INFINITY;
        for (i, x) in d.inputs.iter().enumerate() {
            for (j, z) in d.inputs.iter().enumerate() {
                if l[i] != l[j] {
                    gap = gap.min(linalg::norm(&linalg::sub(x, z)));
                }
            }
        }
        assert!(gap >= 0.5 - 1e-9);
        let mut all: Vec<usize> = d.train.iter().chain(&d.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..400).collect::<Vec<_>>());
        assert_eq!(d.test.len(), 100);
    }

    #[test]
    fn single_pair_has_both_labels() {
        let d = gen_planar_classification(1, 0.0, 0).unwrap();
        assert_eq!(d.targets, Targets::Labels(vec![0, 1]));
    }

    #[test]
    fn regression_values() {
        assert_eq!(RegressionTarget::F.eval(&[0.0]), 0.0);
        assert!((RegressionTarget::F.eval(&[1.0]) - 2.841470985).abs() < 1e-9);
        assert!((RegressionTarget::G.eval(&[3.0, 4.0]) / 5.0 - 1.0).abs() < 1e-15);
        let d = gen_regression(RegressionTarget::G, 50, 0.2, 1).unwrap();
        assert!(d.inputs.iter().flatten().all(|v| (-2.0..=2.0).contains(v)));
    }

    #[test]
    fn sir_pairs_conserve_mass() {
        let d = gen_flowmap_pairs(System::Sir, 1.0, 30, &[], 0.0, 2).unwrap();
        let Targets::Values(v) = &d.targets else { panic!() };
        for (x, y) in d.inputs.iter().zip(v) {
            assert!(x.iter().all(|&c| c >= 0.0));
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((x.iter().sum::<f64>() - y.iter().sum::<f64>()).abs() < 1e-10);
        }
        let eq = reference_flow(System::Sir, 1.0, &[0.4, 0.0, 0.6]);
        assert_eq!(eq, vec![0.4, 0.0, 0.6]);
    }

    #[test]
    fn pendulum_energy_is_conserved() {
        let d = gen_flowmap_pairs(System::X2, 1.0, 20, &System::X2.default_box(), 0.0, 5).unwrap();
        let Targets::Values(v) = &d.targets else { panic!() };
        for (x, y) in d.inputs.iter().zip(v) {
            assert!((pendulum_energy(x) - pendulum_energy(y)).abs() < 1e-8);
        }
    }

    #[test]
    fn rk4_order_is_four() {
        for (sys, x0) in [(System::Sir, vec![0.5, 0.3, 0.2]), (System::X2, vec![1.0, 0.5])] {
            let exact = flows::rk4(|y| sys.field(y), &x0, 1.0, 4096);
            let err = |n| linalg::norm(&linalg::sub(&flows::rk4(|y| sys.field(y), &x0, 1.0, n), &exact));
            let order = (err(10) / err(20)).log2();
            assert!((3.7..=4.3).contains(&order), "{sys:?}: observed order {order}");
        }
    }
}
