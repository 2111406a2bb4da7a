//! Network recipes used by the experiments.

use serde::{Deserialize, Serialize};

use crate::blocks::{
    build_lipschitz_block, build_mass_network, build_presnov_block, Block, BlockPattern, Layer, Network, PresnovOptions,
    StepBinding, StepConstraint, StepPair, INITIAL_STEP,
};
use crate::error::{Error, Result};
use crate::fields::{Activation, ActivationField, GradField, SphereField};
use crate::flows::{FlowStep, Scheme};
use crate::linalg::{self, Mat, Rng};

/// Vector field family of the planar classifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Alternating contractive and expansive layers with region-constrained steps.
    Mixed,
    /// Contractive layers only.
    Contractive,
    /// Expansive layers only.
    Expansive,
}

impl Family {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mixed" => Some(Family::Mixed),
            "contractive" => Some(Family::Contractive),
            "expansive" => Some(Family::Expansive),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Mixed => "mixed",
            Family::Contractive => "contractive",
            Family::Expansive => "expansive",
        }
    }
}

/// `n × k` matrix with orthonormal columns.
fn orthonormal_columns(n: usize, k: usize, rng: &mut Rng) -> Mat {
    let q = linalg::orthogonalize(&Mat::randn(n, n, 0.5, rng)).expect("square");
    Mat::from_fn(n, k, |i, j| q[(i, j)])
}

#[derive(Clone, Debug)]
pub struct PlanarSpec {
    pub family: Family,
    pub width: usize,
    pub layers: usize,
    pub substeps: usize,
    pub slope: f64,
    /// Lipschitz constraints on the dynamical blocks and the head; off for the baseline.
    pub constrained: bool,
    /// Also cap the lifting layer, making the whole network 1-Lipschitz;
    /// only read when `constrained` is set.
    pub constrain_lift: bool,
    /// Expansive field type of the mixed family.
    pub pattern: BlockPattern,
}

impl Default for PlanarSpec {
    fn default() -> Self {
        PlanarSpec { family: Family::Mixed, width: 4, layers: 10, substeps: 1, slope: 0.5, constrained: true, constrain_lift: false, pattern: BlockPattern::GradFree }
    }
}

/// Largest contractive step keeping `x − h∇V` non-expansive when `∇V` is 1-Lipschitz.
const CONTRACTIVE_CAP: f64 = 2.0;

/// `lift(2 → width)`, `layers` residual layers of the chosen family, affine head to 2 logits.
pub fn planar_network(spec: &PlanarSpec, rng: &mut Rng) -> Result<Network> {
    if spec.layers == 0 || spec.width < 2 {
        return Err(Error::InvalidArgument("planar network needs ≥ 1 layer and width ≥ 2".into()));
    }
    let act = Activation::leaky_max(spec.slope)?;
    let n = spec.width;
    let mut net = Network::new(2);
    net.push(Layer::lift(orthonormal_columns(n, 2, rng), 1.0, spec.constrained && spec.constrain_lift))?;
    match spec.family {
        Family::Mixed => {
            if !spec.layers.is_multiple_of(2) {
                return Err(Error::InvalidArgument("mixed family needs an even layer count".into()));
            }
            let mut body = build_lipschitz_block(n, spec.layers / 2, spec.substeps, spec.slope, spec.pattern, rng)?;
            if !spec.constrained {
                body.pairs_mut().iter_mut().for_each(|p| p.constraint = StepConstraint::NonNegative);
            }
            net.append(body)?;
        }
        Family::Contractive => {
            // Pair i drives layers 2i and 2i+1; effective steps lie in [0, 2].
            let constraint = if spec.constrained { StepConstraint::Unit } else { StepConstraint::NonNegative };
            let frac = CONTRACTIVE_CAP;
            for l in 0..spec.layers {
                if l % 2 == 0 {
                    let h = INITIAL_STEP / frac;
                    net.add_pair(StepPair::new(h, h, spec.slope, 1, constraint));
                }
                let pair = net.pairs().len() - 1;
                let step = FlowStep::euler(GradField::contractive_orthogonal(n, act, rng), 0.0)?;
                net.push(Layer::Flow(Block::single(step, StepBinding::Pair { pair, which: l % 2, frac })))?;
            }
        }
        Family::Expansive => {
            for _ in 0..spec.layers {
                net.push(Layer::flow(FlowStep::euler(ActivationField::orthogonal(n, act, rng), INITIAL_STEP)?))?;
            }
        }
    }
    let head = Mat::randn(2, n, 1.0 / (n as f64).sqrt(), rng);
    net.push(Layer::affine(head, vec![0.0; 2], spec.constrained))?;
    crate::train::enforce_constraints(&mut net);
    Ok(net)
}

/// `affine(d → width)`, `stages` sphere/expansive/contractive stages, `affine(width → 1)`.
pub fn regression_network(d: usize, width: usize, stages: usize, opts: &PresnovOptions, rng: &mut Rng) -> Result<Network> {
    let mut net = Network::new(d);
    net.push(Layer::affine(Mat::randn(width, d, 1.0, rng), linalg::scaled(&linalg::randn(rng, width), 0.1), false))?;
    net.append(build_presnov_block(width, stages, opts, rng)?)?;
    net.push(Layer::affine(Mat::randn(1, width, 1.0 / (width as f64).sqrt(), rng), vec![0.0], false))?;
    Ok(net)
}

/// Mass-preserving flow-map network for the SIR experiment.
pub fn sir_network(s: usize, depth: usize, hidden: usize, slope: f64, rng: &mut Rng) -> Result<Network> {
    build_mass_network(3, s, depth, hidden, Activation::leaky_max(slope)?, rng)
}

/// One step `Ψ_G^h ∘ Ψ_S^h` with fixed `h`: norm-preserving Euler–Heun on
/// the skew part, then a discrete-gradient step on the gradient part.
pub fn splitting_network(n: usize, h: f64, width: usize, hidden: usize, slope: f64, rng: &mut Rng) -> Result<Network> {
    let act = Activation::leaky_max(slope)?;
    let sphere = SphereField::random_skew(n, hidden, 0.3, act, rng);
    let grad = GradField::random(n, width, 1.0, act, rng);
    let steps = vec![FlowStep::new(sphere.into(), h, Scheme::EulerHeunNorm)?, FlowStep::new(grad.into(), h, Scheme::GonzalezDg)?];
    let mut net = Network::new(n);
    net.push(Layer::Flow(Block::new(steps, vec![StepBinding::Fixed; 2], 1)?))?;
    Ok(net)
}
