use serde::{Deserialize, Serialize};

use super::{Block, Layer, Network, StepBinding, StepConstraint, StepPair};
use crate::error::{Error, Result};
use crate::fields::{Activation, ActivationField, GradField, MassField, SphereField, VectorField};
use crate::flows::{FlowStep, Scheme};
use crate::linalg::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockPattern {
    /// Expansive layers are gradient fields `+QᵀΣ(Qx+q)`.
    GradGrad,
    /// Expansive layers are `Σ(Qx+q)`.
    GradFree,
}

impl BlockPattern {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grad_grad" => Some(BlockPattern::GradGrad),
            "grad_free" => Some(BlockPattern::GradFree),
            _ => None,
        }
    }
}

/// Initial step size for every trainable step.
pub const INITIAL_STEP: f64 = 0.1;

/// `depth` pairs of `[contractive(h₁/S), expansive(h₂/S)]ˢ` on `ℝⁿ` with
/// orthogonal weights and region-constrained step pairs.
pub fn build_lipschitz_block(
    n: usize,
    depth: usize,
    substeps: usize,
    a: f64,
    pattern: BlockPattern,
    rng: &mut Rng,
) -> Result<Network> {
    if depth == 0 || substeps == 0 {
        return Err(Error::InvalidArgument("depth and substeps must be ≥ 1".into()));
    }
    let act = Activation::leaky_max(a)?;
    let mut net = Network::new(n);
    let frac = 1.0 / substeps as f64;
    for _ in 0..depth {
        let pair = net.add_pair(StepPair::new(INITIAL_STEP, INITIAL_STEP, a, substeps, StepConstraint::Region).projected());
        let contractive = FlowStep::euler(GradField::contractive_orthogonal(n, act, rng), 0.0)?;
        let expansive: VectorField = match pattern {
            BlockPattern::GradGrad => GradField::expansive_orthogonal(n, act, rng).into(),
            BlockPattern::GradFree => ActivationField::orthogonal(n, act, rng).into(),
        };
        let expansive = FlowStep::euler(expansive, 0.0)?;
        let block = Block::new(
            vec![contractive, expansive],
            vec![StepBinding::Pair { pair, which: 0, frac }, StepBinding::Pair { pair, which: 1, frac }],
            substeps,
        )?;
        net.push(Layer::Flow(block))?;
    }
    Ok(net)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScheme {
    Euler,
    Gonzalez,
}

#[derive(Clone, Debug)]
pub struct PresnovOptions {
    /// Hidden width of the net producing the skew entries.
    pub sphere_hidden: usize,
    /// Width `m` of the gradient potentials `αᵀΓ(Az+b)`.
    pub grad_width: usize,
    pub grad_scheme: GradScheme,
    pub act: Activation,
}

impl Default for PresnovOptions {
    fn default() -> Self {
        PresnovOptions { sphere_hidden: 16, grad_width: 16, grad_scheme: GradScheme::Euler, act: Activation::default() }
    }
}

/// `k` stages `Ψ_{X_C} ∘ Ψ_{X_E} ∘ Ψ_{X_S}` on `ℝⁿ`, each sharing one step size.
pub fn build_presnov_block(n: usize, k: usize, opts: &PresnovOptions, rng: &mut Rng) -> Result<Network> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one stage".into()));
    }
    let mut net = Network::new(n);
    let grad_scheme = match opts.grad_scheme {
        GradScheme::Euler => Scheme::ExplicitEuler,
        GradScheme::Gonzalez => Scheme::GonzalezDg,
    };
    for _ in 0..k {
        let pair = net.add_pair(StepPair::new(INITIAL_STEP, 0.0, opts.act.slope(), 1, StepConstraint::NonNegative));
        let sphere = SphereField::random_skew(n, opts.sphere_hidden, 0.5, opts.act, rng);
        let (expansive, contractive) = GradField::random(n, opts.grad_width, 1.0, opts.act, rng).split_signs();
        let steps = vec![
            FlowStep::new(sphere.into(), 0.0, Scheme::EulerHeunNorm)?,
            FlowStep::new(expansive.into(), 0.0, grad_scheme.clone())?,
            FlowStep::new(contractive.into(), 0.0, grad_scheme.clone())?,
        ];
        let bind = vec![StepBinding::Pair { pair, which: 0, frac: 1.0 }; 3];
        net.push(Layer::Flow(Block::new(steps, bind, 1)?))?;
    }
    Ok(net)
}

/// `mass_lift(k → k+s)`, `depth` Euler steps on mass-preserving fields, `mass_project`.
pub fn build_mass_network(k: usize, s: usize, depth: usize, hidden: usize, act: Activation, rng: &mut Rng) -> Result<Network> {
    if k == 0 || s == 0 {
        return Err(Error::InvalidArgument("mass network needs k, s ≥ 1".into()));
    }
    let mut net = Network::new(k);
    net.push(Layer::MassLift { k, s })?;
    for _ in 0..depth {
        let f = MassField::random(k + s, hidden, 0.5, act, rng);
        net.push(Layer::flow(FlowStep::euler(f, INITIAL_STEP)?))?;
    }
    net.push(Layer::MassProject { k, s })?;
    Ok(net)
}
