//! Network assembly: dynamical blocks of flow steps, lifting and projection
//! layers, and the step-size constraint machinery.

mod build;
mod lipschitz;
mod schedule;
mod serialize;
mod steps;

pub use build::{
    build_lipschitz_block, build_mass_network, build_presnov_block, BlockPattern, GradScheme, PresnovOptions, INITIAL_STEP,
};
pub use lipschitz::step_factor;
pub use schedule::SwitchSchedule;
pub use serialize::{fmt_hex, parse_hex, read_model, write_model, HEADER};
pub use steps::{
    contractive_factor, project_region, project_steps, region_excess, StepConstraint, StepPair, REGION_TOL,
};

use crate::error::{check_dim, Error, Result};
use crate::fields::VectorField;
use crate::flows::{self, FlowStep, Scheme};
use crate::linalg::{self, Mat};
use crate::params::{Param, ParamMut, Parameterized, Weight};

/// Where a flow step takes its step size from.
#[derive(Clone, Debug, PartialEq)]
pub enum StepBinding {
    /// The step's own `h`, trained as a parameter.
    Own,
    /// The step's own `h`, held fixed.
    Fixed,
    /// `frac · pairs[pair].h[which]`.
    Pair { pair: usize, which: usize, frac: f64 },
}

/// A dynamical block: `steps` applied in order, the whole sequence `repeat` times.
#[derive(Clone, Debug)]
pub struct Block {
    pub(crate) steps: Vec<FlowStep>,
    pub(crate) bind: Vec<StepBinding>,
    pub(crate) repeat: usize,
}

impl Block {
    pub fn new(steps: Vec<FlowStep>, bind: Vec<StepBinding>, repeat: usize) -> Result<Self> {
        if steps.is_empty() || steps.len() != bind.len() || repeat == 0 {
            return Err(Error::InvalidArgument("block needs ≥ 1 step, one binding per step and repeat ≥ 1".into()));
        }
        let n = steps[0].dim();
        if steps.iter().any(|s| s.dim() != n) {
            return Err(Error::Incompatible("flow steps of a block act on different dimensions".into()));
        }
        Ok(Block { steps, bind, repeat })
    }

    pub fn single(step: FlowStep, bind: StepBinding) -> Self {
        Block { steps: vec![step], bind: vec![bind], repeat: 1 }
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim()
    }

    pub fn steps(&self) -> &[FlowStep] {
        &self.steps
    }

    pub fn bindings(&self) -> &[StepBinding] {
        &self.bind
    }

    pub fn repeat(&self) -> usize {
        self.repeat
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Flow(Block),
    /// `x ↦ α W x`
    Lift { weight: Weight, scale: f64, constrained: bool },
    /// `x ↦ W x`
    Project { weight: Weight, constrained: bool },
    /// Append `s` zeros to `x ∈ ℝᵏ`.
    MassLift { k: usize, s: usize },
    /// `(x₁ + o, …, x_k + o)` with `o = Σᵢ x_{k+i} / k`, so `𝟏ᵀ` is preserved for any `s`.
    MassProject { k: usize, s: usize },
    /// `x ↦ W x + b`
    Affine { weight: Weight, bias: Vec<f64>, constrained: bool },
}

impl Layer {
    pub fn lift(w: Mat, scale: f64, constrained: bool) -> Layer {
        Layer::Lift { weight: Weight::free(w), scale, constrained }
    }

    pub fn project(w: Mat, constrained: bool) -> Layer {
        Layer::Project { weight: Weight::free(w), constrained }
    }

    pub fn affine(w: Mat, bias: Vec<f64>, constrained: bool) -> Layer {
        Layer::Affine { weight: Weight::free(w), bias, constrained }
    }

    pub fn flow(step: FlowStep) -> Layer {
        Layer::Flow(Block::single(step, StepBinding::Own))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Flow(_) => "flow",
            Layer::Lift { .. } => "lift",
            Layer::Project { .. } => "project",
            Layer::MassLift { .. } => "mass_lift",
            Layer::MassProject { .. } => "mass_project",
            Layer::Affine { .. } => "affine",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Layer::Flow(b) => b.dim(),
            Layer::Lift { weight, .. } | Layer::Project { weight, .. } | Layer::Affine { weight, .. } => weight.cols(),
            Layer::MassLift { k, .. } => *k,
            Layer::MassProject { k, s } => k + s,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Layer::Flow(b) => b.dim(),
            Layer::Lift { weight, .. } | Layer::Project { weight, .. } | Layer::Affine { weight, .. } => weight.rows(),
            Layer::MassLift { k, s } => k + s,
            Layer::MassProject { k, .. } => *k,
        }
    }

    fn apply_linear(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Lift { weight, scale, .. } => linalg::scaled(&weight.get().matvec(x), *scale),
            Layer::Project { weight, .. } => weight.get().matvec(x),
            Layer::Affine { weight, bias, .. } => linalg::add(&weight.get().matvec(x), bias),
            Layer::MassLift { s, .. } => {
                let mut y = x.to_vec();
                y.extend(std::iter::repeat_n(0.0, *s));
                y
            }
            Layer::MassProject { k, .. } => {
                let o = x[*k..].iter().sum::<f64>() / *k as f64;
                x[..*k].iter().map(|v| v + o).collect()
            }
            Layer::Flow(_) => unreachable!(),
        }
    }

    /// Reverse mode of the non-flow layers; `grad` is this layer's slot.
    fn backward_linear(&self, x: &[f64], w: &[f64], grad: &mut [f64]) -> Vec<f64> {
        match self {
            Layer::Lift { weight, scale, .. } => {
                let n = weight.len();
                linalg::add_outer(&mut grad[..n], *scale, w, x);
                grad[n] += linalg::dot(w, &weight.get().matvec(x));
                linalg::scaled(&weight.get().tmatvec(w), *scale)
            }
            Layer::Project { weight, .. } => {
                linalg::add_outer(grad, 1.0, w, x);
                weight.get().tmatvec(w)
            }
            Layer::Affine { weight, .. } => {
                let n = weight.len();
                linalg::add_outer(&mut grad[..n], 1.0, w, x);
                linalg::axpy(&mut grad[n..], 1.0, w);
                weight.get().tmatvec(w)
            }
            Layer::MassLift { k, .. } => w[..*k].to_vec(),
            Layer::MassProject { k, s } => {
                let o = w.iter().sum::<f64>() / *k as f64;
                let mut dx = w.to_vec();
                dx.extend(std::iter::repeat_n(o, *s));
                dx
            }
            Layer::Flow(_) => unreachable!(),
        }
    }
}

/// One application of a flow step inside the unrolled network.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Op {
    Step { layer: usize, step: usize },
    Linear { layer: usize },
}

/// Offsets of every parameter slot in the flat layout.
#[derive(Clone, Debug)]
struct Layout {
    /// Per layer: offset of its first parameter; for flow layers, per step
    /// `(field offset, field len, own h offset)`.
    layer: Vec<usize>,
    steps: Vec<Vec<(usize, usize, Option<usize>)>>,
    pairs: usize,
    total: usize,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub(crate) input_dim: usize,
    pub(crate) layers: Vec<Layer>,
    pub(crate) pairs: Vec<StepPair>,
}

impl Network {
    pub fn new(input_dim: usize) -> Self {
        Network { input_dim, layers: Vec::new(), pairs: Vec::new() }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, Layer::output_dim)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn pairs(&self) -> &[StepPair] {
        &self.pairs
    }

    pub fn pairs_mut(&mut self) -> &mut [StepPair] {
        &mut self.pairs
    }

    pub fn add_pair(&mut self, pair: StepPair) -> usize {
        self.pairs.push(pair);
        self.pairs.len() - 1
    }

    pub fn push(&mut self, layer: Layer) -> Result<()> {
        if layer.input_dim() != self.output_dim() {
            return Err(Error::Incompatible(format!(
                "{} layer expects input dim {}, previous output is {}",
                layer.kind_name(),
                layer.input_dim(),
                self.output_dim()
            )));
        }
        if let Layer::Affine { weight, bias, .. } = &layer {
            if bias.len() != weight.rows() {
                return Err(Error::Dimension { expected: weight.rows(), found: bias.len() });
            }
        }
        if let Layer::Flow(b) = &layer {
            for bind in &b.bind {
                if let StepBinding::Pair { pair, which, .. } = bind {
                    if *pair >= self.pairs.len() || *which > 1 {
                        return Err(Error::InvalidArgument(format!("binding to missing step pair {pair}/{which}")));
                    }
                }
            }
        }
        self.layers.push(layer);
        Ok(())
    }

    /// Append all layers and pairs of `other`, re-indexing its pair bindings.
    pub fn append(&mut self, mut other: Network) -> Result<()> {
        check_dim(self.output_dim(), other.input_dim)?;
        let base = self.pairs.len();
        self.pairs.append(&mut other.pairs);
        for mut layer in other.layers {
            if let Layer::Flow(b) = &mut layer {
                for bind in &mut b.bind {
                    if let StepBinding::Pair { pair, .. } = bind {
                        *pair += base;
                    }
                }
            }
            self.push(layer)?;
        }
        Ok(())
    }

    pub(crate) fn step_h(&self, step: &FlowStep, bind: &StepBinding) -> f64 {
        match bind {
            StepBinding::Own | StepBinding::Fixed => step.h(),
            StepBinding::Pair { pair, which, frac } => frac * self.pairs[*pair].h[*which],
        }
    }

    pub(crate) fn ops(&self) -> Vec<Op> {
        let mut ops = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Flow(b) => {
                    for _ in 0..b.repeat {
                        ops.extend((0..b.steps.len()).map(|step| Op::Step { layer: li, step }));
                    }
                }
                _ => ops.push(Op::Linear { layer: li }),
            }
        }
        ops
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut layer = Vec::with_capacity(self.layers.len());
        let mut steps = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            layer.push(off);
            let mut st = Vec::new();
            match l {
                Layer::Flow(b) => {
                    for (s, bind) in b.steps.iter().zip(&b.bind) {
                        let n = s.field().n_params();
                        let own = if *bind == StepBinding::Own { Some(off + n) } else { None };
                        st.push((off, n, own));
                        off += n + own.is_some() as usize;
                    }
                }
                Layer::Lift { weight, .. } => off += weight.len() + 1,
                Layer::Project { weight, .. } => off += weight.len(),
                Layer::Affine { weight, bias, .. } => off += weight.len() + bias.len(),
                Layer::MassLift { .. } | Layer::MassProject { .. } => {}
            }
            steps.push(st);
        }
        let pairs = off;
        Layout { layer, steps, pairs, total: pairs + 2 * self.pairs.len() }
    }

    pub(crate) fn apply_op(&self, op: Op, x: &[f64]) -> Result<Vec<f64>> {
        match op {
            Op::Step { layer, step } => {
                let Layer::Flow(b) = &self.layers[layer] else { unreachable!() };
                let s = &b.steps[step];
                s.apply_with(x, self.step_h(s, &b.bind[step]))
            }
            Op::Linear { layer } => Ok(self.layers[layer].apply_linear(x)),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        let mut y = x.to_vec();
        for op in self.ops() {
            y = self.apply_op(op, &y)?;
        }
        Ok(y)
    }

    /// Forward pass over a batch; parallel over samples when the `parallel` feature is on.
    pub fn forward_all(&self, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        crate::par::map(batch, |x| self.forward(x)).into_iter().collect()
    }

    pub fn forward_all_seq(&self, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        batch.iter().map(|x| self.forward(x)).collect()
    }

    /// States entering each op, plus the final output.
    pub(crate) fn trace(&self, ops: &[Op], x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut states = Vec::with_capacity(ops.len() + 1);
        states.push(x.to_vec());
        for &op in ops {
            let next = self.apply_op(op, states.last().expect("nonempty"))?;
            states.push(next);
        }
        Ok(states)
    }

    /// Reverse sweep over `ops` given the recorded input states; returns the
    /// input cotangent and accumulates effective-weight gradients into `grad`.
    pub(crate) fn backward_ops(&self, ops: &[Op], states: &[Vec<f64>], w: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let lay = self.layout();
        debug_assert_eq!(grad.len(), lay.total);
        let mut w = w.to_vec();
        for (i, &op) in ops.iter().enumerate().rev() {
            let x = &states[i];
            match op {
                Op::Step { layer, step } => {
                    let Layer::Flow(b) = &self.layers[layer] else { unreachable!() };
                    let s = &b.steps[step];
                    let bind = &b.bind[step];
                    let (off, n, own) = lay.steps[layer][step];
                    let (dx, dh) = s.backward(x, self.step_h(s, bind), &w, &mut grad[off..off + n])?;
                    match bind {
                        StepBinding::Own => grad[own.expect("own slot")] += dh,
                        StepBinding::Fixed => {}
                        StepBinding::Pair { pair, which, frac } => grad[lay.pairs + 2 * pair + which] += frac * dh,
                    }
                    w = dx;
                }
                Op::Linear { layer } => {
                    let start = lay.layer[layer];
                    let end = lay.layer.get(layer + 1).copied().unwrap_or(lay.pairs);
                    w = self.layers[layer].backward_linear(x, &w, &mut grad[start..end]);
                }
            }
        }
        Ok(w)
    }

    /// `(wᵀ ∂N/∂x, wᵀ ∂N/∂θ)` with the parameter gradient taken with respect
    /// to effective weights; see [`crate::params::pullback`].
    pub fn vjp(&self, x: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim(self.input_dim, x.len())?;
        check_dim(self.output_dim(), w.len())?;
        let ops = self.ops();
        let states = self.trace(&ops, x)?;
        let mut grad = vec![0.0; self.n_params()];
        let dx = self.backward_ops(&ops, &states, w, &mut grad)?;
        Ok((dx, grad))
    }

    /// Input gradient only.
    pub fn input_vjp(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        Ok(self.vjp(x, w)?.0)
    }

    /// The trailing discrete-gradient step used by the residual loss.
    fn residual_split(&self) -> Result<(Vec<Op>, usize, usize)> {
        let mut ops = self.ops();
        match ops.pop() {
            Some(Op::Step { layer, step }) => {
                let Layer::Flow(b) = &self.layers[layer] else { unreachable!() };
                let s = &b.steps[step];
                match (s.scheme(), s.field()) {
                    (Scheme::GonzalezDg, VectorField::Grad(_)) => Ok((ops, layer, step)),
                    _ => Err(Error::Incompatible("residual loss needs a final gonzalez step on a gradient field".into())),
                }
            }
            _ => Err(Error::Incompatible("residual loss needs a final gonzalez step on a gradient field".into())),
        }
    }

    /// `y − (z + s·h·∇̄V(z, y))` where `z` is the state entering the final
    /// discrete-gradient step. No implicit solve is performed.
    pub fn discrete_grad_residual(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim, x.len())?;
        check_dim(self.output_dim(), y.len())?;
        let (ops, layer, step) = self.residual_split()?;
        let z = self.trace(&ops, x)?.pop().expect("nonempty");
        let Layer::Flow(b) = &self.layers[layer] else { unreachable!() };
        let s = &b.steps[step];
        let VectorField::Grad(g) = s.field() else { unreachable!() };
        let h = self.step_h(s, &b.bind[step]);
        let d = flows::discrete_grad(g, &z, y);
        let mut r = linalg::sub(y, &z);
        linalg::axpy(&mut r, -g.sign() * h, &d);
        Ok(r)
    }

    /// Reverse mode of [`Network::discrete_grad_residual`] with respect to
    /// `x` and the effective parameters, for the residual cotangent `w`.
    pub(crate) fn discrete_grad_residual_vjp(&self, x: &[f64], y: &[f64], w: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let (ops, layer, step) = self.residual_split()?;
        let states = self.trace(&ops, x)?;
        let z = states.last().expect("nonempty");
        let Layer::Flow(b) = &self.layers[layer] else { unreachable!() };
        let s = &b.steps[step];
        let VectorField::Grad(g) = s.field() else { unreachable!() };
        let bind = &b.bind[step];
        let h = self.step_h(s, bind);
        let sh = g.sign() * h;
        let lay = self.layout();
        let (off, n, own) = lay.steps[layer][step];
        let mut tmp = vec![0.0; n];
        let (dz_d, _) = flows::discrete_grad_vjp(g, z, y, w, &mut tmp);
        linalg::axpy(&mut grad[off..off + n], -sh, &tmp);
        let dh = -g.sign() * linalg::dot(w, &flows::discrete_grad(g, z, y));
        match bind {
            StepBinding::Own => grad[own.expect("own slot")] += dh,
            StepBinding::Fixed => {}
            StepBinding::Pair { pair, which, frac } => grad[lay.pairs + 2 * pair + which] += frac * dh,
        }
        let mut dz = linalg::scaled(w, -1.0);
        linalg::axpy(&mut dz, -sh, &dz_d);
        self.backward_ops(&ops, &states, &dz, grad)
    }

    /// Product of certified per-layer Lipschitz constants.
    pub fn lipschitz_bound(&self) -> f64 {
        lipschitz::network_bound(self)
    }

    /// Apply every step-pair projection.
    pub fn project_steps(&mut self) {
        self.pairs.iter_mut().for_each(StepPair::project);
    }

    /// Largest constraint violation over region pairs (≤ 0 when feasible; −∞ without pairs).
    pub fn constraint_slack(&self) -> f64 {
        self.pairs
            .iter()
            .filter(|p| p.constraint == StepConstraint::Region)
            .map(StepPair::slack)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Total integration time: sum of effective step sizes over all flow step applications.
    pub fn total_time(&self) -> f64 {
        self.ops()
            .into_iter()
            .filter_map(|op| match op {
                Op::Step { layer, step } => {
                    let Layer::Flow(b) = &self.layers[layer] else { unreachable!() };
                    Some(self.step_h(&b.steps[step], &b.bind[step]))
                }
                Op::Linear { .. } => None,
            })
            .sum()
    }

    /// `(Σh over contractive steps, Σh over the rest)`; a step counts as
    /// contractive when it is an Euler step of a gradient field with sign −1.
    pub fn time_by_regime(&self) -> (f64, f64) {
        let mut out = (0.0, 0.0);
        for op in self.ops() {
            if let Op::Step { layer, step } = op {
                let Layer::Flow(b) = &self.layers[layer] else { unreachable!() };
                let s = &b.steps[step];
                let h = self.step_h(s, &b.bind[step]);
                if lipschitz::is_contractive(s) {
                    out.0 += h;
                } else {
                    out.1 += h;
                }
            }
        }
        out
    }
}

impl Parameterized for Network {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(Param<'a>)) {
        for l in &self.layers {
            match l {
                Layer::Flow(b) => {
                    for (s, bind) in b.steps.iter().zip(&b.bind) {
                        s.field().visit_params(f);
                        if *bind == StepBinding::Own {
                            f(Param::Values(std::slice::from_ref(&s.h)));
                        }
                    }
                }
                Layer::Lift { weight, scale, .. } => {
                    f(Param::Weight(weight));
                    f(Param::Values(std::slice::from_ref(scale)));
                }
                Layer::Project { weight, .. } => f(Param::Weight(weight)),
                Layer::Affine { weight, bias, .. } => {
                    f(Param::Weight(weight));
                    f(Param::Values(bias));
                }
                Layer::MassLift { .. } | Layer::MassProject { .. } => {}
            }
        }
        for p in &self.pairs {
            f(Param::Values(&p.h));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamMut<'_>)) {
        for l in &mut self.layers {
            match l {
                Layer::Flow(b) => {
                    for (s, bind) in b.steps.iter_mut().zip(&b.bind) {
                        s.field.visit_params_mut(f);
                        if *bind == StepBinding::Own {
                            f(ParamMut::Values(std::slice::from_mut(&mut s.h)));
                        }
                    }
                }
                Layer::Lift { weight, scale, .. } => {
                    f(ParamMut::Weight(weight));
                    f(ParamMut::Values(std::slice::from_mut(scale)));
                }
                Layer::Project { weight, .. } => f(ParamMut::Weight(weight)),
                Layer::Affine { weight, bias, .. } => {
                    f(ParamMut::Weight(weight));
                    f(ParamMut::Values(bias));
                }
                Layer::MassLift { .. } | Layer::MassProject { .. } => {}
            }
        }
        for p in &mut self.pairs {
            f(ParamMut::Values(&mut p.h));
        }
    }
}
