//! Losses, reverse-mode batch gradients and projected minibatch SGD.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::blocks::{Layer, Network, StepBinding};
use crate::error::{check_dim, Error, Result};
use crate::fields::VectorField;
use crate::linalg;
use crate::params::{pullback, Parameterized};

/// Losses above this are treated as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossSpec {
    /// `‖N(x) − y‖²`, averaged over the batch.
    Mse,
    /// Multi-class hinge on the logits.
    Hinge { margin: f64 },
    /// Same functional as `Mse`, used on `(x, Φ(x))` pairs.
    FlowmapMse,
    /// `‖y − (z + s·h·∇̄V(z, y))‖²` with `z` the state before the final
    /// discrete-gradient step.
    DiscreteGradResidual,
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Mse => "mse",
            LossSpec::Hinge { .. } => "hinge",
            LossSpec::FlowmapMse => "flowmap_mse",
            LossSpec::DiscreteGradResidual => "discrete_grad_residual",
        }
    }

    pub fn parse(name: &str, margin: f64) -> Result<Self> {
        let l = match name {
            "mse" => LossSpec::Mse,
            "hinge" => LossSpec::Hinge { margin },
            "flowmap_mse" => LossSpec::FlowmapMse,
            "discrete_grad_residual" => LossSpec::DiscreteGradResidual,
            _ => return Err(Error::Config(format!("unknown loss `{name}`"))),
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Hinge { margin } if !(*margin > 0.0 && margin.is_finite()) => {
                Err(Error::InvalidArgument(format!("hinge margin must be positive, got {margin}")))
            }
            _ => Ok(()),
        }
    }
}

/// Supervision attached to a list of inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Values(Vec<Vec<f64>>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(l) => l.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Targets::Labels(l) => Some(l),
            Targets::Values(_) => None,
        }
    }
}

fn check_label(c: usize, label: usize) -> Result<()> {
    if c < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {c}")));
    }
    if label >= c {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {c} classes")));
    }
    Ok(())
}

/// `Σ_{j≠ℓ} max{0, margin − (z_ℓ − z_j)}`.
pub fn hinge_loss(logits: &[f64], label: usize, margin: f64) -> Result<f64> {
    check_label(logits.len(), label)?;
    Ok(hinge_terms(logits, label, margin).0)
}

fn hinge_terms(logits: &[f64], label: usize, margin: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut g = vec![0.0; logits.len()];
    for (j, &zj) in logits.iter().enumerate() {
        if j == label {
            continue;
        }
        let t = margin - (logits[label] - zj);
        if t > 0.0 {
            loss += t;
            g[j] += 1.0;
            g[label] -= 1.0;
        }
    }
    (loss, g)
}

/// Index of the largest logit (first one on ties).
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_compat(net: &Network, loss: &LossSpec, inputs: &[Vec<f64>], targets: &Targets) -> Result<()> {
    loss.validate()?;
    check_dim(inputs.len(), targets.len())?;
    let c = net.output_dim();
    match (loss, targets) {
        (LossSpec::Hinge { .. }, Targets::Labels(l)) => {
            for &y in l {
                check_label(c, y)?;
            }
        }
        (LossSpec::Hinge { .. }, Targets::Values(_)) => {
            return Err(Error::Incompatible("hinge loss needs class labels".into()));
        }
        (_, Targets::Values(v)) => {
            for y in v {
                check_dim(c, y.len())?;
            }
        }
        (_, Targets::Labels(_)) => {
            return Err(Error::Incompatible(format!("{} loss needs target vectors", loss.name())));
        }
    }
    for x in inputs {
        check_dim(net.input_dim(), x.len())?;
    }
    Ok(())
}

/// Loss, effective-weight gradient and whether the sample is classified correctly.
fn sample(net: &Network, loss: &LossSpec, x: &[f64], t: &Targets, i: usize, want_grad: bool) -> Result<(f64, Vec<f64>, bool)> {
    let mut grad = if want_grad { vec![0.0; net.n_params()] } else { Vec::new() };
    match (loss, t) {
        (LossSpec::DiscreteGradResidual, Targets::Values(v)) => {
            let r = net.discrete_grad_residual(x, &v[i])?;
            let l = linalg::dot(&r, &r);
            if want_grad {
                net.discrete_grad_residual_vjp(x, &v[i], &linalg::scaled(&r, 2.0), &mut grad)?;
            }
            Ok((l, grad, false))
        }
        (LossSpec::Hinge { margin }, Targets::Labels(l)) => {
            let z = net.forward(x)?;
            let (lv, w) = hinge_terms(&z, l[i], *margin);
            if want_grad {
                grad = net.vjp(x, &w)?.1;
            }
            Ok((lv, grad, argmax(&z) == l[i]))
        }
        (_, Targets::Values(v)) => {
            let z = net.forward(x)?;
            let r = linalg::sub(&z, &v[i]);
            let l = linalg::dot(&r, &r);
            if want_grad {
                grad = net.vjp(x, &linalg::scaled(&r, 2.0))?.1;
            }
            Ok((l, grad, false))
        }
        _ => unreachable!("checked by check_compat"),
    }
}

/// Mean loss and gradient over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    /// With respect to the stored (raw) parameters, in visitor order.
    pub grad: Vec<f64>,
    /// Correctly classified samples (classification losses only).
    pub correct: usize,
}

fn batch_grad(net: &Network, loss: &LossSpec, inputs: &[Vec<f64>], targets: &Targets, idx: &[usize]) -> Result<Gradient> {
    let per = crate::par::map(idx, |&i| sample(net, loss, &inputs[i], targets, i, true));
    let mut total = vec![0.0; net.n_params()];
    let mut l = 0.0;
    let mut correct = 0;
    // Fixed-order reduction keeps results independent of the thread count.
    for r in per {
        let (li, g, ok) = r?;
        l += li;
        correct += ok as usize;
        linalg::axpy(&mut total, 1.0, &g);
    }
    let scale = 1.0 / idx.len().max(1) as f64;
    total.iter_mut().for_each(|g| *g *= scale);
    pullback(net, &mut total);
    Ok(Gradient { loss: l * scale, grad: total, correct })
}

/// Gradient of the mean loss over the whole set with respect to every trainable parameter.
pub fn grad(net: &Network, loss: &LossSpec, inputs: &[Vec<f64>], targets: &Targets) -> Result<Gradient> {
    check_compat(net, loss, inputs, targets)?;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let g = batch_grad(net, loss, inputs, targets, &idx)?;
    if !g.loss.is_finite() {
        return Err(Error::NonFinite(format!("{} loss is {}", loss.name(), g.loss)));
    }
    if g.grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of the {} loss", loss.name())));
    }
    Ok(g)
}

/// Mean loss over a set, without gradients.
pub fn evaluate(net: &Network, loss: &LossSpec, inputs: &[Vec<f64>], targets: &Targets) -> Result<f64> {
    check_compat(net, loss, inputs, targets)?;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let per = crate::par::map(&idx, |&i| sample(net, loss, &inputs[i], targets, i, false));
    let mut l = 0.0;
    for r in per {
        l += r?.0;
    }
    Ok(l / inputs.len().max(1) as f64)
}

/// `(1/N) Σ ‖yᵢ − (z_i + s·h·∇̄V(z_i, yᵢ))‖²` over the given pairs.
pub fn discrete_grad_residual_loss(net: &Network, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let (x, y): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
    evaluate(net, &LossSpec::DiscreteGradResidual, &x, &Targets::Values(y))
}

/// Fraction of inputs whose largest logit is the label.
pub fn accuracy(net: &Network, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_dim(inputs.len(), labels.len())?;
    let out = net.forward_all(inputs)?;
    let ok = out.iter().zip(labels).filter(|(z, &l)| argmax(z) == l).count();
    Ok(ok as f64 / inputs.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    /// `(epoch, factor)`: once `epoch` epochs are done, divide the rate by `factor`.
    pub schedule: Vec<(usize, f64)>,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 0.1, schedule: Vec::new(), epochs: 100, batch: 64, seed: 0, momentum: 0.0 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if let Some(&(e, f)) = self.schedule.iter().find(|(_, f)| !(*f > 1.0 && f.is_finite())) {
            return Err(Error::Config(format!("schedule factor at epoch {e} must exceed 1, got {f}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    /// NaN for regression losses.
    pub train_acc: f64,
    /// Largest violation of the region inequality; `-inf` without region pairs.
    pub constraint_slack: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn last_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epoch", "loss", "train_acc", "constraint_slack", "lr"])?;
        for r in &self.rows {
            wr.write_record([
                r.epoch.to_string(),
                r.loss.to_string(),
                r.train_acc.to_string(),
                r.constraint_slack.to_string(),
                r.lr.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Post-step projections: step pairs onto their constraint sets, own steps
/// onto `h ≥ 0`, sign-split potentials onto `α ≥ 0`, capped layers onto `‖W‖₂ ≤ 1`.
pub fn enforce_constraints(net: &mut Network) {
    net.project_steps();
    for layer in net.layers_mut() {
        match layer {
            Layer::Flow(b) => {
                for (s, bind) in b.steps.iter_mut().zip(&b.bind) {
                    if *bind == StepBinding::Own && s.h < 0.0 {
                        s.h = 0.0;
                    }
                    if let VectorField::Grad(g) = s.field_mut() {
                        g.clamp_alpha();
                    }
                }
            }
            Layer::Lift { weight, scale, constrained: true } => {
                weight.cap_norm();
                *scale = scale.clamp(-1.0, 1.0);
            }
            Layer::Project { weight, constrained: true } | Layer::Affine { weight, constrained: true, .. } => {
                weight.cap_norm();
            }
            _ => {}
        }
    }
}

/// Minibatch SGD with momentum, a step-wise learning-rate schedule and the
/// projections of [`enforce_constraints`] after every update.
pub fn train(net: &mut Network, inputs: &[Vec<f64>], targets: &Targets, loss: &LossSpec, cfg: &OptimConfig) -> Result<History> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    cfg.validate()?;
    check_compat(net, loss, inputs, targets)?;
    let classify = matches!(loss, LossSpec::Hinge { .. });
    let mut rng = linalg::rng(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut velocity = vec![0.0; net.n_params()];
    let mut lr = cfg.lr;
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        for &(_, f) in cfg.schedule.iter().filter(|(e, _)| *e == epoch) {
            lr /= f;
        }
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(cfg.batch) {
            let g = batch_grad(net, loss, inputs, targets, idx)?;
            if !g.loss.is_finite() || g.loss > DIVERGENCE_LOSS || g.grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch: epoch + 1, loss: g.loss, history: Box::new(history) });
            }
            sum += g.loss * idx.len() as f64;
            correct += g.correct;
            let mut theta = net.params();
            for ((t, v), d) in theta.iter_mut().zip(&mut velocity).zip(&g.grad) {
                *v = cfg.momentum * *v + d;
                *t -= lr * *v;
            }
            net.set_params(&theta);
            enforce_constraints(net);
        }
        let n = inputs.len() as f64;
        history.rows.push(HistoryRow {
            epoch: epoch + 1,
            loss: sum / n,
            train_acc: if classify { correct as f64 / n } else { f64::NAN },
            constraint_slack: net.constraint_slack(),
            lr,
        });
    }
    Ok(history)
}
