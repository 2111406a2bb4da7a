//! Margins, certified radii, `ℓ²` PGD and empirical Lipschitz probes.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;

use crate::blocks::Network;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, Rng};
use crate::train::argmax;

fn check_label(c: usize, label: usize) -> Result<()> {
    if c < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {c}")));
    }
    if label >= c {
        return Err(Error::InvalidArgument(format!("label {label} out of range for {c} classes")));
    }
    Ok(())
}

/// Best competing class.
fn runner_up(logits: &[f64], label: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &z) in logits.iter().enumerate() {
        if j != label && (best == usize::MAX || z > logits[best]) {
            best = j;
        }
    }
    best
}

/// `z_ℓ − max_{j≠ℓ} z_j`.
pub fn margin(logits: &[f64], label: usize) -> Result<f64> {
    check_label(logits.len(), label)?;
    Ok(logits[label] - logits[runner_up(logits, label)])
}

/// `max{0, margin} / (√2 · lip)`.
pub fn certified_radius(margin: f64, lip: f64) -> Result<f64> {
    if !(lip > 0.0) {
        return Err(Error::InvalidArgument(format!("Lipschitz bound must be positive, got {lip}")));
    }
    Ok(margin.max(0.0) / (std::f64::consts::SQRT_2 * lip))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub eps: f64,
    pub steps: usize,
    /// Defaults to `eps / 4`.
    pub step_size: Option<f64>,
    /// Restarts after the first run start from a uniform point in the ball.
    pub restarts: usize,
    /// Start the first run from a random point too.
    pub random_start: bool,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(eps: f64) -> Self {
        AttackConfig { eps, steps: 10, step_size: None, restarts: 1, random_start: false, seed: 0 }
    }
}

/// Uniform sample from the ball of radius `r`.
fn ball_point(rng: &mut Rng, n: usize, r: f64) -> Vec<f64> {
    let d = linalg::randn(rng, n);
    let nd = linalg::norm(&d);
    if nd == 0.0 {
        return vec![0.0; n];
    }
    let u: f64 = rng.random();
    linalg::scaled(&d, r * u.powf(1.0 / n as f64) / nd)
}

fn project_ball(x0: &[f64], x: &mut [f64], eps: f64) {
    let d = linalg::sub(x, x0);
    let nd = linalg::norm(&d);
    if nd > eps {
        for ((xi, x0i), di) in x.iter_mut().zip(x0).zip(&d) {
            *xi = x0i + di * (eps / nd);
        }
    }
}

/// `ℓ²` projected gradient ascent on the negative margin. Returns the first
/// iterate whose predicted class differs from `label`.
pub fn pgd_l2(net: &Network, x: &[f64], label: usize, cfg: &AttackConfig) -> Result<Option<Vec<f64>>> {
    check_dim(net.input_dim(), x.len())?;
    check_label(net.output_dim(), label)?;
    if !(cfg.eps >= 0.0) || !cfg.eps.is_finite() {
        return Err(Error::InvalidArgument(format!("attack budget must be non-negative, got {}", cfg.eps)));
    }
    if cfg.eps == 0.0 {
        return Ok(None);
    }
    let step = cfg.step_size.unwrap_or(cfg.eps / 4.0);
    let mut rng = linalg::rng(cfg.seed);
    let flipped = |z: &[f64]| argmax(z) != label;
    for r in 0..cfg.restarts.max(1) {
        let mut xa = x.to_vec();
        if r > 0 || cfg.random_start {
            linalg::axpy(&mut xa, 1.0, &ball_point(&mut rng, x.len(), cfg.eps));
            project_ball(x, &mut xa, cfg.eps);
        }
        let mut z = net.forward(&xa)?;
        if flipped(&z) {
            return Ok(Some(xa));
        }
        for _ in 0..cfg.steps {
            let j = runner_up(&z, label);
            let mut w = vec![0.0; z.len()];
            w[j] = 1.0;
            w[label] = -1.0;
            let g = net.input_vjp(&xa, &w)?;
            let ng = linalg::norm(&g);
            if !ng.is_finite() {
                return Err(Error::NonFinite("attack gradient".into()));
            }
            if ng == 0.0 {
                break;
            }
            linalg::axpy(&mut xa, step / ng, &g);
            project_ball(x, &mut xa, cfg.eps);
            z = net.forward(&xa)?;
            if flipped(&z) {
                return Ok(Some(xa));
            }
        }
    }
    Ok(None)
}

/// Largest observed `‖N(x) − N(y)‖ / ‖x − y‖`.
///
/// Half of the pairs are random (with separations over several scales);
/// the other half are local pairs along a direction refined by a few power
/// iterations of `JᵀJ`, which targets the steepest local stretch.
pub fn empirical_lipschitz(net: &Network, sampler: &mut dyn FnMut(&mut Rng) -> Vec<f64>, pairs: usize, seed: u64) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    let mut rng = linalg::rng(seed);
    let n = net.input_dim();
    let ratio = |x: &[f64], y: &[f64]| -> Result<f64> {
        let d = linalg::norm(&linalg::sub(x, y));
        if d == 0.0 {
            return Ok(0.0);
        }
        Ok(linalg::norm(&linalg::sub(&net.forward(x)?, &net.forward(y)?)) / d)
    };
    let mut best: f64 = 0.0;
    for k in 0..pairs {
        let x = sampler(&mut rng);
        check_dim(n, x.len())?;
        let mut v = linalg::randn(&mut rng, n);
        let nv = linalg::norm(&v);
        if nv == 0.0 {
            continue;
        }
        v = linalg::scaled(&v, 1.0 / nv);
        let y = if k % 2 == 0 {
            let scale = [1e-3, 1e-1, 1.0][(k / 2) % 3];
            linalg::add(&x, &linalg::scaled(&v, scale))
        } else {
            let delta = 1e-4;
            for _ in 0..5 {
                let xe = linalg::add(&x, &linalg::scaled(&v, delta));
                let jv = linalg::scaled(&linalg::sub(&net.forward(&xe)?, &net.forward(&x)?), 1.0 / delta);
                let jtjv = net.input_vjp(&x, &jv)?;
                let m = linalg::norm(&jtjv);
                if m == 0.0 || !m.is_finite() {
                    break;
                }
                v = linalg::scaled(&jtjv, 1.0 / m);
            }
            linalg::add(&x, &linalg::scaled(&v, delta))
        };
        best = best.max(ratio(&x, &y)?);
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertRow {
    pub index: usize,
    pub label: usize,
    pub pred: usize,
    pub margin: f64,
    pub lip_bound: f64,
    pub certified_radius: f64,
    pub attack_eps: f64,
    pub attack_found: bool,
    pub attack_norm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CertReport {
    pub rows: Vec<CertRow>,
}

impl CertReport {
    pub fn certified(&self) -> usize {
        self.rows.iter().filter(|r| r.certified_radius > 0.0).count()
    }

    /// Rows where an attack succeeded strictly inside the certified radius.
    pub fn violations(&self) -> Vec<&CertRow> {
        self.rows.iter().filter(|r| r.attack_norm.is_some_and(|n| n < r.certified_radius)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some(r) => Err(Error::Soundness(format!(
                "input {} flipped at distance {:e} inside certified radius {:e}",
                r.index,
                r.attack_norm.unwrap_or(f64::NAN),
                r.certified_radius
            ))),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "label", "pred", "margin", "lip_bound", "certified_radius", "attack_eps", "attack_success"])?;
        for r in &self.rows {
            wr.write_record([
                r.index.to_string(),
                r.label.to_string(),
                r.pred.to_string(),
                r.margin.to_string(),
                r.lip_bound.to_string(),
                r.certified_radius.to_string(),
                r.attack_eps.to_string(),
                (r.attack_found as u8).to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Certify every input with the network's Lipschitz bound, then attack it at
/// `fraction · radius` (or `attack.eps` when the radius is zero).
///
/// Inputs are processed in parallel; input `i` uses seed `attack.seed + i`.
pub fn certify(net: &Network, inputs: &[Vec<f64>], labels: &[usize], fraction: f64, attack: &AttackConfig) -> Result<CertReport> {
    check_dim(inputs.len(), labels.len())?;
    let lip = net.lipschitz_bound();
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let rows = crate::par::map(&idx, |&i| -> Result<CertRow> {
        let z = net.forward(&inputs[i])?;
        let m = margin(&z, labels[i])?;
        let r = if lip.is_finite() { certified_radius(m, lip)? } else { 0.0 };
        let eps = if r > 0.0 { fraction * r } else { attack.eps };
        let cfg = AttackConfig { eps, seed: attack.seed.wrapping_add(i as u64), ..attack.clone() };
        let adv = pgd_l2(net, &inputs[i], labels[i], &cfg)?;
        let attack_norm = adv.as_ref().map(|a| linalg::norm(&linalg::sub(a, &inputs[i])));
        Ok(CertRow {
            index: i,
            label: labels[i],
            pred: argmax(&z),
            margin: m,
            lip_bound: lip,
            certified_radius: r,
            attack_eps: eps,
            attack_found: adv.is_some(),
            attack_norm,
        })
    });
    let report = CertReport { rows: rows.into_iter().collect::<Result<_>>()? };
    report.validate()?;
    Ok(report)
}

/// Accuracy under `pgd_l2` at budget `eps`: clean misclassifications count as failures.
pub fn robust_accuracy(net: &Network, inputs: &[Vec<f64>], labels: &[usize], attack: &AttackConfig) -> Result<f64> {
    check_dim(inputs.len(), labels.len())?;
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let ok = crate::par::map(&idx, |&i| -> Result<bool> {
        let cfg = AttackConfig { seed: attack.seed.wrapping_add(i as u64), ..attack.clone() };
        if argmax(&net.forward(&inputs[i])?) != labels[i] {
            return Ok(false);
        }
        Ok(pgd_l2(net, &inputs[i], labels[i], &cfg)?.is_none())
    });
    let mut n = 0;
    for r in ok {
        n += r? as usize;
    }
    Ok(n as f64 / inputs.len().max(1) as f64)
}
