use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::flows;
use crate::linalg;

/// Piecewise-constant switching signal over a family of autonomous fields.
#[derive(Clone, Debug)]
pub struct SwitchSchedule {
    fields: Vec<VectorField>,
    signal: Vec<(usize, f64)>,
}

impl SwitchSchedule {
    pub fn new(fields: Vec<VectorField>, signal: Vec<(usize, f64)>) -> Result<Self> {
        if let Some(f) = fields.first() {
            if fields.iter().any(|g| g.dim() != f.dim()) {
                return Err(Error::Incompatible("switching fields of different dimension".into()));
            }
        }
        for &(i, t) in &signal {
            if i >= fields.len() {
                return Err(Error::InvalidArgument(format!("signal references field {i} of {}", fields.len())));
            }
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidArgument(format!("durations must be positive, got {t}")));
            }
        }
        Ok(SwitchSchedule { fields, signal })
    }

    pub fn signal(&self) -> &[(usize, f64)] {
        &self.signal
    }

    pub fn total_time(&self) -> f64 {
        self.signal.iter().map(|s| s.1).sum()
    }

    /// Contraction rate `μ` of a field, when it is a contractive gradient field.
    fn rate(f: &VectorField) -> Option<f64> {
        match f {
            VectorField::Grad(g) if g.sign() < 0.0 && g.alpha().iter().all(|&a| a >= 0.0) && g.width() >= g.dim() => {
                let smin = linalg::singular_value_range(g.matrix()).0;
                let amin = g.alpha().iter().copied().fold(f64::INFINITY, f64::min);
                Some(g.activation().slope() * amin * smin * smin)
            }
            _ => None,
        }
    }

    /// `Σ L·t̄ − Σ μ·t`; the switched flow is non-expansive when this is ≤ 0.
    pub fn balance(&self) -> f64 {
        self.signal
            .iter()
            .map(|&(i, t)| match Self::rate(&self.fields[i]) {
                Some(mu) => -mu * t,
                None => self.fields[i].lipschitz_bound() * t,
            })
            .sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.balance() <= 0.0
    }

    /// Exact-flow composition approximated by RK4 with `steps_per_unit` steps per unit time.
    pub fn simulate(&self, x: &[f64], steps_per_unit: usize) -> Vec<f64> {
        let mut y = x.to_vec();
        for &(i, t) in &self.signal {
            let steps = ((t * steps_per_unit as f64).ceil() as usize).max(1);
            let f = &self.fields[i];
            y = flows::rk4(|z| f.value(z), &y, t, steps);
        }
        y
    }
}
