//! Trainable step-size pairs and the 1-Lipschitz region
//! `𝓡 = {(h₁, h₂) : (1 + h₂)·√(1 − 2h₁a + h₁²) ≤ 1}`.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepConstraint {
    /// Per-substep pair projected onto `𝓡 ∩ [0,1]²`.
    Region,
    /// Each step clamped to `[0, 1]`.
    Unit,
    /// Each step clamped to `[0, ∞)`.
    NonNegative,
}

impl StepConstraint {
    pub fn name(&self) -> &'static str {
        match self {
            StepConstraint::Region => "region",
            StepConstraint::Unit => "unit",
            StepConstraint::NonNegative => "nonneg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "region" => Some(StepConstraint::Region),
            "unit" => Some(StepConstraint::Unit),
            "nonneg" => Some(StepConstraint::NonNegative),
            _ => None,
        }
    }
}

/// Contractive step `h1` and expansive step `h2`, each split into `substeps` equal parts.
#[derive(Clone, Debug, PartialEq)]
pub struct StepPair {
    pub h: [f64; 2],
    /// Contractivity rate of the contractive field (the slope for orthogonal weights).
    pub a: f64,
    pub substeps: usize,
    pub constraint: StepConstraint,
}

/// Tolerance on the region inequality used for the feasibility test.
pub const REGION_TOL: f64 = 1e-12;

/// `L₁(u) = √(1 − 2ua + u²)`, the contractive step's Lipschitz factor.
pub fn contractive_factor(u: f64, a: f64) -> f64 {
    (1.0 - 2.0 * u * a + u * u).max(0.0).sqrt()
}

/// `(1 + u₂)·L₁(u₁) − 1`; non-positive inside the region.
pub fn region_excess(u1: f64, u2: f64, a: f64) -> f64 {
    (1.0 + u2) * contractive_factor(u1, a) - 1.0
}

fn in_region(u1: f64, u2: f64, a: f64) -> bool {
    (0.0..=1.0).contains(&u1) && (0.0..=1.0).contains(&u2) && region_excess(u1, u2, a) <= REGION_TOL
}

/// Upper boundary `u₂ = min(1, 1/L₁(u₁) − 1)`.
fn boundary(u1: f64, a: f64) -> f64 {
    (1.0 / contractive_factor(u1, a) - 1.0).clamp(0.0, 1.0)
}

fn nearest_on_segment(x0: f64, x1: f64, p: f64) -> f64 {
    p.clamp(x0, x1)
}

/// Euclidean projection of `(u₁, u₂)` onto `𝓡 ∩ [0,1]²`.
///
/// Feasible points (within [`REGION_TOL`]) are returned unchanged, which
/// makes the map idempotent.
pub fn project_region(u1: f64, u2: f64, a: f64) -> (f64, f64) {
    if in_region(u1, u2, a) {
        return (u1, u2);
    }
    // Largest contractive step with u₂ = 0 inside the region.
    let umax = (2.0 * a).min(1.0);
    let dist = |x: f64, y: f64| (x - u1).powi(2) + (y - u2).powi(2);
    let mut best = {
        let x = nearest_on_segment(0.0, umax, u1);
        (x, 0.0)
    };
    let consider = |x: f64, y: f64, best: &mut (f64, f64)| {
        if dist(x, y) < dist(best.0, best.1) {
            *best = (x, y);
        }
    };
    // Right edge u₁ = umax.
    let top = boundary(umax, a);
    consider(umax, nearest_on_segment(0.0, top, u2), &mut best);
    // Curved boundary: coarse scan, then golden-section refinement of the
    // squared distance around the best sample.
    let n = 256;
    let f = |x: f64| dist(x, boundary(x, a));
    let mut k_best: usize = 0;
    for k in 0..=n {
        let x = umax * k as f64 / n as f64;
        if f(x) < f(umax * k_best as f64 / n as f64) {
            k_best = k;
        }
    }
    let mut lo = umax * (k_best.saturating_sub(1)) as f64 / n as f64;
    let mut hi = umax * ((k_best + 1).min(n)) as f64 / n as f64;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    while hi - lo > 1e-15 {
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - g * (hi - lo);
        d = lo + g * (hi - lo);
    }
    let x = 0.5 * (lo + hi);
    consider(x, boundary(x, a), &mut best);
    let (x, mut y) = best;
    // Guard against rounding on the curve.
    while region_excess(x, y, a) > REGION_TOL && y > 0.0 {
        y = (y - 1e-15).max(0.0);
    }
    (x, y)
}

impl StepPair {
    pub fn new(h1: f64, h2: f64, a: f64, substeps: usize, constraint: StepConstraint) -> Self {
        StepPair { h: [h1, h2], a, substeps: substeps.max(1), constraint }
    }

    pub fn h1(&self) -> f64 {
        self.h[0]
    }

    pub fn h2(&self) -> f64 {
        self.h[1]
    }

    /// Project in place according to the constraint.
    pub fn project(&mut self) {
        let s = self.substeps as f64;
        match self.constraint {
            StepConstraint::Region => {
                let (u1, u2) = project_region(self.h[0] / s, self.h[1] / s, self.a);
                if (u1, u2) != (self.h[0] / s, self.h[1] / s) {
                    self.h = [u1 * s, u2 * s];
                }
            }
            StepConstraint::Unit => self.h.iter_mut().for_each(|h| *h = h.clamp(0.0, 1.0)),
            StepConstraint::NonNegative => self.h.iter_mut().for_each(|h| *h = h.max(0.0)),
        }
    }

    pub fn projected(mut self) -> Self {
        self.project();
        self
    }

    /// Non-positive when the region inequality holds (only meaningful for `Region`).
    pub fn slack(&self) -> f64 {
        let s = self.substeps as f64;
        match self.constraint {
            StepConstraint::Region => region_excess(self.h[0] / s, self.h[1] / s, self.a),
            StepConstraint::Unit => self.h.iter().map(|&h| (-h).max(h - 1.0)).fold(f64::NEG_INFINITY, f64::max),
            StepConstraint::NonNegative => self.h.iter().map(|&h| -h).fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Free-function form of the projection on a pair.
pub fn project_steps(p: &StepPair) -> StepPair {
    p.clone().projected()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_nearest(p: (f64, f64), a: f64, n: usize) -> (f64, f64) {
        let mut best = (0.0, 0.0);
        let mut bd = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=n {
                let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                if region_excess(x, y, a) <= 0.0 {
                    let d = (x - p.0).powi(2) + (y - p.1).powi(2);
                    if d < bd {
                        bd = d;
                        best = (x, y);
                    }
                }
            }
        }
        best
    }

    #[test]
    fn feasible_points_are_fixed() {
        assert_eq!(project_region(0.0, 0.0, 0.5), (0.0, 0.0));
        assert_eq!(project_region(1.0, 0.0, 0.5), (1.0, 0.0));
    }

    #[test]
    fn pure_expansion_is_pulled_down() {
        let (x, y) = project_region(0.0, 0.5, 0.5);
        assert!(y < 0.5);
        assert!(region_excess(x, y, 0.5) <= REGION_TOL);
        // Dense scan of the curved boundary, which is where the nearest point lies.
        let mut oracle = (0.0, 0.0);
        let mut bd = f64::INFINITY;
        for i in 0..=1_000_000 {
            let x = i as f64 * 1e-6;
            let y = boundary(x, 0.5);
            let d = x * x + (y - 0.5).powi(2);
            if d < bd {
                bd = d;
                oracle = (x, y);
            }
        }
        assert!((x - oracle.0).abs() < 1e-6 && (y - oracle.1).abs() < 1e-6, "{x} {y} vs {oracle:?}");
    }

    #[test]
    fn projection_matches_grid_oracle() {
        for &(p, a) in &[((0.9, 0.9), 0.5), ((0.2, 0.3), 0.3), ((1.5, 0.1), 0.5), ((0.7, 0.05), 0.9), ((0.3, 2.0), 0.95)] {
            let (x, y) = project_region(p.0, p.1, a);
            let g = grid_nearest(p, a, 1000);
            let d = ((x - p.0).powi(2) + (y - p.1).powi(2)).sqrt();
            let dg = ((g.0 - p.0).powi(2) + (g.1 - p.1).powi(2)).sqrt();
            assert!(d <= dg + 1e-9, "projection {x},{y} farther than grid point {g:?}");
            assert!(dg - d < 2e-3);
        }
    }

    #[test]
    fn substep_scaling() {
        let mut p = StepPair::new(1.6, 0.8, 0.5, 2, StepConstraint::Region);
        p.project();
        assert!(p.slack() <= REGION_TOL);
        let q = project_steps(&p);
        assert_eq!(p, q);
    }
}
