/// Leaky-max activation `σ(s) = max{s, a·s}` with `a ∈ (0, 1)`.
///
/// `σ` is monotone and 1-Lipschitz with `σ' ∈ {a, 1}`; its antiderivative
/// `γ(s) = ∫₀ˢ σ` is `a`-strongly convex. At the kink the right derivative
/// `σ'(0) = 1` is used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activation {
    slope: f64,
}

impl Default for Activation {
    fn default() -> Self {
        Activation { slope: 0.5 }
    }
}

impl Activation {
    pub fn leaky_max(slope: f64) -> crate::Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(crate::Error::InvalidArgument(format!("activation slope {slope} not in (0,1)")));
        }
        Ok(Activation { slope })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    #[inline]
    pub fn sigma(&self, s: f64) -> f64 {
        if s >= 0.0 {
            s
        } else {
            self.slope * s
        }
    }

    #[inline]
    pub fn dsigma(&self, s: f64) -> f64 {
        if s >= 0.0 {
            1.0
        } else {
            self.slope
        }
    }

    #[inline]
    pub fn gamma(&self, s: f64) -> f64 {
        0.5 * self.dsigma(s) * s * s
    }

    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        h.iter().map(|&s| self.sigma(s)).collect()
    }

    pub fn derivative(&self, h: &[f64]) -> Vec<f64> {
        h.iter().map(|&s| self.dsigma(s)).collect()
    }
}
