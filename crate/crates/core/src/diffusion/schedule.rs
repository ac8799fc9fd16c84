use serde::{Deserialize, Serialize};

use crate::error::{Result, SgfmError};

/// Variance-preserving schedule with linear `β(τ)` on `τ ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

impl NoiseSchedule {
    pub fn new(beta_min: f64, beta_max: f64) -> Result<Self> {
        let s = Self { beta_min, beta_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min > 0.0 && self.beta_max >= self.beta_min && self.beta_max.is_finite()) {
            return Err(SgfmError::InvalidArgument(format!(
                "need 0 < beta_min <= beta_max, got {} / {}",
                self.beta_min, self.beta_max
            )));
        }
        if self.alpha_bar(1.0) >= 0.01 {
            return Err(SgfmError::InvalidArgument(
                "schedule must retain < 1% signal variance at τ = 1".into(),
            ));
        }
        Ok(())
    }

    pub fn beta(&self, tau: f64) -> f64 {
        self.beta_min + tau * (self.beta_max - self.beta_min)
    }

    /// `∫₀^τ β(s) ds`.
    pub fn integral(&self, tau: f64) -> f64 {
        self.beta_min * tau + 0.5 * (self.beta_max - self.beta_min) * tau * tau
    }

    /// Retained signal variance `ᾱ(τ) = exp(-∫₀^τ β)`.
    pub fn alpha_bar(&self, tau: f64) -> f64 {
        (-self.integral(tau)).exp()
    }

    /// `1 - ᾱ(τ)`, accurate for small τ.
    pub fn one_minus_alpha_bar(&self, tau: f64) -> f64 {
        -(-self.integral(tau)).exp_m1()
    }

    /// Noise standard deviation `√(1 - ᾱ(τ))`.
    pub fn sigma(&self, tau: f64) -> f64 {
        self.one_minus_alpha_bar(tau).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_values_and_monotonicity() {
        let s = NoiseSchedule::default();
        assert!((s.alpha_bar(0.0) - 1.0).abs() < 1e-12);
        assert!(s.alpha_bar(1.0) < 0.01);
        let mut prev = s.alpha_bar(0.0);
        for i in 1..=1000 {
            let a = s.alpha_bar(i as f64 / 1000.0);
            assert!(a < prev);
            prev = a;
        }
        assert!(NoiseSchedule::new(0.1, 1.0).is_err());
        assert!(NoiseSchedule::new(0.0, 20.0).is_err());
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let s = NoiseSchedule::default();
        let tau = 0.37;
        let m = 10_000;
        let h = tau / m as f64;
        let quad: f64 = (0..m).map(|i| s.beta((i as f64 + 0.5) * h) * h).sum();
        assert!((quad - s.integral(tau)).abs() < 1e-9);
    }
}
