//! Automatic entropy temperature.

use crate::error::{check_finite, Result};
use crate::nn::AdamState;

/// `alpha = exp(log_alpha)`, adjusted so the policy entropy tracks a target.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTemp {
    pub log_alpha: f64,
    pub target_entropy: f64,
    /// A fixed temperature ignores [`EntropyTemp::update`].
    pub auto: bool,
    adam: AdamState,
}

impl EntropyTemp {
    pub fn new(alpha: f64, target_entropy: f64, auto: bool, learning_rate: f64) -> Self {
        Self {
            log_alpha: alpha.ln(),
            target_entropy,
            auto,
            adam: AdamState::new(1, learning_rate),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Gradient of `alpha * (entropy - target)` with respect to `log_alpha`.
    pub fn gradient(&self, entropy: f64) -> f64 {
        self.alpha() * (entropy - self.target_entropy)
    }

    /// One Adam step on `log_alpha`. Low entropy raises alpha.
    pub fn update(&mut self, entropy: f64) -> Result<()> {
        check_finite("entropy estimate", &[entropy])?;
        if !self.auto {
            return Ok(());
        }
        let g = [self.gradient(entropy)];
        let mut p = [self.log_alpha];
        self.adam.step("log_alpha", &mut p, &g)?;
        self.log_alpha = p[0];
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_on_target_leaves_alpha() {
        let mut t = EntropyTemp::new(1e-5, -3.0, true, 3e-4);
        let before = t.log_alpha;
        t.update(-3.0).unwrap();
        assert_eq!(t.log_alpha, before);
    }

    #[test]
    fn low_entropy_raises_alpha_and_high_lowers_it() {
        let mut t = EntropyTemp::new(1e-5, -3.0, true, 3e-4);
        t.update(-10.0).unwrap();
        assert!(t.alpha() > 1e-5);
        let mut t = EntropyTemp::new(1e-5, -3.0, true, 3e-4);
        t.update(4.0).unwrap();
        assert!(t.alpha() < 1e-5 && t.alpha() > 0.0);
    }

    #[test]
    fn starts_at_the_requested_value() {
        let t = EntropyTemp::new(1e-5, -300.0, true, 3e-4);
        assert!((t.alpha() - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn fixed_temperature_ignores_updates() {
        let mut t = EntropyTemp::new(1.0, 0.0, false, 3e-4);
        t.update(-5.0).unwrap();
        assert_eq!(t.alpha(), 1.0);
        assert!(t.update(f64::NAN).is_err());
    }
}
