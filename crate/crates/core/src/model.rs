//! Priors, discounting and the change of variables that turns the
//! posterior-mean process into Brownian motion.
//!
//! With unit observation variance the posterior variance after `n`
//! observations is `v0 / (1 + v0 n)`. Measured in `s = v / c`, the posterior
//! mean (rescaled by `1/sqrt(c)`) is a standard Brownian motion running
//! backwards in `s`, and the discount factor between two stopping points
//! `s_a > s_b` is `exp(1/s_a - 1/s_b)`.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

/// Geometric discounting `beta` and its continuous-time rate `c = -ln(beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Discounting {
    beta: f64,
    c: f64,
}

impl Discounting {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(config(format!("discount factor must lie in (0, 1), got {beta}")));
        }
        Ok(Self { beta, c: -beta.ln() })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Continuous discount rate `-ln(beta)`.
    pub fn rate(&self) -> f64 {
        self.c
    }
}

/// Convenience wrapper around [`Discounting::new`].
pub fn make_discounting(beta: f64) -> Result<Discounting> {
    Discounting::new(beta)
}

/// Normal prior (or posterior) `N(u, v)` on an arm's unknown mean, with known
/// observation variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalArm {
    u: f64,
    v: f64,
    sigma2: f64,
}

impl NormalArm {
    pub fn new(u: f64, v: f64, sigma2: f64) -> Result<Self> {
        if !u.is_finite() {
            return Err(config(format!("prior mean must be finite, got {u}")));
        }
        if !(v > 0.0 && v.is_finite()) {
            return Err(config(format!("prior variance must be positive, got {v}")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(config(format!("observation variance must be positive, got {sigma2}")));
        }
        Ok(Self { u, v, sigma2 })
    }

    /// Arm with unit observation variance.
    pub fn unit(u: f64, v: f64) -> Result<Self> {
        Self::new(u, v, 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.u
    }

    pub fn variance(&self) -> f64 {
        self.v
    }

    pub fn obs_variance(&self) -> f64 {
        self.sigma2
    }

    /// Signal-to-noise ratio `v / sigma2`.
    pub fn snr(&self) -> f64 {
        self.v / self.sigma2
    }

    pub fn is_normalized(&self) -> bool {
        self.sigma2 == 1.0
    }

    /// Conjugate update after observing `x`.
    pub fn posterior_update(&self, x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(config(format!("observation must be finite, got {x}")));
        }
        let precision = 1.0 / self.v + 1.0 / self.sigma2;
        let v = 1.0 / precision;
        let u = v * (self.u / self.v + x / self.sigma2);
        Ok(Self { u, v, sigma2: self.sigma2 })
    }

    /// Rescale to unit observation variance; see [`AffineMap`].
    pub fn normalize(&self) -> (NormalArm, AffineMap) {
        let scale = self.sigma2.sqrt();
        let arm = NormalArm { u: 0.0, v: self.v / self.sigma2, sigma2: 1.0 };
        (arm, AffineMap { shift: self.u, scale })
    }

    pub fn time_change(&self, d: &Discounting) -> ScaledState {
        ScaledState { s0: self.v / d.rate(), z_shift: 0.0 }
    }
}

/// Free-function form of [`NormalArm::posterior_update`].
pub fn posterior_update(arm: &NormalArm, x: f64) -> Result<NormalArm> {
    arm.posterior_update(x)
}

/// Free-function form of [`NormalArm::normalize`].
pub fn normalize(arm: &NormalArm) -> (NormalArm, AffineMap) {
    arm.normalize()
}

/// Free-function form of [`NormalArm::time_change`].
pub fn time_change(arm: &NormalArm, d: &Discounting) -> ScaledState {
    arm.time_change(d)
}

/// Location/scale map taking an index of the normalized arm back to the
/// original reward units: `index = shift + scale * normalized_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub shift: f64,
    pub scale: f64,
}

impl AffineMap {
    pub fn identity() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }

    pub fn apply(&self, normalized_index: f64) -> f64 {
        self.shift + self.scale * normalized_index
    }
}

/// Root state of the Brownian stopping problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledState {
    /// `s0 = v / c`.
    pub s0: f64,
    /// Offset `(lambda - u0) / sqrt(c)` for a candidate index `lambda`.
    pub z_shift: f64,
}

impl ScaledState {
    /// Offset for a candidate index `lambda` of an arm with mean `u0`.
    pub fn with_candidate(self, lambda: f64, u0: f64, d: &Discounting) -> Self {
        Self { z_shift: (lambda - u0) / d.rate().sqrt(), ..self }
    }
}

pub(crate) fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn discounting_rate() {
        let d = Discounting::new(0.5).unwrap();
        assert_relative_eq!(d.rate(), std::f64::consts::LN_2, epsilon = 1e-15);
        let d = Discounting::new(0.9).unwrap();
        assert_relative_eq!(d.rate(), 0.105_360_515_657_826_3, epsilon = 1e-15);
        assert!(d.rate() > 1.0 - d.beta());
    }

    #[test]
    fn discounting_rejects_endpoints() {
        for beta in [0.0, 1.0, -0.3, 1.5, f64::NAN] {
            assert!(matches!(Discounting::new(beta), Err(Error::Config(_))));
        }
    }

    #[test]
    fn normalize_examples() {
        let (arm, map) = NormalArm::new(5.0, 2.0, 4.0).unwrap().normalize();
        assert_eq!((arm.mean(), arm.variance(), arm.obs_variance()), (0.0, 0.5, 1.0));
        assert_eq!(map, AffineMap { shift: 5.0, scale: 2.0 });

        let (arm, map) = NormalArm::unit(0.0, 1.0).unwrap().normalize();
        assert_eq!(arm, NormalArm::unit(0.0, 1.0).unwrap());
        assert_eq!(map, AffineMap::identity());

        let (arm, map) = NormalArm::unit(-1.0, 0.1).unwrap().normalize();
        assert_eq!((arm.mean(), arm.variance()), (0.0, 0.1));
        assert_eq!(map, AffineMap { shift: -1.0, scale: 1.0 });
    }

    #[test]
    fn posterior_examples() {
        let arm = NormalArm::unit(0.0, 1.0).unwrap();
        let p = arm.posterior_update(2.0).unwrap();
        assert_relative_eq!(p.mean(), 1.0);
        assert_relative_eq!(p.variance(), 0.5);
        let p = arm.posterior_update(0.0).unwrap();
        assert_eq!(p.mean(), 0.0);
        assert_relative_eq!(p.variance(), 0.5);
    }

    #[test]
    fn posterior_variance_after_n_updates() {
        let v0 = 0.37;
        let mut arm = NormalArm::unit(0.2, v0).unwrap();
        for n in 1..=200 {
            let before = arm.variance();
            arm = arm.posterior_update((n as f64).sin()).unwrap();
            assert!(arm.variance() < before);
            assert_relative_eq!(arm.variance(), v0 / (1.0 + v0 * n as f64), max_relative = 1e-12);
        }
    }

    #[test]
    fn time_change_examples() {
        let d = Discounting::new(0.9).unwrap();
        let st = NormalArm::unit(0.0, 0.1).unwrap().time_change(&d);
        assert_relative_eq!(st.s0, 0.949_122_3, epsilon = 1e-6);

        let st = NormalArm::unit(0.0, d.rate()).unwrap().time_change(&d);
        assert_relative_eq!(st.s0, 1.0, epsilon = 1e-15);

        let d = Discounting::new((-1.0f64).exp()).unwrap();
        let st = NormalArm::unit(0.0, 1.0).unwrap().time_change(&d);
        assert_relative_eq!(st.s0, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn invalid_arms() {
        assert!(NormalArm::new(0.0, 0.0, 1.0).is_err());
        assert!(NormalArm::new(0.0, 1.0, -1.0).is_err());
        assert!(NormalArm::new(f64::INFINITY, 1.0, 1.0).is_err());
    }
}
