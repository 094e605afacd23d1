//! Discrete-time Gittins index by backward induction.
//!
//! For a unit-variance arm with prior `N(u0, v0)` and discount `beta`, the
//! index is `u0 + sqrt(c) * b_{v0}(v0 / c)`, where `b_{v0}` is the boundary of
//! the Brownian stopping problem in which stopping is allowed only at the
//! ladder `s_n = (v0 / c) / (1 + v0 n)` (the posterior variance after `n`
//! observations, divided by `c`). Between consecutive ladder points the
//! relative discount is exactly `beta`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::model::{check_positive, Discounting, NormalArm};
use crate::quadrature::Quadrature;
use crate::sweep::{Grid, ValueSweep};

/// Prior variances at or below this are treated as a known mean.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

/// Grid, horizon and quadrature settings for the backward induction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Ladder truncation: stop once `beta^N` falls to this level.
    pub truncation_tol: f64,
    /// z-grid nodes per `s0 / sqrt(2)` (an upper bound for the boundary).
    pub points_per_scale: f64,
    /// Fixed z-grid step overriding `points_per_scale`.
    pub dz: Option<f64>,
    /// Lower grid edge in standard deviations of the total remaining diffusion.
    pub lower_span: f64,
    /// Fixed lower grid edge overriding `lower_span`.
    pub z_min: Option<f64>,
    pub quadrature: Quadrature,
    /// `C - g` at or below this counts as stopping.
    pub boundary_tolerance: f64,
    pub max_grid_points: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            truncation_tol: 1e-10,
            points_per_scale: 300.0,
            dz: None,
            lower_span: 7.0,
            z_min: None,
            quadrature: Quadrature::InterpolantExact,
            boundary_tolerance: 1e-12,
            max_grid_points: 2_000_000,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_tol > 0.0 && self.truncation_tol < 1e-3) {
            return Err(config(format!("truncation_tol must be in (0, 1e-3), got {}", self.truncation_tol)));
        }
        if !(self.points_per_scale >= 10.0) {
            return Err(config(format!("points_per_scale must be >= 10, got {}", self.points_per_scale)));
        }
        if let Some(dz) = self.dz {
            if !(dz > 0.0 && dz.is_finite()) {
                return Err(config(format!("dz must be positive, got {dz}")));
            }
        }
        if !(self.lower_span > 0.0) {
            return Err(config("lower_span must be positive"));
        }
        if let Some(z) = self.z_min {
            if !(z < 0.0) {
                return Err(config(format!("z_min must be negative, got {z}")));
            }
        }
        self.quadrature.validate()
    }

    /// Halve the grid step and tighten the truncation.
    pub fn refined(&self) -> Self {
        Self {
            points_per_scale: 2.0 * self.points_per_scale,
            dz: self.dz.map(|d| d / 2.0),
            truncation_tol: self.truncation_tol * 1e-2,
            ..self.clone()
        }
    }
}

/// Which computation produced an index value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Avg,
    Ca,
    CaPrime,
    Ua,
    UaPrime,
    Wiener,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Exact, Method::Avg, Method::Ca, Method::CaPrime, Method::Ua, Method::UaPrime, Method::Wiener];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Avg => "avg",
            Method::Ca => "ca",
            Method::CaPrime => "ca_prime",
            Method::Ua => "ua",
            Method::UaPrime => "ua_prime",
            Method::Wiener => "wiener",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| config(format!("unknown method `{s}`")))
    }
}

/// An index value with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexResult {
    pub value: f64,
    pub method: Method,
    pub diagnostics: BTreeMap<String, f64>,
}

impl IndexResult {
    pub fn closed_form(value: f64, method: Method) -> Self {
        Self { value, method, diagnostics: BTreeMap::new() }
    }

    /// Apply `shift + scale * value`.
    pub fn mapped(mut self, shift: f64, scale: f64) -> Self {
        self.value = shift + scale * self.value;
        self
    }
}

/// Boundary of the ladder-constrained problem, with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedBoundary {
    pub b: f64,
    /// Smallest grid node in the stopping region.
    pub b_grid_node: f64,
    pub horizon_steps: usize,
    pub dz: f64,
    pub grid_points: usize,
    pub z_min: f64,
    pub z_max: f64,
    /// Bound on the boundary error from truncating the ladder.
    pub truncation_bound: f64,
}

/// Solve the ladder-constrained stopping problem rooted at `s0 = v0 / c`.
pub fn solve_constrained(v0: f64, d: &Discounting, cfg: &DpConfig) -> Result<ConstrainedBoundary> {
    check_positive("v0", v0)?;
    cfg.validate()?;
    let beta = d.beta();
    let c = d.rate();
    let s0 = v0 / c;
    let horizon = (cfg.truncation_tol.ln() / beta.ln()).ceil().max(1.0) as usize;
    // Var of the remaining path, s0 - s_N
    let remaining = s0 * (v0 * horizon as f64) / (1.0 + v0 * horizon as f64);
    let first_step = v0 * v0 / (c * (1.0 + v0));

    let upper = s0 * FRAC_1_SQRT_2;
    let dz = cfg.dz.unwrap_or(upper / cfg.points_per_scale);
    let z_min = cfg.z_min.unwrap_or(-cfg.lower_span * remaining.sqrt());
    let z_max = upper + 10.0 * first_step.sqrt() + dz;
    let grid = Grid::covering(z_min, z_max, dz);
    if grid.len > cfg.max_grid_points {
        return Err(config(format!(
            "grid of {} points exceeds max_grid_points = {}",
            grid.len, cfg.max_grid_points
        )));
    }

    let mut sweep = ValueSweep::new(grid, cfg.quadrature, cfg.boundary_tolerance)?;
    let mut last = None;
    for n in (0..horizon).rev() {
        let nf = n as f64;
        // s_n - s_{n+1}
        let variance = v0 * v0 / (c * (1.0 + v0 * nf) * (1.0 + v0 * (nf + 1.0)));
        last = Some(sweep.step(variance, beta)?);
    }
    let bp = last.expect("horizon >= 1");
    Ok(ConstrainedBoundary {
        b: bp.interpolated,
        b_grid_node: bp.grid_node,
        horizon_steps: horizon,
        dz,
        grid_points: grid.len,
        z_min,
        z_max: grid.hi(),
        truncation_bound: beta.powi(horizon as i32) * z_min.abs().max(grid.hi()),
    })
}

/// `b_{v0}(v0 / c)` for the default grid semantics.
pub fn constrained_boundary(v0: f64, d: &Discounting, cfg: &DpConfig) -> Result<f64> {
    if !(v0 > 0.0) {
        return Err(domain(format!("v0 must be positive, got {v0}")));
    }
    Ok(solve_constrained(v0, d, cfg)?.b)
}

/// Gittins index of a unit-variance arm, `u + sqrt(c) b_{v}(v / c)`.
pub fn gittins_exact(arm: &NormalArm, d: &Discounting, cfg: &DpConfig) -> Result<IndexResult> {
    if !arm.is_normalized() {
        return Err(config(format!(
            "gittins_exact expects unit observation variance, got {}; normalize first",
            arm.obs_variance()
        )));
    }
    let mut diagnostics = BTreeMap::new();
    if arm.variance() <= DEGENERATE_VARIANCE {
        diagnostics.insert("degenerate_prior".to_string(), 1.0);
        return Ok(IndexResult { value: arm.mean(), method: Method::Exact, diagnostics });
    }
    let sol = solve_constrained(arm.variance(), d, cfg)?;
    let root_c = d.rate().sqrt();
    diagnostics.insert("horizon_steps".into(), sol.horizon_steps as f64);
    diagnostics.insert("grid_step".into(), sol.dz);
    diagnostics.insert("grid_points".into(), sol.grid_points as f64);
    diagnostics.insert("z_min".into(), sol.z_min);
    diagnostics.insert("z_max".into(), sol.z_max);
    diagnostics.insert("truncation_error".into(), root_c * sol.truncation_bound);
    diagnostics.insert("boundary_grid_node".into(), sol.b_grid_node);
    Ok(IndexResult { value: arm.mean() + root_c * sol.b, method: Method::Exact, diagnostics })
}

/// Exact index of an arm with any observation variance, through the
/// location/scale reduction.
pub fn gittins_exact_general(arm: &NormalArm, d: &Discounting, cfg: &DpConfig) -> Result<IndexResult> {
    let (unit, map) = arm.normalize();
    Ok(gittins_exact(&unit, d, cfg)?.mapped(map.shift, map.scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scaled(n: f64, beta: f64, value: f64) -> f64 {
        n * (1.0 - beta).sqrt() * value
    }

    #[test]
    fn reproduces_tabulated_corners() {
        let cfg = DpConfig::default();
        for (beta, n, expected) in [(0.5, 10.0, 0.211), (0.9, 100.0, 0.493)] {
            let d = Discounting::new(beta).unwrap();
            let b = constrained_boundary(1.0 / n, &d, &cfg).unwrap();
            let value = d.rate().sqrt() * b;
            assert!((scaled(n, beta, value) - expected).abs() < 0.01, "beta {beta} n {n}: {value}");
        }
    }

    #[test]
    fn shift_equivariance_is_exact() {
        let d = Discounting::new(0.7).unwrap();
        let cfg = DpConfig::default();
        let a = gittins_exact(&NormalArm::unit(0.0, 0.3).unwrap(), &d, &cfg).unwrap();
        let b = gittins_exact(&NormalArm::unit(2.0, 0.3).unwrap(), &d, &cfg).unwrap();
        assert_eq!(b.value, 2.0 + a.value);
        assert_eq!(a.method, Method::Exact);
        assert!(a.diagnostics.contains_key("horizon_steps"));
    }

    #[test]
    fn degenerate_prior_returns_mean() {
        let d = Discounting::new(0.9).unwrap();
        let r = gittins_exact(&NormalArm::unit(0.4, 1e-13).unwrap(), &d, &DpConfig::default()).unwrap();
        assert_eq!(r.value, 0.4);
        assert_eq!(r.diagnostics.get("degenerate_prior"), Some(&1.0));
    }

    #[test]
    fn vanishing_prior_variance_approaches_mean() {
        let d = Discounting::new(0.9).unwrap();
        let cfg = DpConfig::default();
        let mut prev = f64::INFINITY;
        for v in [1e-2, 1e-3, 1e-4] {
            let r = gittins_exact(&NormalArm::unit(0.0, v).unwrap(), &d, &cfg).unwrap();
            assert!(r.value > 0.0 && r.value < prev);
            prev = r.value;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn rejects_bad_input() {
        let d = Discounting::new(0.9).unwrap();
        let cfg = DpConfig::default();
        assert!(matches!(constrained_boundary(0.0, &d, &cfg), Err(Error::Domain(_))));
        assert!(matches!(constrained_boundary(-1.0, &d, &cfg), Err(Error::Domain(_))));
        let arm = NormalArm::new(0.0, 1.0, 2.0).unwrap();
        assert!(gittins_exact(&arm, &d, &cfg).is_err());
        let bad = DpConfig { truncation_tol: 0.5, ..DpConfig::default() };
        assert!(matches!(constrained_boundary(0.1, &d, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn oversized_grid_is_rejected() {
        let d = Discounting::new(0.9).unwrap();
        let cfg = DpConfig { max_grid_points: 1000, ..DpConfig::default() };
        assert!(matches!(constrained_boundary(0.01, &d, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn gauss_hermite_route_agrees() {
        let d = Discounting::new(0.9).unwrap();
        let v0 = 0.1;
        let a = constrained_boundary(v0, &d, &DpConfig::default()).unwrap();
        let gh = DpConfig { quadrature: Quadrature::GaussHermite { order: 32 }, ..DpConfig::default() };
        let b = constrained_boundary(v0, &d, &gh).unwrap();
        // tolerance in scaled units (n sqrt(1-beta) sqrt(c) b)
        assert!(scaled(10.0, 0.9, d.rate().sqrt() * (a - b)).abs() < 3e-3, "{a} vs {b}");
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn refinement_is_stable() {
        let d = Discounting::new(0.95).unwrap();
        let cfg = DpConfig::default();
        let arm = NormalArm::unit(0.0, 0.05).unwrap();
        let a = gittins_exact(&arm, &d, &cfg).unwrap().value;
        let b = gittins_exact(&arm, &d, &cfg.refined()).unwrap().value;
        assert_relative_eq!(a, b, epsilon = 5e-4);
    }
}

#[cfg(test)]
mod invariants {
    use super::*;
    use crate::model::{Discounting, NormalArm};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn equivariance(u in -2.0f64..2.0, v in 0.05f64..2.0, s2 in 0.25f64..4.0, b in 0.6f64..0.95) {
            let d = Discounting::new(b).unwrap();
            let dp = DpConfig::default();
            let general = gittins_exact_general(&NormalArm::new(u, v, s2).unwrap(), &d, &dp).unwrap().value;
            let unit = gittins_exact(&NormalArm::unit(0.0, v / s2).unwrap(), &d, &dp).unwrap().value;
            prop_assert!((general - (u + s2.sqrt() * unit)).abs() < 1e-12 * (1.0 + general.abs()));
            prop_assert!(unit > 0.0);
        }

        #[test]
        fn increases_with_prior_variance(v in 0.02f64..1.0, b in 0.6f64..0.95) {
            let d = Discounting::new(b).unwrap();
            let dp = DpConfig::default();
            let lo = gittins_exact(&NormalArm::unit(0.0, v).unwrap(), &d, &dp).unwrap().value;
            let hi = gittins_exact(&NormalArm::unit(0.0, 1.5 * v).unwrap(), &d, &dp).unwrap().value;
            prop_assert!(hi > lo);
            prop_assert!(hi / (1.5 * v).sqrt() >= lo / v.sqrt() - 1e-3);
        }
    }
}
