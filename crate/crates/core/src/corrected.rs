//! Closed-form index approximations built from the Wiener boundary, with and
//! without the continuity correction for discrete stopping times, plus upper
//! bounds and a Monte Carlo estimate of the correction constant.
//!
//! All indices are in reward units for a unit observation variance.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{psi, BoundarySource};
use crate::error::{config, Result};
use crate::exact::{IndexResult, Method};
use crate::model::{check_positive, Discounting};

/// Continuity-correction constant `E[S^2] / (2 E[S])` at the first ladder
/// height of a standard normal random walk.
pub const RHO: f64 = 0.583;

/// Variance gap between the first two stopping points, `v0^2 / (c (1 + v0))`.
pub fn spacing_delta(v0: f64, d: &Discounting) -> Result<f64> {
    check_positive("v0", v0)?;
    Ok(v0 * v0 / (d.rate() * (1.0 + v0)))
}

/// `b(v0 / c) - RHO sqrt(delta)`.
pub fn corrected_boundary(v0: f64, d: &Discounting, source: BoundarySource<'_>) -> Result<f64> {
    let b = source.b(v0 / d.rate())?;
    Ok(b - RHO * spacing_delta(v0, d)?.sqrt())
}

fn checked(v0: f64, beta: f64) -> Result<Discounting> {
    let d = Discounting::new(beta)?;
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(config(format!("prior variance must be positive, got {v0}")));
    }
    Ok(d)
}

// RHO sqrt(c delta)
fn correction(v0: f64) -> f64 {
    RHO * v0 / (1.0 + v0).sqrt()
}

/// `u0 + sqrt(v0) psi(v0 / c)`.
pub fn index_ua(u0: f64, v0: f64, beta: f64) -> Result<IndexResult> {
    let d = checked(v0, beta)?;
    let value = u0 + v0.sqrt() * psi(v0 / d.rate())?;
    Ok(IndexResult::closed_form(value, Method::Ua))
}

/// `u0 + v0 / sqrt(2c)`, the small-`s` form of [`index_ua`].
pub fn index_ua_prime(u0: f64, v0: f64, beta: f64) -> Result<IndexResult> {
    let d = checked(v0, beta)?;
    let value = u0 + v0 * FRAC_1_SQRT_2 / d.rate().sqrt();
    Ok(IndexResult::closed_form(value, Method::UaPrime))
}

/// [`index_ua`] less the continuity correction `RHO v0 / sqrt(1 + v0)`.
pub fn index_ca(u0: f64, v0: f64, beta: f64) -> Result<IndexResult> {
    let ua = index_ua(u0, v0, beta)?;
    Ok(IndexResult::closed_form(ua.value - correction(v0), Method::Ca))
}

/// [`index_ua_prime`] less the continuity correction.
pub fn index_ca_prime(u0: f64, v0: f64, beta: f64) -> Result<IndexResult> {
    let ua = index_ua_prime(u0, v0, beta)?;
    Ok(IndexResult::closed_form(ua.value - correction(v0), Method::CaPrime))
}

/// Midpoint of [`index_ca`] and [`index_ca_prime`].
pub fn index_avg(u0: f64, v0: f64, beta: f64) -> Result<IndexResult> {
    let a = index_ca(u0, v0, beta)?.value;
    let b = index_ca_prime(u0, v0, beta)?.value;
    Ok(IndexResult::closed_form(0.5 * (a + b), Method::Avg))
}

/// `u0 + sqrt(c) b(v0 / c)`; strictly above the discrete-time index.
pub fn upper_bound_thm2(u0: f64, v0: f64, d: &Discounting, source: BoundarySource<'_>) -> Result<f64> {
    check_positive("v0", v0)?;
    let c = d.rate();
    Ok(u0 + c.sqrt() * source.b(v0 / c)?)
}

/// `u0 + sqrt(1 - beta) b(v0 / (1 - beta))`; weaker than [`upper_bound_thm2`].
pub fn upper_bound_gittins(u0: f64, v0: f64, beta: f64, source: BoundarySource<'_>) -> Result<f64> {
    let d = checked(v0, beta)?;
    let k = 1.0 - d.beta();
    Ok(u0 + k.sqrt() * source.b(v0 / k)?)
}

/// Monte Carlo moments of the first positive ladder height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub rho_hat: f64,
    /// Mean ladder height.
    pub es_tau: f64,
    /// Mean squared ladder height.
    pub es_tau_sq: f64,
    pub n_samples: u64,
    /// Delta-method standard error of `rho_hat`.
    pub std_err: f64,
    /// Episodes discarded at the step cap and redrawn.
    pub aborted: u64,
}

/// Episodes longer than this are discarded and redrawn.
pub const EPISODE_STEP_CAP: u64 = 1_000_000_000;

const BLOCK: u64 = 1 << 14;
// below -SKIP_DEPTH, jump m = (S / SKIP_DEPTH)^2 steps at once; the chance of
// an unseen crossing is at most 2 P(N > SKIP_DEPTH)
const SKIP_DEPTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
    aborted: u64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        let x2 = x * x;
        self.n += 1;
        self.s1 += x;
        self.s2 += x2;
        self.s3 += x2 * x;
        self.s4 += x2 * x2;
    }

    fn merge(mut self, o: Moments) -> Self {
        self.n += o.n;
        self.s1 += o.s1;
        self.s2 += o.s2;
        self.s3 += o.s3;
        self.s4 += o.s4;
        self.aborted += o.aborted;
        self
    }
}

/// Ladder height `S_tau`, or `None` after [`EPISODE_STEP_CAP`] steps.
fn ladder_height(rng: &mut ChaCha8Rng) -> Option<f64> {
    let mut s = 0.0f64;
    let mut steps = 0u64;
    while steps < EPISODE_STEP_CAP {
        let e: f64 = StandardNormal.sample(rng);
        if s < -SKIP_DEPTH {
            let m = ((s / SKIP_DEPTH).powi(2)).floor();
            s += m.sqrt() * e;
            steps += m as u64;
        } else {
            s += e;
            steps += 1;
            if s > 0.0 {
                return Some(s);
            }
        }
    }
    None
}

fn run_block(seed: u64, block: u64, count: u64) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    let mut m = Moments::default();
    while m.n < count {
        match ladder_height(&mut rng) {
            Some(h) => m.push(h),
            None => m.aborted += 1,
        }
    }
    m
}

/// Estimate `E[S^2] / (2 E[S])` from `n_samples` ladder episodes.
///
/// Episodes are generated in fixed blocks, each with its own ChaCha stream,
/// and merged in block order, so the result does not depend on the thread
/// count.
pub fn estimate_rho(n_samples: u64, seed: u64) -> Result<RhoEstimate> {
    if n_samples < 1 {
        return Err(config("n_samples must be at least 1"));
    }
    let blocks = n_samples.div_ceil(BLOCK);
    let parts: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| run_block(seed, b, BLOCK.min(n_samples - b * BLOCK)))
        .collect();
    let m = parts.into_iter().fold(Moments::default(), Moments::merge);

    let n = m.n as f64;
    let (e1, e2, e3, e4) = (m.s1 / n, m.s2 / n, m.s3 / n, m.s4 / n);
    let rho_hat = e2 / (2.0 * e1);
    let var1 = e2 - e1 * e1;
    let var2 = e4 - e2 * e2;
    let cov = e3 - e1 * e2;
    let g1 = -e2 / (2.0 * e1 * e1);
    let g2 = 1.0 / (2.0 * e1);
    let var = (g1 * g1 * var1 + g2 * g2 * var2 + 2.0 * g1 * g2 * cov).max(0.0) / n;
    Ok(RhoEstimate {
        rho_hat,
        es_tau: e1,
        es_tau_sq: e2,
        n_samples: m.n,
        std_err: var.sqrt(),
        aborted: m.aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scaled(value: f64, n: f64, beta: f64) -> f64 {
        n * (1.0 - beta).sqrt() * value
    }

    #[test]
    fn spacing_examples() {
        let d = Discounting::new((-1.0f64).exp()).unwrap();
        assert_relative_eq!(spacing_delta(1.0, &d).unwrap(), 0.5, epsilon = 1e-14);
        let d = Discounting::new(0.9).unwrap();
        let delta = spacing_delta(0.1, &d).unwrap();
        assert_relative_eq!(delta, 0.01 / (0.105_360_515_657_826_3 * 1.1), epsilon = 1e-14);
        assert!((delta - 0.0863).abs() < 1e-4);
        assert!(spacing_delta(1e-8, &d).unwrap() < 1e-14);
        assert!(spacing_delta(0.0, &d).is_err());
    }

    #[test]
    fn corrected_boundary_example() {
        let d = Discounting::new(0.9).unwrap();
        let b = corrected_boundary(0.02, &d, BoundarySource::Psi).unwrap();
        let s = 0.02 / d.rate();
        let expected = (s / 2.0).sqrt() * s.sqrt() - RHO * (0.0004 / (d.rate() * 1.02)).sqrt();
        assert_relative_eq!(b, expected, epsilon = 1e-14);
        // s / sqrt(2) = 0.134226, correction 0.035568
        assert!((b - 0.098658).abs() < 5e-6, "{b}");
        assert!(b < BoundarySource::Psi.b(s).unwrap());
    }

    #[test]
    fn tabulated_closed_forms() {
        type ClosedForm = fn(f64, f64, f64) -> Result<IndexResult>;
        let cases: [(ClosedForm, f64, f64, f64); 9] = [
            (index_ca, 0.7, 10.0, 0.184),
            (index_ca, 0.9, 50.0, 0.506),
            (index_ca, 0.5, 1000.0, 0.189),
            (index_ca_prime, 0.9, 10.0, 0.513),
            (index_ca_prime, 0.995, 10.0, 0.667),
            (index_ua_prime, 0.5, 10.0, 0.601),
            (index_ua_prime, 0.9, 10.0, 0.689),
            (index_ua, 0.7, 10.0, 0.489),
            (index_avg, 0.9, 10.0, 0.357),
        ];
        for (f, beta, n, expected) in cases {
            let r = f(0.0, 1.0 / n, beta).unwrap();
            let got = scaled(r.value, n, beta);
            assert!((got - expected).abs() <= 5e-4 + 1e-12, "{} beta {beta} n {n}: {got}", r.method);
        }
        let avg = scaled(index_avg(0.0, 0.02, 0.95).unwrap().value, 50.0, 0.95);
        assert!((avg - 0.468).abs() <= 5e-4 + 1e-12, "{avg}");
    }

    #[test]
    fn ca_and_ca_prime_agree_for_small_s() {
        let beta = 0.9;
        let a = index_ca(0.3, 0.02, beta).unwrap().value;
        let b = index_ca_prime(0.3, 0.02, beta).unwrap().value;
        assert_relative_eq!(a, b, epsilon = 1e-14);
        assert_relative_eq!(index_avg(0.3, 0.02, beta).unwrap().value, a, epsilon = 1e-14);
        // s = 0.1 / c > 0.2
        let a = index_ca(0.0, 0.1, beta).unwrap().value;
        let b = index_ca_prime(0.0, 0.1, beta).unwrap().value;
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn correction_gap_is_exact() {
        for v0 in [1e-4, 0.01, 0.3, 2.0] {
            let gap = RHO * v0 / (1.0 + v0).sqrt();
            let ua = index_ua(0.0, v0, 0.8).unwrap().value;
            let ca = index_ca(0.0, v0, 0.8).unwrap().value;
            assert_relative_eq!(ua - ca, gap, max_relative = 1e-12);
            let ua = index_ua_prime(0.0, v0, 0.8).unwrap().value;
            let ca = index_ca_prime(0.0, v0, 0.8).unwrap().value;
            assert_relative_eq!(ua - ca, gap, max_relative = 1e-12);
        }
    }

    #[test]
    fn small_variance_limits() {
        let v0 = 1e-6;
        for beta in [0.5, 0.7, 0.9, 0.95, 0.99, 0.995] {
            let c = -f64::ln(beta);
            let k = (1.0 - beta).sqrt();
            let ca_limit = k * ((2.0 * c).powf(-0.5) - RHO);
            let ua_limit = k * (2.0 * c).powf(-0.5);
            let n = 1.0 / v0;
            for f in [index_ca, index_ca_prime] {
                assert!((scaled(f(0.0, v0, beta).unwrap().value, n, beta) - ca_limit).abs() < 5e-5);
            }
            for f in [index_ua, index_ua_prime] {
                assert!((scaled(f(0.0, v0, beta).unwrap().value, n, beta) - ua_limit).abs() < 5e-5);
            }
        }
    }

    #[test]
    fn bounds_shift_and_order() {
        let d = Discounting::new(0.9).unwrap();
        for v0 in [0.01, 0.1, 1.0] {
            let t = upper_bound_thm2(0.0, v0, &d, BoundarySource::Psi).unwrap();
            let t2 = upper_bound_thm2(1.5, v0, &d, BoundarySource::Psi).unwrap();
            assert_relative_eq!(t2 - t, 1.5, epsilon = 1e-12);
            let g = upper_bound_gittins(0.0, v0, 0.9, BoundarySource::Psi).unwrap();
            let g2 = upper_bound_gittins(1.5, v0, 0.9, BoundarySource::Psi).unwrap();
            assert_relative_eq!(g2 - g, 1.5, epsilon = 1e-12);
        }
        let tiny = upper_bound_thm2(0.2, 1e-10, &d, BoundarySource::Psi).unwrap();
        assert!((tiny - 0.2).abs() < 1e-8);
    }

    #[test]
    fn invalid_inputs() {
        assert!(index_ca(0.0, 0.0, 0.9).is_err());
        assert!(index_ua(0.0, 0.1, 1.0).is_err());
        assert!(estimate_rho(0, 1).is_err());
    }

    #[test]
    fn rho_estimate_is_deterministic_and_consistent() {
        let a = estimate_rho(40_000, 7).unwrap();
        let b = estimate_rho(40_000, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_samples, 40_000);
        assert_relative_eq!(a.rho_hat, a.es_tau_sq / (2.0 * a.es_tau), epsilon = 1e-15);
        let c = estimate_rho(40_000, 8).unwrap();
        let tol = 3.0 * (a.std_err.powi(2) + c.std_err.powi(2)).sqrt();
        assert!((a.rho_hat - c.rho_hat).abs() < tol);
        assert!((a.es_tau - FRAC_1_SQRT_2).abs() < 0.02);
    }

    #[test]
    fn rho_independent_of_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_rho(50_000, 3).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
