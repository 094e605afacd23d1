//! Expectations of grid functions under a Gaussian increment.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{config, Result};

pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Upper tail `P(N(0,1) > x)`.
pub(crate) fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// How `E[V(z + sigma * eps)]` is evaluated for a function `V` known on a
/// uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quadrature {
    /// Exact Gaussian expectation of the piecewise-linear interpolant,
    /// applied as a discrete convolution with hat-function weights.
    #[default]
    InterpolantExact,
    /// Gauss-Hermite rule of the given order with linear interpolation
    /// between grid nodes.
    GaussHermite { order: usize },
}

impl Quadrature {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Quadrature::InterpolantExact => Ok(()),
            Quadrature::GaussHermite { order } if (2..=200).contains(&order) => Ok(()),
            Quadrature::GaussHermite { order } => {
                Err(config(format!("Gauss-Hermite order must be in [2, 200], got {order}")))
            }
        }
    }
}

/// Gauss-Hermite nodes and weights for the standard normal density.
///
/// Nodes ascend; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        Quadrature::GaussHermite { order }.validate()?;
        let (x, w) = physicists_rule(order);
        // e^{-x^2} weight -> standard normal density
        let nodes: Vec<f64> = x.iter().map(|x| x * 2f64.sqrt()).collect();
        let weights: Vec<f64> = w.iter().map(|w| w / PI.sqrt()).collect();
        Ok(Self { nodes, weights })
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

// Newton iteration on the orthonormal Hermite recurrence.
fn physicists_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let mut pairs: Vec<(f64, f64)> = x.into_iter().zip(w).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[(Y - x)^+]` for `Y ~ N(0, r^2)`.
fn call_payoff(x: f64, r: f64) -> f64 {
    let t = x / r;
    r * normal_pdf(t) - x * normal_sf(t)
}

/// Weights `w[j]`, `j = -m..=m`, such that for a piecewise-linear function
/// with nodes at the integers, `E[f(i + r * eps)] = sum_j w[j] f(i + j)`.
///
/// Returned as a vector of length `2m + 1` centred on index `m`.
pub(crate) fn hat_kernel(r: f64) -> Vec<f64> {
    if r < 1e-9 {
        return vec![1.0];
    }
    let m = (8.0 * r).ceil() as usize + 1;
    let mut half = Vec::with_capacity(m + 1);
    for k in 0..=m {
        let k = k as f64;
        let w = call_payoff(k - 1.0, r) - 2.0 * call_payoff(k, r) + call_payoff(k + 1.0, r);
        half.push(w.max(0.0));
    }
    let mut w = Vec::with_capacity(2 * m + 1);
    w.extend(half.iter().rev());
    w.extend(&half[1..]);
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}
