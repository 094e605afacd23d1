//! Backward induction for the Brownian stopping problem with payoff `z`
//! (values are kept relative to the current discount `exp(-1/s)`).
//!
//! One call to [`ValueSweep::step`] moves from stopping point `s_next` to the
//! earlier (larger) point `s`: the continuation value is
//! `C(z) = d * E[V(z + sqrt(s - s_next) * eps)]` with the relative discount
//! `d = exp(1/s - 1/s_next)`, and `V(z) <- max(z, C(z))`.
//!
//! Outside the grid, values are extended by a constant below the lowest node
//! and by the payoff `z` above the highest node (the top of every grid lies in
//! the stopping region).

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::quadrature::{hat_kernel, GaussHermite, Quadrature};

/// Uniform grid `z_i = lo + i * dz`, `i = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Grid {
    pub lo: f64,
    pub dz: f64,
    pub len: usize,
}

impl Grid {
    pub fn covering(lo: f64, hi: f64, dz: f64) -> Self {
        let len = ((hi - lo) / dz).ceil() as usize + 1;
        Self { lo, dz, len }
    }

    pub fn z(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dz
    }

    pub fn hi(&self) -> f64 {
        self.z(self.len - 1)
    }

    /// Piecewise-linear evaluation with the sweep's extension rules.
    pub fn interpolate(&self, values: &[f64], z: f64) -> f64 {
        let t = (z - self.lo) / self.dz;
        if t <= 0.0 {
            return values[0];
        }
        let last = self.len - 1;
        if t >= last as f64 {
            return if z > self.hi() { z } else { values[last] };
        }
        let i = t.floor() as usize;
        let f = t - i as f64;
        values[i] + f * (values[i + 1] - values[i])
    }
}

/// Location of the stopping boundary on the current level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BoundaryPoint {
    /// Root of `C(z) - z` by linear interpolation between grid nodes.
    pub interpolated: f64,
    /// Smallest grid node in the stopping region.
    pub grid_node: f64,
}

// Kernels longer than this go through the FFT.
const DIRECT_MAX_TAPS: usize = 96;

type FftPair = (usize, Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

struct Convolver {
    planner: FftPlanner<f64>,
    cached: Option<FftPair>,
    buf: Vec<Complex<f64>>,
    kbuf: Vec<Complex<f64>>,
}

impl Convolver {
    fn new() -> Self {
        Self { planner: FftPlanner::new(), cached: None, buf: Vec::new(), kbuf: Vec::new() }
    }

    /// `out[i] = sum_j kernel[j] * signal[i + j]`, `i = 0..signal.len() - kernel.len() + 1`.
    fn correlate_valid(&mut self, signal: &[f64], kernel: &[f64], out: &mut [f64]) {
        let taps = kernel.len();
        debug_assert_eq!(out.len(), signal.len() + 1 - taps);
        if taps <= DIRECT_MAX_TAPS {
            out.par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
                let base = c * 1024;
                for (k, o) in chunk.iter_mut().enumerate() {
                    let window = &signal[base + k..base + k + taps];
                    *o = window.iter().zip(kernel).map(|(a, b)| a * b).sum();
                }
            });
            return;
        }
        let size = (signal.len() + taps).next_power_of_two();
        let (fwd, inv) = match &self.cached {
            Some((n, f, i)) if *n == size => (f.clone(), i.clone()),
            _ => {
                let f = self.planner.plan_fft_forward(size);
                let i = self.planner.plan_fft_inverse(size);
                self.cached = Some((size, f.clone(), i.clone()));
                (f, i)
            }
        };
        self.buf.clear();
        self.buf.extend(signal.iter().map(|&x| Complex::new(x, 0.0)));
        self.buf.resize(size, Complex::new(0.0, 0.0));
        // correlation == convolution with the reversed kernel
        self.kbuf.clear();
        self.kbuf.extend(kernel.iter().rev().map(|&x| Complex::new(x, 0.0)));
        self.kbuf.resize(size, Complex::new(0.0, 0.0));
        fwd.process(&mut self.buf);
        fwd.process(&mut self.kbuf);
        for (a, b) in self.buf.iter_mut().zip(&self.kbuf) {
            *a *= *b;
        }
        inv.process(&mut self.buf);
        let scale = 1.0 / size as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.buf[i + taps - 1].re * scale;
        }
    }
}

pub(crate) struct ValueSweep {
    grid: Grid,
    values: Vec<f64>,
    continuation: Vec<f64>,
    quadrature: Quadrature,
    gh: Option<GaussHermite>,
    conv: Convolver,
    stop_tol: f64,
    padded: Vec<f64>,
}

impl ValueSweep {
    /// Start from the terminal condition `V = z` (forced stop).
    pub fn new(grid: Grid, quadrature: Quadrature, stop_tol: f64) -> Result<Self> {
        quadrature.validate()?;
        let gh = match quadrature {
            Quadrature::GaussHermite { order } => Some(GaussHermite::new(order)?),
            Quadrature::InterpolantExact => None,
        };
        let values = (0..grid.len).map(|i| grid.z(i)).collect();
        Ok(Self {
            grid,
            values,
            continuation: vec![0.0; grid.len],
            quadrature,
            gh,
            conv: Convolver::new(),
            stop_tol,
            padded: Vec::new(),
        })
    }

    /// Re-sample the current value function onto a new grid.
    pub fn regrid(&mut self, grid: Grid) {
        let values = (0..grid.len).map(|i| self.grid.interpolate(&self.values, grid.z(i))).collect();
        self.values = values;
        self.continuation = vec![0.0; grid.len];
        self.grid = grid;
    }

    /// One backward step with increment variance `variance` and relative
    /// discount `discount`; returns the boundary at the new level.
    pub fn step(&mut self, variance: f64, discount: f64) -> Result<BoundaryPoint> {
        let sigma = variance.max(0.0).sqrt();
        self.expect(sigma);
        for c in self.continuation.iter_mut() {
            *c *= discount;
        }
        let bp = self.locate_boundary()?;
        for (i, (v, c)) in self.values.iter_mut().zip(&self.continuation).enumerate() {
            *v = c.max(self.grid.z(i));
        }
        Ok(bp)
    }

    fn expect(&mut self, sigma: f64) {
        let grid = self.grid;
        match self.quadrature {
            Quadrature::InterpolantExact => {
                let kernel = hat_kernel(sigma / grid.dz);
                let m = kernel.len() / 2;
                self.padded.clear();
                self.padded.extend(std::iter::repeat_n(self.values[0], m));
                self.padded.extend_from_slice(&self.values);
                let top = grid.hi();
                self.padded.extend((1..=m).map(|j| top + j as f64 * grid.dz));
                self.conv.correlate_valid(&self.padded, &kernel, &mut self.continuation);
            }
            Quadrature::GaussHermite { .. } => {
                let gh = self.gh.as_ref().expect("rule built with the sweep");
                let values = &self.values;
                self.continuation.par_iter_mut().enumerate().for_each(|(i, c)| {
                    let z = grid.z(i);
                    *c = gh.expect(|e| grid.interpolate(values, z + sigma * e));
                });
            }
        }
    }

    fn locate_boundary(&self) -> Result<BoundaryPoint> {
        let diff = |i: usize| self.continuation[i] - self.grid.z(i);
        let first = (0..self.grid.len).find(|&i| diff(i) <= self.stop_tol);
        match first {
            None => Err(Error::Solver(format!(
                "stopping boundary lies above the grid top z = {:.6}",
                self.grid.hi()
            ))),
            Some(0) => Err(Error::Solver(format!(
                "stopping region reaches the grid bottom z = {:.6}",
                self.grid.lo
            ))),
            Some(i) => {
                let (d0, d1) = (diff(i - 1), diff(i));
                let frac = if d0 - d1 > 0.0 { d0 / (d0 - d1) } else { 1.0 };
                Ok(BoundaryPoint {
                    interpolated: self.grid.z(i - 1) + frac.clamp(0.0, 1.0) * self.grid.dz,
                    grid_node: self.grid.z(i),
                })
            }
        }
    }
}
