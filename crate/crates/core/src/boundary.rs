//! Free boundary `b(s)` of the Brownian stopping problem with payoff
//! `g(z, s) = z exp(-1/s)`, where `z` is a standard Brownian motion in the
//! `-s` scale. The Gittins index of a Wiener process with drift prior
//! `N(u0, v0)` and discount rate `c` is `u0 + sqrt(c) b(v0 / c)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corrected::RHO;
use crate::error::{config, domain, Error, Result};
use crate::model::{check_positive, Discounting};
use crate::quadrature::Quadrature;
use crate::sweep::{Grid, ValueSweep};

/// Closed-form approximation to `b(s) / sqrt(s)` (five pieces, with the
/// breakpoints `0.2 < s <= 1`, `1 < s <= 5`, `5 < s <= 15`).
pub fn psi(s: f64) -> Result<f64> {
    check_positive("s", s)?;
    let r = s.sqrt();
    let value = if s <= 0.2 {
        (s / 2.0).sqrt()
    } else if s <= 1.0 {
        0.49 - 0.11 / r
    } else if s <= 5.0 {
        0.63 - 0.26 / r
    } else if s <= 15.0 {
        0.77 - 0.58 / r
    } else {
        let arg = 2.0 * s.ln() - s.ln().ln() - (16.0 * PI).ln();
        if arg < 0.0 {
            return Err(domain(format!("large-s branch undefined at s = {s}")));
        }
        arg.sqrt()
    };
    Ok(value)
}

/// Large-`s` expansion `sqrt(2s [ln s - ln ln s / 2 - ln(16 pi) / 2])`.
pub fn asymptotic_b(s: f64) -> Result<f64> {
    if !(s > 15.0 && s.is_finite()) {
        return Err(domain(format!("asymptotic boundary needs s > 15, got {s}")));
    }
    let bracket = s.ln() - 0.5 * s.ln().ln() - 0.5 * (16.0 * PI).ln();
    Ok((2.0 * s * bracket).sqrt())
}

/// Parameters of [`solve_boundary`].
///
/// The solver runs one backward sweep over a ladder of permitted stopping
/// points whose spacing follows the local boundary scale
/// `ell(s) = min(s / sqrt 2, 0.6 sqrt s)`: consecutive points are
/// `(rel_step * ell(s))^2` apart. The z-grid is re-laid whenever the scale
/// grows, with spacing `ell(s) / points_per_scale`. The discrete-time boundary
/// is lifted to the continuous one with the continuity correction
/// `rho * sqrt(spacing)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySolverConfig {
    pub s_min: f64,
    pub s_max: f64,
    /// Output grid density (geometric spacing).
    pub points_per_decade: usize,
    /// Ladder step standard deviation relative to `ell(s)`.
    pub rel_step: f64,
    /// z-grid nodes per unit of `ell(s)`.
    pub points_per_scale: f64,
    /// Extra `1/s` distance below `s_min` before the forced stop; the
    /// neglected value is below `exp(-horizon)` relative.
    pub horizon: f64,
    /// Lower grid edge in standard deviations of the remaining diffusion.
    pub lower_span: f64,
    pub quadrature: Quadrature,
    /// Add `rho * sqrt(spacing)` to the discrete boundary.
    pub continuity_correction: bool,
    /// `C - g` at or below this counts as stopping.
    pub stop_tolerance: f64,
}

impl Default for BoundarySolverConfig {
    fn default() -> Self {
        Self {
            s_min: 0.01,
            s_max: 25.0,
            points_per_decade: 24,
            rel_step: 0.2,
            points_per_scale: 100.0,
            horizon: 25.0,
            lower_span: 7.0,
            quadrature: Quadrature::InterpolantExact,
            continuity_correction: true,
            stop_tolerance: 1e-12,
        }
    }
}

impl BoundarySolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_min > 0.0 && self.s_max > self.s_min && self.s_max.is_finite()) {
            return Err(config(format!("need 0 < s_min < s_max, got [{}, {}]", self.s_min, self.s_max)));
        }
        if self.points_per_decade == 0 {
            return Err(config("points_per_decade must be positive"));
        }
        if !(self.rel_step > 0.0 && self.rel_step <= 1.0) {
            return Err(config(format!("rel_step must be in (0, 1], got {}", self.rel_step)));
        }
        if !(self.points_per_scale >= 5.0) {
            return Err(config(format!("points_per_scale must be >= 5, got {}", self.points_per_scale)));
        }
        if !(self.horizon >= 10.0) {
            return Err(config(format!("horizon must be >= 10 so that exp(-horizon) is negligible, got {}", self.horizon)));
        }
        if !(self.lower_span > 0.0) {
            return Err(config("lower_span must be positive"));
        }
        self.quadrature.validate()
    }
}

/// Boundary scale: `b(s)` is of order `s` for small `s` and `sqrt s` for large `s`.
fn boundary_scale(s: f64) -> f64 {
    (s * FRAC_1_SQRT_2).min(0.6 * s.sqrt())
}

/// Sampled free boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTable {
    pub s_grid: Vec<f64>,
    pub b_values: Vec<f64>,
    /// Discrete-ladder boundary before the continuity correction.
    pub b_discrete: Vec<f64>,
    pub ladder_steps: usize,
    pub max_grid_points: usize,
}

impl BoundaryTable {
    pub fn s_range(&self) -> (f64, f64) {
        (self.s_grid[0], *self.s_grid.last().unwrap())
    }

    /// `b(s)`, interpolating `b/sqrt(s)` linearly in `ln s`.
    pub fn b(&self, s: f64) -> Result<f64> {
        let (lo, hi) = self.s_range();
        let eps = 1e-12 * hi;
        if !(s >= lo - eps && s <= hi + eps) {
            return Err(Error::Range { value: s, lo, hi });
        }
        let s = s.clamp(lo, hi);
        let j = self.s_grid.partition_point(|&x| x < s);
        if j == 0 {
            return Ok(self.b_values[0]);
        }
        let (s0, s1) = (self.s_grid[j - 1], self.s_grid[j]);
        let (r0, r1) = (self.b_values[j - 1] / s0.sqrt(), self.b_values[j] / s1.sqrt());
        let t = (s.ln() - s0.ln()) / (s1.ln() - s0.ln());
        Ok((r0 + t * (r1 - r0)) * s.sqrt())
    }

    /// Largest decrease of `b(s)/sqrt(s)` between neighbouring grid points
    /// (zero when the ratio is nondecreasing).
    pub fn max_ratio_decrease(&self) -> f64 {
        let ratios: Vec<f64> = self.s_grid.iter().zip(&self.b_values).map(|(s, b)| b / s.sqrt()).collect();
        ratios.windows(2).map(|w| (w[0] - w[1]).max(0.0)).fold(0.0, f64::max)
    }

    /// Smallest margin `s/sqrt(2) - b(s)` over the grid.
    pub fn min_upper_margin(&self) -> f64 {
        self.s_grid
            .iter()
            .zip(&self.b_values)
            .map(|(s, b)| s * FRAC_1_SQRT_2 - b)
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `s,b,b_over_sqrt_s,psi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,b,b_over_sqrt_s,psi\n");
        for (&s, &b) in self.s_grid.iter().zip(&self.b_values) {
            let p = psi(s).map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", s, b, b / s.sqrt(), p);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("s,b,b_over_sqrt_s,psi") {
            return Err(config("boundary CSV must start with header `s,b,b_over_sqrt_s,psi`"));
        }
        let mut s_grid = Vec::new();
        let mut b_values = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut cols = line.split(',');
            let mut field = |name: &str| -> Result<f64> {
                cols.next()
                    .and_then(|x| x.trim().parse().ok())
                    .ok_or_else(|| config(format!("row {}: bad `{name}` column", n + 2)))
            };
            s_grid.push(field("s")?);
            b_values.push(field("b")?);
        }
        if s_grid.len() < 2 || s_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config("boundary CSV needs at least two rows with ascending s"));
        }
        Ok(Self { b_discrete: b_values.clone(), s_grid, b_values, ladder_steps: 0, max_grid_points: 0 })
    }
}

fn output_grid(cfg: &BoundarySolverConfig) -> Vec<f64> {
    let decades = (cfg.s_max / cfg.s_min).log10();
    let n = ((decades * cfg.points_per_decade as f64).ceil() as usize).max(1);
    let step = (cfg.s_max / cfg.s_min).ln() / n as f64;
    let mut grid: Vec<f64> = (0..=n).map(|i| cfg.s_min * (i as f64 * step).exp()).collect();
    grid[0] = cfg.s_min;
    grid[n] = cfg.s_max;
    grid
}

fn grid_for(s: f64, cfg: &BoundarySolverConfig) -> Grid {
    let ell = boundary_scale(s);
    let dz = ell / cfg.points_per_scale;
    // standard deviation of the diffusion left before the relative discount
    // falls to exp(-horizon)
    let sd = (cfg.horizon * s * s / (1.0 + cfg.horizon * s)).sqrt();
    let lo = -cfg.lower_span * sd;
    let hi = s * FRAC_1_SQRT_2 + 10.0 * cfg.rel_step * ell + dz;
    Grid::covering(lo, hi, dz)
}

/// Solve for `b(s)` on `[s_min, s_max]`.
pub fn solve_boundary(cfg: &BoundarySolverConfig) -> Result<BoundaryTable> {
    cfg.validate()?;
    let s_term = 1.0 / (1.0 / cfg.s_min + cfg.horizon);
    let mut grid = grid_for(s_term * 1.25, cfg);
    let mut sweep = ValueSweep::new(grid, cfg.quadrature, cfg.stop_tolerance)?;
    let mut max_points = grid.len;

    // (s, corrected b, discrete b) along the ladder
    let mut ladder: Vec<(f64, f64, f64)> = Vec::new();
    let mut s = s_term;
    let mut steps = 0usize;
    while ladder.last().is_none_or(|l| l.0 < cfg.s_max) {
        let spacing = (cfg.rel_step * boundary_scale(s)).powi(2);
        let s_next = s + spacing;
        let ideal = grid_for(s_next, cfg);
        if ideal.dz > 1.25 * grid.dz || ideal.lo < grid.lo || ideal.hi() > grid.hi() {
            grid = grid_for(s_next * 1.25, cfg);
            sweep.regrid(grid);
            max_points = max_points.max(grid.len);
        }
        let discount = (1.0 / s_next - 1.0 / s).exp();
        let bp = sweep.step(spacing, discount).map_err(|e| match e {
            Error::Solver(msg) => Error::Solver(format!("at s = {s_next:.6}: {msg}")),
            other => other,
        })?;
        let correction = if cfg.continuity_correction { RHO * spacing.sqrt() } else { 0.0 };
        ladder.push((s_next, bp.interpolated + correction, bp.interpolated));
        s = s_next;
        steps += 1;
    }

    let s_grid = output_grid(cfg);
    let mut b_values = Vec::with_capacity(s_grid.len());
    let mut b_discrete = Vec::with_capacity(s_grid.len());
    for &target in &s_grid {
        let j = ladder.partition_point(|l| l.0 < target);
        let (b, bd) = if j == 0 {
            (ladder[0].1, ladder[0].2)
        } else {
            let (a, c) = (ladder[j - 1], ladder[j]);
            let t = (target - a.0) / (c.0 - a.0);
            (a.1 + t * (c.1 - a.1), a.2 + t * (c.2 - a.2))
        };
        b_values.push(b);
        b_discrete.push(bd);
    }
    Ok(BoundaryTable { s_grid, b_values, b_discrete, ladder_steps: steps, max_grid_points: max_points })
}

/// Where the boundary value comes from in index formulas.
#[derive(Debug, Clone, Copy)]
pub enum BoundarySource<'a> {
    /// `b(s) = sqrt(s) * psi(s)`.
    Psi,
    /// Interpolation in a solved table.
    Table(&'a BoundaryTable),
}

impl BoundarySource<'_> {
    pub fn b(&self, s: f64) -> Result<f64> {
        match self {
            BoundarySource::Psi => Ok(s.sqrt() * psi(s)?),
            BoundarySource::Table(t) => t.b(s),
        }
    }
}

/// Gittins index of the Wiener process, `u0 + sqrt(c) b(v0 / c)`.
pub fn wiener_index(u0: f64, v0: f64, d: &Discounting, source: BoundarySource<'_>) -> Result<f64> {
    check_positive("v0", v0)?;
    let c = d.rate();
    Ok(u0 + c.sqrt() * source.b(v0 / c)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psi_pieces() {
        assert_relative_eq!(psi(0.1).unwrap(), 0.05f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(psi(1.0).unwrap(), 0.38, epsilon = 1e-15);
        assert_relative_eq!(psi(100.0).unwrap(), 1.940_5, epsilon = 1e-4);
        // inclusive right endpoints
        assert_relative_eq!(psi(0.2).unwrap(), 0.1f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(psi(5.0).unwrap(), 0.63 - 0.26 / 5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(psi(15.0).unwrap(), 0.77 - 0.58 / 15f64.sqrt(), epsilon = 1e-15);
        assert!(psi(0.0).is_err());
        assert!(psi(-1.0).is_err());
    }

    #[test]
    fn psi_discontinuity_kept() {
        let left = psi(0.2).unwrap();
        let right = psi(0.2 + 1e-12).unwrap();
        assert!((left - right).abs() > 0.07);
    }

    #[test]
    fn asymptotic_examples() {
        let b = asymptotic_b(100.0).unwrap();
        assert_relative_eq!(b, 10.0 * psi(100.0).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(b, 19.405, epsilon = 1e-3);
        let edge = asymptotic_b(15.5).unwrap();
        assert!(edge.is_finite() && edge > 0.0);
        assert!(asymptotic_b(15.0).is_err());
    }

    #[test]
    fn wiener_index_with_psi() {
        let d = Discounting::new(0.9).unwrap();
        let w = wiener_index(0.0, 0.1, &d, BoundarySource::Psi).unwrap();
        let s = 0.1 / d.rate();
        assert_relative_eq!(w, 0.1f64.sqrt() * (0.49 - 0.11 / s.sqrt()), epsilon = 1e-15);
        assert_relative_eq!(w, 0.119_25, epsilon = 1e-5);
        let shifted = wiener_index(3.0, 0.1, &d, BoundarySource::Psi).unwrap();
        assert_eq!(shifted, 3.0 + w);
        let at_one = wiener_index(0.0, d.rate(), &d, BoundarySource::Psi).unwrap();
        assert_relative_eq!(at_one, d.rate().sqrt() * 0.38, epsilon = 1e-12);
        assert!(wiener_index(0.0, -1.0, &d, BoundarySource::Psi).is_err());
    }

    #[test]
    fn config_validation() {
        let bad = BoundarySolverConfig { s_min: 0.0, ..Default::default() };
        assert!(matches!(solve_boundary(&bad), Err(Error::Config(_))));
        let bad = BoundarySolverConfig { s_max: 0.005, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BoundarySolverConfig { rel_step: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let table = BoundaryTable {
            s_grid: vec![0.5, 1.0, 2.0],
            b_values: vec![0.3, 0.6, 1.0],
            b_discrete: vec![0.2, 0.5, 0.9],
            ladder_steps: 3,
            max_grid_points: 10,
        };
        let csv = table.to_csv();
        assert!(csv.starts_with("s,b,b_over_sqrt_s,psi\n"));
        let back = BoundaryTable::from_csv(&csv).unwrap();
        assert_eq!(back.s_grid, table.s_grid);
        assert_eq!(back.b_values, table.b_values);
        assert!(BoundaryTable::from_csv("x,y\n1,2\n").is_err());
    }

    #[test]
    fn table_lookup_out_of_range() {
        let table = BoundaryTable {
            s_grid: vec![0.5, 1.0],
            b_values: vec![0.3, 0.6],
            b_discrete: vec![0.3, 0.6],
            ladder_steps: 0,
            max_grid_points: 0,
        };
        assert!(matches!(table.b(2.0), Err(Error::Range { .. })));
        assert_relative_eq!(table.b(1.0).unwrap(), 0.6, epsilon = 1e-15);
        let d = Discounting::new(0.5).unwrap();
        assert!(wiener_index(0.0, 10.0, &d, BoundarySource::Table(&table)).is_err());
    }
}

#[cfg(test)]
mod invariants {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn psi_is_positive_and_below_the_small_s_line(s in 1e-4f64..1e4) {
            let p = psi(s).unwrap();
            prop_assert!(p > 0.0);
            prop_assert!(p <= (s / 2.0).sqrt() + 1e-12);
        }
    }
}
