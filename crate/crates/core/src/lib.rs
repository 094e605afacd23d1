//! Gittins indices for normal rewards with a normal prior on the mean.
//!
//! The crate offers three routes to the index of an arm with prior
//! `N(u, v)`, observation variance `sigma^2` and discount factor `beta`:
//!
//! * [`exact`]: backward induction for the discrete-time problem.
//! * [`boundary`]: the free boundary of the continuous-time Wiener problem.
//! * [`corrected`]: closed-form approximations built from that boundary, with
//!   a continuity correction for discrete sampling.
//!
//! [`sim`] compares index policies on simulated bandits and [`report`]
//! renders the tables produced by the `gittins` binary.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundary;
pub mod corrected;
pub mod error;
pub mod exact;
pub mod model;
pub mod quadrature;
pub mod report;
pub mod sim;
mod sweep;

pub use boundary::{
    asymptotic_b, psi, solve_boundary, wiener_index, BoundarySolverConfig, BoundarySource, BoundaryTable,
};
pub use corrected::{
    corrected_boundary, estimate_rho, index_avg, index_ca, index_ca_prime, index_ua, index_ua_prime,
    spacing_delta, upper_bound_gittins, upper_bound_thm2, RhoEstimate, RHO,
};
pub use error::{Error, Result};
pub use exact::{constrained_boundary, gittins_exact, gittins_exact_general, DpConfig, IndexResult, Method};
pub use model::{make_discounting, normalize, posterior_update, time_change, AffineMap, Discounting, NormalArm, ScaledState};
pub use quadrature::{GaussHermite, Quadrature};
pub use sim::{compare, simulate, BanditConfig, IndexCache, IndexRule, Policy, SimResult};
