//! Numerical laboratory for time-fractional stochastic heat equations
//! driven by Poisson-type Levy noise.
//!
//! The equation family is
//!
//! ```text
//! d^beta/dt^beta u + nu (-Laplace)^{alpha/2} u
//!     = I_t^{1-beta} [ int sigma(u, h) dN(t, x, h) ]
//! ```
//!
//! on `R^d` (simulated on a torus), with `N` a Poisson random measure of
//! intensity `dt dx mu(dh)`, optionally compensated. The crate provides:
//!
//! * [`specfun`] — Mittag-Leffler function, one-sided stable density, and
//!   the inverse-subordinator density,
//! * [`kernels`] — the fractional Green function by two independent routes,
//!   its L2 norm and the constant `C*`, plus periodized lattice tables,
//! * [`noise`] — Levy measures, Poisson random measure sampling,
//!   stochastic convolutions, and Walsh-isometry checks,
//! * [`solver`] — mild-solution marching and Picard iteration,
//! * [`analysis`] — contraction constants, renewal/Volterra engines, moment
//!   and growth-rate estimation, and blow-up certificates,
//! * [`config`] / [`cli`] — reproducible config-driven experiments.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod grid;
pub mod kernels;
pub mod noise;
pub mod quad;
pub mod rng;
pub mod solver;
pub mod specfun;
