//! Sampling, asymptotic constants and Monte Carlo checks for `tr f(H)` with
//! `H` a Wigner matrix.

pub mod chebyshev;
pub mod ensemble;
pub mod greenfn;
pub mod montecarlo;
pub mod spectral;
pub mod theory;
