//! Numerical laboratory for iterated function systems of nondecreasing
//! self-maps of `[0, 1]` that fix both endpoints.
//!
//! The invariant measure of a system can be computed three ways:
//! the grid transfer operator ([`transfer::fixed_point`]), forward orbits
//! ([`sampling::forward_orbit`]) and backward iteration
//! ([`sampling::backward_ensemble`]). Alongside sit admissibility checks,
//! constructive power-tail certificates, the plateau construction that forces
//! atoms into invariant measures, and concentration diagnostics.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod interval_maps;
pub mod measures;
pub mod perturbation;
pub mod sampling;
pub mod system;
pub mod transfer;

pub use error::{Error, Result};
pub use interval_maps::IntervalMap;
pub use measures::GridMeasure;
pub use system::IfsSystem;

/// Map family used throughout the tests and docs: two piecewise-linear
/// homeomorphisms, one above and one below the diagonal, swapped by `x -> 1 - x`.
pub fn example_e1() -> IfsSystem {
    let g1 = IntervalMap::piecewise_linear(vec![(0.0, 0.0), (0.1, 0.5), (1.0, 1.0)])
        .expect("valid knots");
    let g2 = IntervalMap::piecewise_linear(vec![(0.0, 0.0), (0.9, 0.5), (1.0, 1.0)])
        .expect("valid knots");
    IfsSystem::new(vec![g1, g2], vec![0.5, 0.5], system::DEFAULT_BETA).expect("valid system")
}

/// Shortest round-trip decimal, switching to exponent form for very small or
/// very large magnitudes so CSV cells stay short.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}
