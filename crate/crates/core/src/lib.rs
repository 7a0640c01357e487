//! Truncated Taylor transfer maps of ODE flows from the complete variational
//! equations, applied to the stroboscopic map of the driven Duffing oscillator.
//!
//! * [`poly`]: dense truncated multivariate polynomials.
//! * [`variational`]: coefficient-space integration producing a [`poly::PolyMap`].
//! * [`duffing`]: the Duffing system, its Taylor-map builder and exact flow.
//! * [`dynamics`]: iteration, period detection, Newton fixed points.
//! * [`feigenbaum`]: frequency sweeps, unstable trails, attractor clouds.
//! * [`cli`]: map files, run configuration and the command-line front end.

pub mod cli;
pub mod duffing;
pub mod dynamics;
pub mod feigenbaum;
pub mod poly;
pub mod variational;
