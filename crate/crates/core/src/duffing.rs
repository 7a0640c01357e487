//! The scaled driven Duffing oscillator
//!
//! ```text
//! dq/dtau = p
//! dp/dtau = -2 beta p - q - q^3 - epsilon sin(omega tau)
//! ```
//!
//! and its stroboscopic map over one drive period `T = 2 pi / omega`.
//!
//! For the Taylor map the drive frequency is a third deviation variable,
//! `omega = omega_d + zeta_3`. The period then depends on `zeta_3`, so the
//! variational system is written in the rescaled time `s = tau omega / omega_d`,
//! which runs over the fixed interval `[0, 2 pi / omega_d]` for every `omega`:
//!
//! ```text
//! dz/ds = kappa(zeta_3) f(z, s),   kappa = omega_d / (omega_d + zeta_3),
//! ```
//!
//! with the drive `sin(omega_d s)` independent of `zeta_3`. On the design
//! orbit (`zeta_3 = 0`) `s` and `tau` coincide.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use crate::poly::{Basis, PolyMap, TruncatedPoly};
use crate::variational::{integrate_map, SystemDefinition, VariationalError};

/// Default RK4 steps per drive period for map builds.
pub const DEFAULT_BUILD_STEPS: usize = 2048;
/// Default RK4 steps per drive period for the exact map.
pub const DEFAULT_EXACT_STEPS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DuffingParams {
    pub beta: f64,
    pub epsilon: f64,
    /// Design drive frequency.
    pub omega_d: f64,
}

impl DuffingParams {
    /// Drive phase. Fixed: the drive term is `-epsilon sin(omega tau)`, which
    /// vanishes at every stroboscopic time.
    pub const PSI: f64 = FRAC_PI_2;

    pub fn new(beta: f64, epsilon: f64, omega_d: f64) -> Self {
        DuffingParams { beta, epsilon, omega_d }
    }

    pub fn drive_period(&self) -> f64 {
        2.0 * PI / self.omega_d
    }
}

impl Default for DuffingParams {
    fn default() -> Self {
        DuffingParams { beta: 0.1, epsilon: 25.0, omega_d: 1.285 }
    }
}

/// Phase-space point and drive frequency about which a map is expanded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpansionPoint {
    pub q_bd: f64,
    pub p_bd: f64,
    pub omega_bd: f64,
}

impl Default for ExpansionPoint {
    /// An unstable period-one point of the `beta = 0.1, epsilon = 25` map.
    fn default() -> Self {
        ExpansionPoint { q_bd: 1.26082, p_bd: 2.05452, omega_bd: 1.285 }
    }
}

/// Vector field at drive frequency `omega`.
pub fn duffing_rhs(z: [f64; 2], tau: f64, params: &DuffingParams, omega: f64) -> [f64; 2] {
    let [q, p] = z;
    [p, -2.0 * params.beta * p - q - q * q * q - params.epsilon * (omega * tau).sin()]
}

/// Forcing polynomials in `(zeta_1, zeta_2, zeta_3)` about the design point
/// `z_d` at rescaled time `s`, truncated at the basis order.
///
/// Component `a` is `kappa(zeta_3) f_a(z_d + zeta, s) - f_a(z_d, s)` with
/// `kappa` expanded as the geometric series in `-zeta_3 / omega_d`.
/// Component 3 is identically zero.
pub fn duffing_forcing(z_d: [f64; 2], s: f64, params: &DuffingParams, basis: &Arc<Basis>) -> [TruncatedPoly; 3] {
    let n = basis.max_degree();
    let q = z_d[0];
    let [f1, f2] = duffing_rhs(z_d, s, params, params.omega_d);

    let mut kappa = TruncatedPoly::zero(basis);
    let mut term = 1.0;
    for k in 0..=n {
        let r = basis.index_of(&[0, 0, k as u16]).expect("power of zeta_3 within order");
        kappa.coeffs_mut()[r] = term;
        term *= -1.0 / params.omega_d;
    }

    let set = |poly: &mut TruncatedPoly, e: [u16; 3], c: f64| {
        if let Ok(r) = basis.index_of(&e) {
            poly.coeffs_mut()[r] += c;
        }
    };

    let mut lifted1 = TruncatedPoly::zero(basis);
    set(&mut lifted1, [0, 0, 0], f1);
    set(&mut lifted1, [0, 1, 0], 1.0);

    let mut lifted2 = TruncatedPoly::zero(basis);
    set(&mut lifted2, [0, 0, 0], f2);
    set(&mut lifted2, [1, 0, 0], -(1.0 + 3.0 * q * q));
    set(&mut lifted2, [0, 1, 0], -2.0 * params.beta);
    set(&mut lifted2, [2, 0, 0], -3.0 * q);
    set(&mut lifted2, [3, 0, 0], -1.0);

    let mut g1 = kappa.mul(&lifted1).expect("shared basis");
    let mut g2 = kappa.mul(&lifted2).expect("shared basis");
    g1.coeffs_mut()[0] = 0.0;
    g2.coeffs_mut()[0] = 0.0;
    [g1, g2, TruncatedPoly::zero(basis)]
}

/// The Duffing oscillator with the drive frequency as a parameter deviation.
#[derive(Clone, Copy, Debug)]
pub struct DuffingSystem {
    pub params: DuffingParams,
}

pub fn duffing_system(params: DuffingParams) -> DuffingSystem {
    DuffingSystem { params }
}

impl DuffingSystem {
    /// Deviation components that are parameters.
    pub const PARAMETER_ROWS: [usize; 1] = [2];
}

impl SystemDefinition for DuffingSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn dev_dim(&self) -> usize {
        3
    }

    fn design_rhs(&self, z: &[f64], t: f64, dz: &mut [f64]) {
        let d = duffing_rhs([z[0], z[1]], t, &self.params, self.params.omega_d);
        dz.copy_from_slice(&d);
    }

    fn forcing(&self, z: &[f64], t: f64, basis: &Arc<Basis>) -> Vec<TruncatedPoly> {
        duffing_forcing([z[0], z[1]], t, &self.params, basis).to_vec()
    }

    fn parameter_values(&self) -> Vec<f64> {
        vec![self.params.omega_d]
    }
}

/// An order-`n` stroboscopic Taylor map together with the parameters it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct DuffingMap {
    pub params: DuffingParams,
    pub map: PolyMap,
}

impl DuffingMap {
    pub fn order(&self) -> usize {
        self.map.max_degree()
    }

    pub fn expansion(&self) -> ExpansionPoint {
        let e = &self.map.expansion_point;
        ExpansionPoint { q_bd: e[0], p_bd: e[1], omega_bd: e[2] }
    }
}

/// Builds the order-`order` map about `(q_bd, p_bd, params.omega_d)` over one drive period.
pub fn build_map(
    params: DuffingParams,
    q_bd: f64,
    p_bd: f64,
    order: usize,
    steps: usize,
) -> Result<DuffingMap, VariationalError> {
    let sys = duffing_system(params);
    let map = integrate_map(&sys, &[q_bd, p_bd], 0.0, params.drive_period(), order, steps)?;
    Ok(DuffingMap { params, map })
}

/// Fixed-step RK4 integrator for one drive period of the full equations.
///
/// The step is `T / steps` with `T = 2 pi / omega`, so the drive is sampled
/// at `omega tau = pi j / steps` for every `omega`; those samples are
/// tabulated once.
#[derive(Clone, Debug)]
pub struct ExactFlow {
    pub beta: f64,
    pub epsilon: f64,
    steps: usize,
    drive: Arc<[f64]>,
}

impl ExactFlow {
    pub fn new(beta: f64, epsilon: f64, steps: usize) -> Self {
        assert!(steps > 0, "exact flow needs at least one step");
        let drive: Arc<[f64]> = (0..=2 * steps).map(|j| (PI * j as f64 / steps as f64).sin()).collect();
        ExactFlow { beta, epsilon, steps, drive }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    fn field(&self, q: f64, p: f64, drive: f64) -> (f64, f64) {
        (p, -2.0 * self.beta * p - q - q * q * q - self.epsilon * drive)
    }

    /// Image of `z` after one period at drive frequency `omega`, starting at `tau = 0`.
    pub fn period_map(&self, z: [f64; 2], omega: f64) -> [f64; 2] {
        let h = 2.0 * PI / omega / self.steps as f64;
        let half = 0.5 * h;
        let sixth = h / 6.0;
        let [mut q, mut p] = z;
        for j in 0..self.steps {
            let d0 = self.drive[2 * j];
            let d1 = self.drive[2 * j + 1];
            let d2 = self.drive[2 * j + 2];
            let (a1, b1) = self.field(q, p, d0);
            let (a2, b2) = self.field(q + half * a1, p + half * b1, d1);
            let (a3, b3) = self.field(q + half * a2, p + half * b2, d1);
            let (a4, b4) = self.field(q + h * a3, p + h * b3, d2);
            q += sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            p += sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        }
        [q, p]
    }
}
