//! Iteration, period detection and fixed points of stroboscopic maps.
//!
//! A [`MapHandle`] is either the exact map (RK4 over one drive period) or a
//! Taylor map; both are called as `(q, p, omega) -> (q', p')`. For repeated
//! use at one frequency, [`MapHandle::at`] returns a [`BoundMap`] with the
//! per-frequency work done up front.

use num_complex::Complex64;
use thiserror::Error;

use crate::duffing::{DuffingMap, DuffingParams, ExactFlow, DEFAULT_EXACT_STEPS};
use crate::poly::{Basis, PolyError, TruncatedPoly};

pub const DEFAULT_ESCAPE_RADIUS: f64 = 1e3;
pub const DEFAULT_PERIOD_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_PERIOD: usize = 64;
/// Finite-difference step for exact-map Jacobians.
pub const FD_STEP: f64 = 1e-6;
/// Consecutive strides a candidate period must survive.
pub const MIN_STRIDES: usize = 4;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("period detection needs at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("period must be at least 1")]
    ZeroPeriod,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Exact stroboscopic map of the Duffing oscillator.
#[derive(Clone, Debug)]
pub struct ExactMap {
    pub params: DuffingParams,
    flow: ExactFlow,
}

impl ExactMap {
    pub fn new(params: DuffingParams, steps: usize) -> Self {
        ExactMap { params, flow: ExactFlow::new(params.beta, params.epsilon, steps) }
    }

    pub fn steps(&self) -> usize {
        self.flow.steps()
    }
}

/// Taylor map with derivative polynomials prepared for Jacobians.
#[derive(Clone, Debug)]
pub struct TaylorMap {
    pub map: DuffingMap,
}

#[derive(Clone, Debug)]
pub enum MapHandle {
    Exact(ExactMap),
    Taylor(TaylorMap),
}

impl MapHandle {
    pub fn exact(params: DuffingParams) -> Self {
        MapHandle::Exact(ExactMap::new(params, DEFAULT_EXACT_STEPS))
    }

    pub fn exact_with_steps(params: DuffingParams, steps: usize) -> Self {
        MapHandle::Exact(ExactMap::new(params, steps))
    }

    pub fn taylor(map: DuffingMap) -> Self {
        MapHandle::Taylor(TaylorMap { map })
    }

    pub fn params(&self) -> DuffingParams {
        match self {
            MapHandle::Exact(e) => e.params,
            MapHandle::Taylor(t) => t.map.params,
        }
    }

    pub fn is_taylor(&self) -> bool {
        matches!(self, MapHandle::Taylor(_))
    }

    /// Prepares the map for repeated application at one drive frequency.
    pub fn at(&self, omega: f64) -> BoundMap<'_> {
        match self {
            MapHandle::Exact(e) => BoundMap::Exact { map: e, omega },
            MapHandle::Taylor(t) => BoundMap::Taylor(Box::new(ReducedTaylor::new(&t.map, omega))),
        }
    }

    pub fn apply(&self, q: f64, p: f64, omega: f64) -> (f64, f64) {
        let [a, b] = self.at(omega).apply([q, p]);
        (a, b)
    }

    pub fn jacobian(&self, q: f64, p: f64, omega: f64) -> Mat2 {
        self.at(omega).jacobian([q, p])
    }
}

/// A Taylor map with `zeta_3` substituted: two polynomials in `(zeta_1, zeta_2)`.
#[derive(Clone, Debug)]
pub struct ReducedTaylor {
    omega: f64,
    origin: [f64; 2],
    image: [f64; 2],
    components: [TruncatedPoly; 2],
    /// `derivs[a][b] = d component_a / d zeta_b`.
    derivs: [[TruncatedPoly; 2]; 2],
}

impl ReducedTaylor {
    fn new(map: &DuffingMap, omega: f64) -> Self {
        let pm = &map.map;
        let zeta3 = omega - pm.expansion_point[2];
        let reduce = |a: usize| pm.components[a].fix_variable(2, zeta3).expect("three-variable map");
        let components = [reduce(0), reduce(1)];
        let derivs = [
            [components[0].diff(0), components[0].diff(1)],
            [components[1].diff(0), components[1].diff(1)],
        ];
        ReducedTaylor {
            omega,
            origin: [pm.expansion_point[0], pm.expansion_point[1]],
            image: [pm.design_image[0], pm.design_image[1]],
            components,
            derivs,
        }
    }

    fn basis(&self) -> &Basis {
        self.components[0].basis()
    }

    /// Runs `f` on the monomial values at the deviation of `z`.
    fn with_monomials<T>(&self, z: [f64; 2], f: impl FnOnce(&[f64]) -> T) -> T {
        let zeta = [z[0] - self.origin[0], z[1] - self.origin[1]];
        let len = self.basis().len();
        let mut stack = [0.0; 128];
        let mut heap = Vec::new();
        let vals: &mut [f64] = if len <= stack.len() {
            &mut stack[..len]
        } else {
            heap.resize(len, 0.0);
            &mut heap
        };
        self.basis().monomial_values(&zeta, vals);
        f(vals)
    }

    fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        self.with_monomials(z, |vals| {
            [
                self.image[0] + self.components[0].eval_with(vals),
                self.image[1] + self.components[1].eval_with(vals),
            ]
        })
    }

    fn jacobian(&self, z: [f64; 2]) -> Mat2 {
        let d = &self.derivs;
        self.with_monomials(z, |vals| {
            [
                [d[0][0].eval_with(vals), d[0][1].eval_with(vals)],
                [d[1][0].eval_with(vals), d[1][1].eval_with(vals)],
            ]
        })
    }
}

/// A map fixed at one drive frequency.
#[derive(Clone, Debug)]
pub enum BoundMap<'a> {
    Exact { map: &'a ExactMap, omega: f64 },
    Taylor(Box<ReducedTaylor>),
}

impl BoundMap<'_> {
    pub fn omega(&self) -> f64 {
        match self {
            BoundMap::Exact { omega, .. } => *omega,
            BoundMap::Taylor(t) => t.omega,
        }
    }

    pub fn apply(&self, z: [f64; 2]) -> [f64; 2] {
        match self {
            BoundMap::Exact { map, omega } => map.flow.period_map(z, *omega),
            BoundMap::Taylor(t) => t.apply(z),
        }
    }

    /// Jacobian of one application: analytic for Taylor maps, central
    /// differences with step [`FD_STEP`] for the exact map.
    pub fn jacobian(&self, z: [f64; 2]) -> Mat2 {
        match self {
            BoundMap::Exact { .. } => {
                let h = FD_STEP;
                let mut jac = [[0.0; 2]; 2];
                for b in 0..2 {
                    let mut plus = z;
                    let mut minus = z;
                    plus[b] += h;
                    minus[b] -= h;
                    let fp = self.apply(plus);
                    let fm = self.apply(minus);
                    for a in 0..2 {
                        jac[a][b] = (fp[a] - fm[a]) / (2.0 * h);
                    }
                }
                jac
            }
            BoundMap::Taylor(t) => t.jacobian(z),
        }
    }

    /// `M^k(z)` and the chain-rule Jacobian of `M^k` at `z`.
    pub fn power_with_jacobian(&self, z: [f64; 2], k: usize) -> ([f64; 2], Mat2) {
        let mut jac = [[1.0, 0.0], [0.0, 1.0]];
        let mut cur = z;
        for _ in 0..k {
            jac = mat_mul(&self.jacobian(cur), &jac);
            cur = self.apply(cur);
        }
        (cur, jac)
    }
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Eigenvalues of a real 2x2 matrix.
pub fn eigenvalues(a: &Mat2) -> [Complex64; 2] {
    let half_trace = 0.5 * (a[0][0] + a[1][1]);
    let disc = Complex64::new(half_trace * half_trace - det(a), 0.0).sqrt();
    [half_trace + disc, half_trace - disc]
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitSample {
    pub points: Vec<[f64; 2]>,
    pub escaped: bool,
    /// Zero-based application count at which the orbit left the escape radius.
    pub escape_step: Option<usize>,
}

fn escapes(z: [f64; 2], radius: f64) -> bool {
    !(z[0].is_finite() && z[1].is_finite()) || z[0].abs() > radius || z[1].abs() > radius
}

/// Applies the map `transient` times, then records `keep` more iterates.
pub fn iterate(
    map: &BoundMap<'_>,
    start: [f64; 2],
    transient: usize,
    keep: usize,
    escape_radius: f64,
) -> OrbitSample {
    let mut z = start;
    let mut points = Vec::with_capacity(keep);
    for step in 0..transient + keep {
        z = map.apply(z);
        if escapes(z, escape_radius) {
            return OrbitSample { points, escaped: true, escape_step: Some(step) };
        }
        if step >= transient {
            points.push(z);
        }
    }
    OrbitSample { points, escaped: false, escape_step: None }
}

/// Smallest `k <= max_period` for which every point agrees with the one `k`
/// later to within `tol`, checked over at least [`MIN_STRIDES`] strides.
pub fn detect_period(points: &[[f64; 2]], tol: f64, max_period: usize) -> Result<Option<usize>, DynamicsError> {
    let needed = 2 * max_period.max(1);
    if points.len() < needed {
        return Err(DynamicsError::InsufficientPoints { needed, got: points.len() });
    }
    let tol2 = tol * tol;
    'candidates: for k in 1..=max_period {
        if points.len() < MIN_STRIDES * k {
            break;
        }
        for i in 0..points.len() - k {
            let (a, b) = (points[i], points[i + k]);
            let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            if d2.is_nan() || d2 > tol2 {
                continue 'candidates;
            }
        }
        return Ok(Some(k));
    }
    Ok(None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointResult {
    pub location: [f64; 2],
    pub omega: f64,
    pub period: usize,
    pub stability: Stability,
    pub multipliers: [Complex64; 2],
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub diagnostic: Option<String>,
}

impl FixedPointResult {
    pub fn is_stable(&self) -> bool {
        self.stability == Stability::Stable
    }

    pub fn jacobian_det(&self) -> f64 {
        (self.multipliers[0] * self.multipliers[1]).re
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 50, max_halvings: 20 }
    }
}

/// Singular-Jacobian threshold on `|det(J_k - I)|`.
const SINGULAR_DET: f64 = 1e-12;

/// Newton iteration on `M^k(z) - z`.
pub fn newton_fixed_point(
    map: &BoundMap<'_>,
    k: usize,
    guess: [f64; 2],
    opts: &NewtonOptions,
) -> Result<FixedPointResult, DynamicsError> {
    if k == 0 {
        return Err(DynamicsError::ZeroPeriod);
    }
    let omega = map.omega();
    let residual_at = |z: [f64; 2]| -> (f64, [f64; 2], Mat2) {
        let (img, jac) = map.power_with_jacobian(z, k);
        let f = [img[0] - z[0], img[1] - z[1]];
        (f[0].hypot(f[1]), f, jac)
    };

    let mut z = guess;
    let (mut res, mut f, mut jac) = residual_at(z);
    let mut diagnostic = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if !res.is_finite() {
            diagnostic = Some("iterate left the finite domain".to_string());
            break;
        }
        if res < opts.tol {
            converged = true;
            break;
        }
        let a = [[jac[0][0] - 1.0, jac[0][1]], [jac[1][0], jac[1][1] - 1.0]];
        let d = det(&a);
        if d.abs() < SINGULAR_DET {
            diagnostic = Some(format!("singular Newton matrix, det(J - I) = {d:e}"));
            break;
        }
        let step = [
            -(a[1][1] * f[0] - a[0][1] * f[1]) / d,
            -(-a[1][0] * f[0] + a[0][0] * f[1]) / d,
        ];
        iterations += 1;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = [z[0] + scale * step[0], z[1] + scale * step[1]];
            let eval = residual_at(trial);
            if eval.0.is_finite() && eval.0 < res {
                accepted = Some((trial, eval));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, (r, fv, jv))) => {
                z = trial;
                res = r;
                f = fv;
                jac = jv;
            }
            None => {
                // no descent along the Newton direction: already at the noise floor
                if res < opts.tol * 1e3 {
                    converged = true;
                } else {
                    diagnostic = Some(format!("line search stalled at residual {res:e}"));
                }
                break;
            }
        }
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!("no convergence in {} iterations (residual {res:e})", opts.max_iter));
    }
    let multipliers = eigenvalues(&jac);
    let stability = if multipliers.iter().all(|m| m.norm() < 1.0) { Stability::Stable } else { Stability::Unstable };
    Ok(FixedPointResult {
        location: z,
        omega,
        period: k,
        stability,
        multipliers,
        converged,
        iterations,
        residual: res,
        diagnostic,
    })
}
