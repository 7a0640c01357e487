//! Complete variational equations in coefficient space.
//!
//! Deviations `zeta` from a design orbit `z_d(t)` obey
//! `dzeta/dt = g(z_d(t), t, zeta)` where `g` has no constant term. Writing
//! `zeta(t) = H(t)(zeta_i)` as a truncated polynomial in the initial
//! deviations turns this into an ODE for the coefficients of `H`, which is
//! integrated here together with the design orbit by classical RK4.

use std::sync::Arc;

use thiserror::Error;

use crate::poly::{Basis, PolyError, PolyMap, PowerTable, TruncatedPoly};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VariationalError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error("integration interval [{t0}, {t1}] is reversed")]
    ReversedInterval { t0: f64, t1: f64 },
    #[error("map order must be at least 1")]
    ZeroOrder,
    #[error("design point has {got} entries, system state dimension is {expected}")]
    DesignDimension { expected: usize, got: usize },
    #[error("non-finite value at step {step} (t = {t}) in {component}")]
    NonFinite { step: usize, t: f64, component: String },
    #[error("forcing for component {component} has a nonzero constant term")]
    ForcingConstantTerm { component: usize },
    #[error("constant term of component {component} left zero at step {step}")]
    ConstantTermDrift { step: usize, component: usize },
}

/// An ODE system prepared for expansion about a design orbit.
///
/// Deviation components `0..state_dim()` track the phase-space state; the
/// remaining `dev_dim() - state_dim()` components are parameter offsets whose
/// forcing must vanish identically.
pub trait SystemDefinition {
    fn state_dim(&self) -> usize;

    fn dev_dim(&self) -> usize;

    /// `f(z_d, t)` for the design orbit.
    fn design_rhs(&self, z: &[f64], t: f64, dz: &mut [f64]);

    /// `g_a(z_d, t, zeta) = f_a(z_d + zeta, t) - f_a(z_d, t)` as truncated
    /// polynomials over `basis` (one per deviation component, zero constant term).
    fn forcing(&self, z: &[f64], t: f64, basis: &Arc<Basis>) -> Vec<TruncatedPoly>;

    /// Design values of the parameter deviations, in component order.
    fn parameter_values(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Design point plus the coefficient polynomials `H_a(t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState {
    pub t: f64,
    pub z_design: Vec<f64>,
    pub h: Vec<TruncatedPoly>,
}

impl VariationalState {
    /// `H` = identity map at `t0`.
    pub fn initial(basis: &Arc<Basis>, t0: f64, z0: &[f64]) -> Self {
        VariationalState {
            t: t0,
            z_design: z0.to_vec(),
            h: (0..basis.num_vars()).map(|a| TruncatedPoly::variable(basis, a)).collect(),
        }
    }
}

/// Right-hand side of the joint (design orbit, coefficient) system.
pub fn variational_rhs<S: SystemDefinition + ?Sized>(
    sys: &S,
    state: &VariationalState,
) -> Result<(Vec<f64>, Vec<TruncatedPoly>), VariationalError> {
    let basis = Arc::clone(state.h[0].basis());
    let mz = sys.state_dim();
    let mut y = state.z_design.clone();
    for p in &state.h {
        y.extend_from_slice(p.coeffs());
    }
    let mut dy = vec![0.0; y.len()];
    joint_rhs(sys, &basis, state.t, &y, &mut dy)?;
    let dz = dy[..mz].to_vec();
    let dh = dy[mz..]
        .chunks(basis.len())
        .map(|c| TruncatedPoly::from_coeffs(&basis, c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((dz, dh))
}

/// Flat layout: `y = [z_design.., H_0 coeffs.., H_1 coeffs.., ...]`.
fn joint_rhs<S: SystemDefinition + ?Sized>(
    sys: &S,
    basis: &Arc<Basis>,
    t: f64,
    y: &[f64],
    dy: &mut [f64],
) -> Result<(), VariationalError> {
    let mz = sys.state_dim();
    let len = basis.len();
    let (z, h) = y.split_at(mz);
    let (dz, dh) = dy.split_at_mut(mz);
    sys.design_rhs(z, t, dz);
    let forcing = sys.forcing(z, t, basis);
    let mut table = PowerTable::new(basis, h.chunks(len).collect());
    dh.fill(0.0);
    for (a, g) in forcing.iter().enumerate() {
        let coeffs = g.coeffs();
        if coeffs[0] != 0.0 {
            return Err(VariationalError::ForcingConstantTerm { component: a });
        }
        let out = &mut dh[a * len..(a + 1) * len];
        for (r, &c) in coeffs.iter().enumerate().skip(1) {
            if c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(table.get(r)) {
                *o += c * v;
            }
        }
    }
    Ok(())
}

/// Integrates the complete variational equations from `t0` to `t1` with
/// `steps` RK4 steps and returns the order-`n` transfer map about `z0`.
pub fn integrate_map<S: SystemDefinition + ?Sized>(
    sys: &S,
    z0: &[f64],
    t0: f64,
    t1: f64,
    n: usize,
    steps: usize,
) -> Result<PolyMap, VariationalError> {
    if n == 0 {
        return Err(VariationalError::ZeroOrder);
    }
    if z0.len() != sys.state_dim() {
        return Err(VariationalError::DesignDimension { expected: sys.state_dim(), got: z0.len() });
    }
    let basis = Basis::shared(sys.dev_dim(), n)?;
    let mut expansion_point = z0.to_vec();
    expansion_point.extend(sys.parameter_values());
    if t1 == t0 {
        return Ok(PolyMap::identity(&basis, expansion_point));
    }
    if t1 < t0 {
        return Err(VariationalError::ReversedInterval { t0, t1 });
    }
    if steps == 0 {
        return Err(VariationalError::ZeroSteps);
    }

    let mz = sys.state_dim();
    let len = basis.len();
    let init = VariationalState::initial(&basis, t0, z0);
    let mut y = init.z_design.clone();
    for p in &init.h {
        y.extend_from_slice(p.coeffs());
    }
    let dim = y.len();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let h = (t1 - t0) / steps as f64;

    for step in 0..steps {
        let t = t0 + step as f64 * h;
        joint_rhs(sys, &basis, t, &y, &mut k1)?;
        axpy_into(&y, 0.5 * h, &k1, &mut tmp);
        joint_rhs(sys, &basis, t + 0.5 * h, &tmp, &mut k2)?;
        axpy_into(&y, 0.5 * h, &k2, &mut tmp);
        joint_rhs(sys, &basis, t + 0.5 * h, &tmp, &mut k3)?;
        axpy_into(&y, h, &k3, &mut tmp);
        joint_rhs(sys, &basis, t + h, &tmp, &mut k4)?;
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            let component = if i < mz {
                format!("design coordinate {i}")
            } else {
                let a = (i - mz) / len;
                format!("component {a} coefficient {:?}", basis.exponents((i - mz) % len))
            };
            return Err(VariationalError::NonFinite { step, t: t + h, component });
        }
        for a in 0..sys.dev_dim() {
            if y[mz + a * len] != 0.0 {
                return Err(VariationalError::ConstantTermDrift { step, component: a });
            }
        }
    }

    let mut design_image = y[..mz].to_vec();
    design_image.extend(sys.parameter_values());
    let components = y[mz..]
        .chunks(len)
        .map(|c| TruncatedPoly::from_coeffs(&basis, c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolyMap { components, expansion_point, design_image, duration: t1 - t0, steps })
}

fn axpy_into(y: &[f64], a: f64, k: &[f64], out: &mut [f64]) {
    for ((o, yi), ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}

/// Largest coefficient change between builds at `steps` and `2 * steps`.
pub fn order_refine_check<S: SystemDefinition + ?Sized>(
    sys: &S,
    z0: &[f64],
    t0: f64,
    t1: f64,
    n: usize,
    steps: usize,
) -> Result<f64, VariationalError> {
    let coarse = integrate_map(sys, z0, t0, t1, n, steps)?;
    let fine = integrate_map(sys, z0, t0, t1, n, 2 * steps)?;
    Ok(max_coeff_diff(&coarse, &fine))
}

/// Largest absolute coefficient difference between two maps of equal shape.
pub fn max_coeff_diff(a: &PolyMap, b: &PolyMap) -> f64 {
    a.components
        .iter()
        .zip(&b.components)
        .flat_map(|(p, q)| p.coeffs().iter().zip(q.coeffs()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `dz/dt = A z` with constant `A`, no parameters.
    struct Linear {
        a: [[f64; 2]; 2],
    }

    impl SystemDefinition for Linear {
        fn state_dim(&self) -> usize {
            2
        }
        fn dev_dim(&self) -> usize {
            2
        }
        fn design_rhs(&self, z: &[f64], _t: f64, dz: &mut [f64]) {
            dz[0] = self.a[0][0] * z[0] + self.a[0][1] * z[1];
            dz[1] = self.a[1][0] * z[0] + self.a[1][1] * z[1];
        }
        fn forcing(&self, _z: &[f64], _t: f64, basis: &Arc<Basis>) -> Vec<TruncatedPoly> {
            (0..2)
                .map(|r| {
                    let mut g = TruncatedPoly::zero(basis);
                    g.coeffs_mut()[1] = self.a[r][0];
                    g.coeffs_mut()[2] = self.a[r][1];
                    g
                })
                .collect()
        }
    }

    /// Logistic-like scalar field `dz/dt = z - z^2` plus a frozen parameter row.
    struct Quadratic;

    impl SystemDefinition for Quadratic {
        fn state_dim(&self) -> usize {
            1
        }
        fn dev_dim(&self) -> usize {
            2
        }
        fn design_rhs(&self, z: &[f64], _t: f64, dz: &mut [f64]) {
            dz[0] = z[0] - z[0] * z[0];
        }
        fn forcing(&self, z: &[f64], _t: f64, basis: &Arc<Basis>) -> Vec<TruncatedPoly> {
            let mut g = TruncatedPoly::zero(basis);
            g.coeffs_mut()[1] = 1.0 - 2.0 * z[0];
            if basis.max_degree() >= 2 {
                g.coeffs_mut()[basis.index_of(&[2, 0]).unwrap()] = -1.0;
            }
            vec![g, TruncatedPoly::zero(basis)]
        }
        fn parameter_values(&self) -> Vec<f64> {
            vec![0.7]
        }
    }

    struct Zero;

    impl SystemDefinition for Zero {
        fn state_dim(&self) -> usize {
            2
        }
        fn dev_dim(&self) -> usize {
            2
        }
        fn design_rhs(&self, _z: &[f64], _t: f64, dz: &mut [f64]) {
            dz.fill(0.0);
        }
        fn forcing(&self, _z: &[f64], _t: f64, basis: &Arc<Basis>) -> Vec<TruncatedPoly> {
            vec![TruncatedPoly::zero(basis); 2]
        }
    }

    #[test]
    fn linear_forcing_gives_first_degree_variational_equations() {
        let sys = Linear { a: [[0.0, 1.0], [-1.0, -0.2]] };
        let basis = Basis::shared(2, 3).unwrap();
        let state = VariationalState::initial(&basis, 0.0, &[0.3, 0.1]);
        let (dz, dh) = variational_rhs(&sys, &state).unwrap();
        assert_eq!(dz, vec![0.1, -0.3 - 0.02]);
        // dH_a = sum_b A_ab H_b with H = identity
        assert_eq!(dh[0], TruncatedPoly::variable(&basis, 1));
        assert_eq!(dh[1], TruncatedPoly::variable(&basis, 0).scale(-1.0).add(&TruncatedPoly::variable(&basis, 1).scale(-0.2)).unwrap());
    }

    #[test]
    fn zero_forcing_keeps_identity() {
        let basis = Basis::shared(2, 4).unwrap();
        let state = VariationalState::initial(&basis, 0.0, &[1.0, 2.0]);
        let (_, dh) = variational_rhs(&Zero, &state).unwrap();
        assert!(dh.iter().all(|p| p.max_abs() == 0.0));
        let map = integrate_map(&Zero, &[1.0, 2.0], 0.0, 3.0, 4, 17).unwrap();
        assert_eq!(map.components, state.h);
    }

    #[test]
    fn degenerate_interval_is_identity() {
        let sys = Linear { a: [[0.0, 1.0], [-1.0, 0.0]] };
        let map = integrate_map(&sys, &[0.0, 0.0], 1.0, 1.0, 3, 0).unwrap();
        let basis = Basis::shared(2, 3).unwrap();
        assert_eq!(map, PolyMap::identity(&basis, vec![0.0, 0.0]));
    }

    #[test]
    fn argument_errors() {
        let sys = Linear { a: [[0.0, 1.0], [-1.0, 0.0]] };
        assert_eq!(integrate_map(&sys, &[0.0, 0.0], 0.0, 1.0, 3, 0), Err(VariationalError::ZeroSteps));
        assert_eq!(integrate_map(&sys, &[0.0, 0.0], 0.0, 1.0, 0, 10), Err(VariationalError::ZeroOrder));
        assert!(matches!(
            integrate_map(&sys, &[0.0, 0.0], 1.0, 0.0, 3, 10),
            Err(VariationalError::ReversedInterval { .. })
        ));
        assert!(matches!(
            integrate_map(&sys, &[0.0], 0.0, 1.0, 3, 10),
            Err(VariationalError::DesignDimension { .. })
        ));
    }

    #[test]
    fn blow_up_reports_step() {
        // dz/dt = z^2 from z = 1 blows up at t = 1
        struct Riccati;
        impl SystemDefinition for Riccati {
            fn state_dim(&self) -> usize {
                1
            }
            fn dev_dim(&self) -> usize {
                1
            }
            fn design_rhs(&self, z: &[f64], _t: f64, dz: &mut [f64]) {
                dz[0] = z[0] * z[0];
            }
            fn forcing(&self, z: &[f64], _t: f64, basis: &Arc<Basis>) -> Vec<TruncatedPoly> {
                let mut g = TruncatedPoly::zero(basis);
                g.coeffs_mut()[1] = 2.0 * z[0];
                g.coeffs_mut()[2] = 1.0;
                vec![g]
            }
        }
        let err = integrate_map(&Riccati, &[1.0], 0.0, 3.0, 2, 40).unwrap_err();
        assert!(matches!(err, VariationalError::NonFinite { .. }), "{err:?}");
    }

    #[test]
    fn quadratic_map_matches_closed_form() {
        // z(t) = z0 e^t / (1 - z0 + z0 e^t); expand about z0 = 0.5 through order 4
        let map = integrate_map(&Quadratic, &[0.5], 0.0, 1.0, 4, 400).unwrap();
        let flow = |z0: f64| z0 * 1f64.exp() / (1.0 - z0 + z0 * 1f64.exp());
        let d = 1e-2;
        let exact = flow(0.5 + d) - flow(0.5);
        let approx = map.eval(&[d, 0.0])[0];
        assert!((exact - approx).abs() < 1e-10, "{exact} vs {approx}");
        assert!((map.design_image[0] - flow(0.5)).abs() < 1e-10);
        // parameter row stays the identity monomial
        let basis = map.basis().clone();
        assert_eq!(map.components[1], TruncatedPoly::variable(&basis, 1));
        assert_eq!(map.expansion_point, vec![0.5, 0.7]);
    }

    #[test]
    fn constant_coefficient_linear_system_refines_to_roundoff_at_fine_steps() {
        let sys = Linear { a: [[0.0, 1.0], [-1.0, -0.2]] };
        let diff = order_refine_check(&sys, &[0.0, 0.0], 0.0, 1.0, 3, 4096).unwrap();
        assert!(diff < 1e-14, "{diff}");
    }

    #[test]
    fn richardson_slope_is_fourth_order() {
        let errs: Vec<f64> = [20, 40, 80]
            .iter()
            .map(|&s| order_refine_check(&Quadratic, &[0.5], 0.0, 2.0, 4, s).unwrap())
            .collect();
        let slope1 = (errs[0] / errs[1]).log2();
        let slope2 = (errs[1] / errs[2]).log2();
        assert!((3.7..=4.3).contains(&slope1), "{slope1}");
        assert!((3.7..=4.3).contains(&slope2), "{slope2}");
    }
}
