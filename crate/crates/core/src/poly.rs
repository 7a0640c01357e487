//! Dense truncated multivariate polynomials.
//!
//! A [`Basis`] fixes the number of variables `m` and the truncation order `n`
//! and enumerates every monomial of degree `<= n` in graded-lexicographic
//! order: all degree-`d` monomials precede all degree-`d + 1` monomials, and
//! within one degree the exponent vectors are sorted so that a larger power of
//! an earlier variable comes first (`x0` before `x1`, `x0^2` before `x0 x1`).
//! A [`TruncatedPoly`] is a coefficient vector over such a basis.
//!
//! Bases are interned: [`Basis::shared`] hands out one `Arc<Basis>` per
//! `(m, n)` pair, so the multiplication table is built once and shared.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolyError {
    #[error("a polynomial needs at least one variable")]
    NoVariables,
    #[error("monomial count C({m}+{n}, {n}) does not fit in usize")]
    CountOverflow { m: usize, n: usize },
    #[error("exponent vector has {got} entries, expected {expected}")]
    WrongArity { expected: usize, got: usize },
    #[error("monomial degree {degree} exceeds truncation order {max}")]
    DegreeOutOfRange { degree: usize, max: usize },
    #[error("monomial index {index} out of range for a basis of {len} monomials")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("shape mismatch: (m={0}, n={1}) vs (m={2}, n={3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("coefficient vector has length {got}, expected {expected}")]
    WrongLength { expected: usize, got: usize },
}

/// Number of monomials of degree `<= n` in `m` variables, `C(m + n, n)`.
pub fn count_monomials(m: usize, n: usize) -> Result<usize, PolyError> {
    if m == 0 {
        return Err(PolyError::NoVariables);
    }
    binomial(m + n, n).ok_or(PolyError::CountOverflow { m, n })
}

/// `C(a, b)`, or `None` if it does not fit in `usize`.
fn binomial(a: usize, b: usize) -> Option<usize> {
    if b > a {
        return Some(0);
    }
    let b = b.min(a - b);
    let mut acc: u128 = 1;
    for k in 1..=b as u128 {
        // acc * (a - b + k) / k == C(a - b + k, k), always exact
        acc = acc.checked_mul(a as u128 - b as u128 + k)? / k;
        if acc > usize::MAX as u128 {
            return None;
        }
    }
    usize::try_from(acc).ok()
}

/// Monomials of degree exactly `d` in `v` variables.
fn count_exact(v: usize, d: usize) -> usize {
    if v == 0 {
        return usize::from(d == 0);
    }
    binomial(d + v - 1, v - 1).expect("monomial block size overflow")
}

/// Graded-lex rank of `exponents` among monomials in `exponents.len()`
/// variables truncated at order `max_degree`.
pub fn index_of(exponents: &[u16], max_degree: usize) -> Result<usize, PolyError> {
    let m = exponents.len();
    if m == 0 {
        return Err(PolyError::NoVariables);
    }
    let degree: usize = exponents.iter().map(|&e| e as usize).sum();
    if degree > max_degree {
        return Err(PolyError::DegreeOutOfRange { degree, max: max_degree });
    }
    let mut rank = if degree == 0 { 0 } else { count_monomials(m, degree - 1)? };
    let mut remaining = degree;
    for (i, &e) in exponents[..m - 1].iter().enumerate() {
        let e = e as usize;
        let vars_after = m - i - 1;
        // vectors sharing the prefix but with a larger exponent here come first
        for larger in (e + 1)..=remaining {
            rank += count_exact(vars_after, remaining - larger);
        }
        remaining -= e;
    }
    Ok(rank)
}

/// Inverse of [`index_of`].
pub fn exponents_of(r: usize, num_vars: usize, max_degree: usize) -> Result<Vec<u16>, PolyError> {
    let len = count_monomials(num_vars, max_degree)?;
    if r >= len {
        return Err(PolyError::IndexOutOfRange { index: r, len });
    }
    let mut degree = 0;
    let mut offset = 0;
    loop {
        let block = count_exact(num_vars, degree);
        if r < offset + block {
            break;
        }
        offset += block;
        degree += 1;
    }
    let mut within = r - offset;
    let mut remaining = degree;
    let mut exps = Vec::with_capacity(num_vars);
    for i in 0..num_vars - 1 {
        let vars_after = num_vars - i - 1;
        let mut e = remaining;
        loop {
            let block = count_exact(vars_after, remaining - e);
            if within < block {
                break;
            }
            within -= block;
            e -= 1;
        }
        exps.push(e as u16);
        remaining -= e;
    }
    exps.push(remaining as u16);
    Ok(exps)
}

const NONE: u32 = u32::MAX;

/// Monomial enumeration plus the lookup tables every polynomial operation needs.
pub struct Basis {
    num_vars: usize,
    max_degree: usize,
    len: usize,
    exponents: Vec<u16>,
    degrees: Vec<usize>,
    /// `block_start[d]` is the index of the first degree-`d` monomial; `block_start[n + 1] == len`.
    block_start: Vec<usize>,
    /// For `r >= 1`: the monomial obtained by lowering the last nonzero exponent, and that variable.
    parent: Vec<(u32, u16)>,
    /// `lower[r * m + b]`: index of `G_r / x_b`, or `NONE`.
    lower: Vec<u32>,
    products: OnceLock<ProductTable>,
}

struct ProductTable {
    row_start: Vec<usize>,
    target: Vec<u32>,
}

impl fmt::Debug for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Basis")
            .field("num_vars", &self.num_vars)
            .field("max_degree", &self.max_degree)
            .field("len", &self.len)
            .finish()
    }
}

impl Basis {
    /// Builds a fresh basis. Prefer [`Basis::shared`].
    pub fn new(num_vars: usize, max_degree: usize) -> Result<Self, PolyError> {
        let len = count_monomials(num_vars, max_degree)?;
        let mut exponents = Vec::with_capacity(len * num_vars);
        let mut degrees = Vec::with_capacity(len);
        let mut block_start = Vec::with_capacity(max_degree + 2);
        let mut scratch = vec![0u16; num_vars];
        for d in 0..=max_degree {
            block_start.push(degrees.len());
            push_degree_block(&mut scratch, 0, d, &mut exponents);
            degrees.resize(exponents.len() / num_vars, d);
        }
        block_start.push(len);
        debug_assert_eq!(degrees.len(), len);

        let mut basis = Basis {
            num_vars,
            max_degree,
            len,
            exponents,
            degrees,
            block_start,
            parent: Vec::new(),
            lower: Vec::new(),
            products: OnceLock::new(),
        };

        let mut parent = vec![(NONE, 0u16); len];
        let mut lower = vec![NONE; len * num_vars];
        let mut e = vec![0u16; num_vars];
        for r in 1..len {
            e.copy_from_slice(basis.exponents(r));
            for b in 0..num_vars {
                if e[b] == 0 {
                    continue;
                }
                e[b] -= 1;
                lower[r * num_vars + b] = basis.rank_unchecked(&e) as u32;
                e[b] += 1;
            }
            let last = (0..num_vars).rev().find(|&b| e[b] > 0).unwrap();
            parent[r] = (lower[r * num_vars + last], last as u16);
        }
        basis.parent = parent;
        basis.lower = lower;
        Ok(basis)
    }

    /// The interned basis for `(num_vars, max_degree)`.
    pub fn shared(num_vars: usize, max_degree: usize) -> Result<Arc<Self>, PolyError> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Basis>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(b) = guard.get(&(num_vars, max_degree)) {
            return Ok(Arc::clone(b));
        }
        let basis = Arc::new(Basis::new(num_vars, max_degree)?);
        guard.insert((num_vars, max_degree), Arc::clone(&basis));
        Ok(basis)
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// `L(m, n)`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn exponents(&self, r: usize) -> &[u16] {
        &self.exponents[r * self.num_vars..(r + 1) * self.num_vars]
    }

    pub fn degree(&self, r: usize) -> usize {
        self.degrees[r]
    }

    /// Index range of the degree-`d` block.
    pub fn degree_block(&self, d: usize) -> std::ops::Range<usize> {
        self.block_start[d]..self.block_start[d + 1]
    }

    pub fn index_of(&self, exponents: &[u16]) -> Result<usize, PolyError> {
        if exponents.len() != self.num_vars {
            return Err(PolyError::WrongArity { expected: self.num_vars, got: exponents.len() });
        }
        index_of(exponents, self.max_degree)
    }

    fn rank_unchecked(&self, exponents: &[u16]) -> usize {
        index_of(exponents, self.max_degree).expect("exponent vector inside basis")
    }

    /// Index of the monomial `G_r / x_var`, if `x_var` divides it.
    pub fn lowered(&self, r: usize, var: usize) -> Option<usize> {
        match self.lower[r * self.num_vars + var] {
            NONE => None,
            i => Some(i as usize),
        }
    }

    /// For `r >= 1`, `(p, b)` with `G_r = G_p * x_b`.
    pub fn parent(&self, r: usize) -> (usize, usize) {
        let (p, b) = self.parent[r];
        (p as usize, b as usize)
    }

    /// Fills `out[r] = G_r(x)` for every monomial.
    pub fn monomial_values(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.num_vars);
        out[0] = 1.0;
        for r in 1..self.len {
            let (p, b) = self.parent[r];
            out[r] = out[p as usize] * x[b as usize];
        }
    }

    fn products(&self) -> &ProductTable {
        self.products.get_or_init(|| {
            let mut row_start = Vec::with_capacity(self.len + 1);
            let mut target = Vec::new();
            let mut sum = vec![0u16; self.num_vars];
            for i in 0..self.len {
                row_start.push(target.len());
                let room = self.max_degree - self.degrees[i];
                let ei = self.exponents(i);
                for j in 0..self.block_start[room + 1] {
                    for (s, (a, b)) in sum.iter_mut().zip(ei.iter().zip(self.exponents(j))) {
                        *s = a + b;
                    }
                    target.push(self.rank_unchecked(&sum) as u32);
                }
            }
            row_start.push(target.len());
            ProductTable { row_start, target }
        })
    }

    /// `out += a * b`, truncated at the basis order.
    pub(crate) fn mul_acc(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let table = self.products();
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let row = &table.target[table.row_start[i]..table.row_start[i + 1]];
            for (&k, &bj) in row.iter().zip(b) {
                out[k as usize] += ai * bj;
            }
        }
    }
}

fn push_degree_block(scratch: &mut [u16], var: usize, remaining: usize, out: &mut Vec<u16>) {
    if var == scratch.len() - 1 {
        scratch[var] = remaining as u16;
        out.extend_from_slice(scratch);
        return;
    }
    for e in (0..=remaining).rev() {
        scratch[var] = e as u16;
        push_degree_block(scratch, var + 1, remaining - e, out);
    }
}

/// A polynomial in `m` variables truncated at degree `n`.
#[derive(Clone)]
pub struct TruncatedPoly {
    basis: Arc<Basis>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for TruncatedPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_map();
        for (r, &c) in self.coeffs.iter().enumerate() {
            if c != 0.0 {
                list.entry(&self.basis.exponents(r), &c);
            }
        }
        list.finish()
    }
}

impl PartialEq for TruncatedPoly {
    fn eq(&self, other: &Self) -> bool {
        self.same_shape(other) && self.coeffs == other.coeffs
    }
}

impl TruncatedPoly {
    pub fn zero(basis: &Arc<Basis>) -> Self {
        TruncatedPoly { basis: Arc::clone(basis), coeffs: vec![0.0; basis.len()] }
    }

    pub fn constant(basis: &Arc<Basis>, c: f64) -> Self {
        let mut p = Self::zero(basis);
        p.coeffs[0] = c;
        p
    }

    /// The degree-one monomial `x_var`.
    pub fn variable(basis: &Arc<Basis>, var: usize) -> Self {
        assert!(var < basis.num_vars(), "variable {var} out of range");
        let mut p = Self::zero(basis);
        if basis.max_degree() >= 1 {
            p.coeffs[1 + var] = 1.0;
        }
        p
    }

    pub fn monomial(basis: &Arc<Basis>, exponents: &[u16], c: f64) -> Result<Self, PolyError> {
        let mut p = Self::zero(basis);
        p.coeffs[basis.index_of(exponents)?] = c;
        Ok(p)
    }

    pub fn from_coeffs(basis: &Arc<Basis>, coeffs: Vec<f64>) -> Result<Self, PolyError> {
        if coeffs.len() != basis.len() {
            return Err(PolyError::WrongLength { expected: basis.len(), got: coeffs.len() });
        }
        Ok(TruncatedPoly { basis: Arc::clone(basis), coeffs })
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn num_vars(&self) -> usize {
        self.basis.num_vars()
    }

    pub fn max_degree(&self) -> usize {
        self.basis.max_degree()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn coeff(&self, exponents: &[u16]) -> Result<f64, PolyError> {
        Ok(self.coeffs[self.basis.index_of(exponents)?])
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis)
            || (self.num_vars() == other.num_vars() && self.max_degree() == other.max_degree())
    }

    fn check_shape(&self, other: &Self) -> Result<(), PolyError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(PolyError::ShapeMismatch(
                self.num_vars(),
                self.max_degree(),
                other.num_vars(),
                other.max_degree(),
            ))
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_shape(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(TruncatedPoly { basis: Arc::clone(&self.basis), coeffs })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_shape(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(TruncatedPoly { basis: Arc::clone(&self.basis), coeffs })
    }

    pub fn scale(&self, c: f64) -> Self {
        TruncatedPoly {
            basis: Arc::clone(&self.basis),
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
        }
    }

    /// Product with every term above the truncation order dropped.
    pub fn mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.check_shape(other)?;
        let mut out = Self::zero(&self.basis);
        self.basis.mul_acc(&self.coeffs, &other.coeffs, &mut out.coeffs);
        Ok(out)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.num_vars(), "evaluation point has wrong dimension");
        let mut vals = vec![0.0; self.basis.len()];
        self.basis.monomial_values(x, &mut vals);
        self.eval_with(&vals)
    }

    /// Evaluation against precomputed monomial values from [`Basis::monomial_values`].
    pub fn eval_with(&self, monomials: &[f64]) -> f64 {
        self.coeffs.iter().zip(monomials).map(|(c, g)| c * g).sum()
    }

    /// Formal partial derivative with respect to `x_var`.
    pub fn diff(&self, var: usize) -> Self {
        assert!(var < self.num_vars(), "variable {var} out of range");
        let mut out = Self::zero(&self.basis);
        for (r, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            if let Some(lo) = self.basis.lowered(r, var) {
                out.coeffs[lo] += c * f64::from(self.basis.exponents(r)[var]);
            }
        }
        out
    }

    /// Substitutes `x_var = value`, returning a polynomial in the remaining
    /// `m - 1` variables at the same order.
    pub fn fix_variable(&self, var: usize, value: f64) -> Result<Self, PolyError> {
        let m = self.num_vars();
        assert!(var < m, "variable {var} out of range");
        let reduced = Basis::shared(m - 1, self.max_degree())?;
        let mut out = Self::zero(&reduced);
        let mut e = Vec::with_capacity(m - 1);
        for (r, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let full = self.basis.exponents(r);
            e.clear();
            e.extend(full.iter().enumerate().filter(|&(b, _)| b != var).map(|(_, &x)| x));
            let idx = index_of(&e, self.max_degree())?;
            out.coeffs[idx] += c * value.powi(i32::from(full[var]));
        }
        Ok(out)
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Memoized products `G_r(H) = prod_b H_b^{e_b(r)}` for a fixed set of
/// factor polynomials `H` (given as coefficient slices over one basis).
///
/// Each entry is built from its parent monomial by one multiplication, so
/// requesting many related monomials costs one product each.
pub struct PowerTable<'a> {
    basis: &'a Basis,
    factors: Vec<&'a [f64]>,
    cache: Vec<Option<Vec<f64>>>,
}

impl<'a> PowerTable<'a> {
    pub fn new(basis: &'a Basis, factors: Vec<&'a [f64]>) -> Self {
        assert_eq!(factors.len(), basis.num_vars(), "one factor per variable");
        PowerTable { basis, factors, cache: vec![None; basis.len()] }
    }

    pub fn get(&mut self, r: usize) -> &[f64] {
        if self.cache[r].is_none() {
            let mut chain = vec![r];
            let mut cur = r;
            while cur != 0 {
                let (p, _) = self.basis.parent(cur);
                if self.cache[p].is_some() {
                    break;
                }
                chain.push(p);
                cur = p;
            }
            for &idx in chain.iter().rev() {
                let value = if idx == 0 {
                    let mut one = vec![0.0; self.basis.len()];
                    one[0] = 1.0;
                    one
                } else {
                    let (p, b) = self.basis.parent(idx);
                    let prev = self.cache[p].as_deref().expect("parent computed first");
                    if p == 0 {
                        self.factors[b].to_vec()
                    } else {
                        let mut out = vec![0.0; self.basis.len()];
                        self.basis.mul_acc(prev, self.factors[b], &mut out);
                        out
                    }
                };
                self.cache[idx] = Some(value);
            }
        }
        self.cache[r].as_deref().unwrap()
    }
}

/// `prod_b H_b^{e_b(r)}` truncated at the common order of `h`.
pub fn power_products(h: &[TruncatedPoly], r: usize) -> Result<TruncatedPoly, PolyError> {
    let first = h.first().ok_or(PolyError::NoVariables)?;
    for p in h {
        first.check_shape(p)?;
    }
    if h.len() != first.num_vars() {
        return Err(PolyError::WrongArity { expected: first.num_vars(), got: h.len() });
    }
    let basis = Arc::clone(first.basis());
    if r >= basis.len() {
        return Err(PolyError::IndexOutOfRange { index: r, len: basis.len() });
    }
    let mut table = PowerTable::new(&basis, h.iter().map(|p| p.coeffs()).collect());
    let coeffs = table.get(r).to_vec();
    TruncatedPoly::from_coeffs(&basis, coeffs)
}

/// A truncated Taylor map: one polynomial per output component, acting on
/// deviations from `expansion_point` and producing deviations from
/// `design_image` (the image of the expansion point itself).
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMap {
    pub components: Vec<TruncatedPoly>,
    pub expansion_point: Vec<f64>,
    pub design_image: Vec<f64>,
    /// Length of the integration interval, in the system's independent variable.
    pub duration: f64,
    pub steps: usize,
}

impl PolyMap {
    pub fn identity(basis: &Arc<Basis>, expansion_point: Vec<f64>) -> Self {
        let components = (0..basis.num_vars()).map(|a| TruncatedPoly::variable(basis, a)).collect();
        PolyMap {
            components,
            design_image: expansion_point.clone(),
            expansion_point,
            duration: 0.0,
            steps: 0,
        }
    }

    pub fn basis(&self) -> &Arc<Basis> {
        self.components[0].basis()
    }

    pub fn num_vars(&self) -> usize {
        self.basis().num_vars()
    }

    pub fn max_degree(&self) -> usize {
        self.basis().max_degree()
    }

    /// Applies the map to a deviation vector; monomial values are shared by
    /// all components.
    pub fn eval(&self, zeta: &[f64]) -> Vec<f64> {
        let basis = self.basis();
        let mut vals = vec![0.0; basis.len()];
        basis.monomial_values(zeta, &mut vals);
        self.components.iter().map(|c| c.eval_with(&vals)).collect()
    }

    /// `m x m` matrix of degree-one coefficients, row `a` = component `a`.
    pub fn linear_part(&self) -> Vec<Vec<f64>> {
        let m = self.num_vars();
        self.components.iter().map(|c| c.coeffs()[1..=m].to_vec()).collect()
    }
}
