//! Sparse multivariate polynomials over `f64`.
//!
//! Terms are kept in a `BTreeMap` keyed by [`MultiIndex`], whose ordering is
//! graded lexicographic, so iteration visits `1, x1, x2, x1^2, x1 x2, ...`.
//! Exact zero coefficients are never stored.

mod basis;

pub use basis::{enumerate_basis, MonomialBasis, MAX_BASIS_SIZE};

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

use crate::model::ModelSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("variable count mismatch: {0} vs {1}")]
    NvarsMismatch(usize, usize),
    #[error("monomial basis with {size} elements exceeds the limit of {limit}")]
    BasisTooLarge { size: u128, limit: usize },
    #[error("integrality polynomial for {0} values is unsupported (at most 3)")]
    UnsupportedIntegrality(u32),
    #[error("model is not a polynomial kernel")]
    NotPolynomialKernel,
}

/// Exponent vector of a monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self(exponents)
    }

    pub fn zero(nvars: usize) -> Self {
        Self(vec![0; nvars])
    }

    pub fn unit(nvars: usize, var: usize) -> Self {
        let mut e = vec![0; nvars];
        e[var] = 1;
        Self(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self - other` when every component stays non-negative.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &v)| v.powi(e as i32))
            .product()
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// How one variable of a polynomial is rewritten by [`Polynomial::substitute`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarMap {
    Constant(f64),
    /// `offset + scale * u_var` in the target variables.
    Affine {
        var: usize,
        offset: f64,
        scale: f64,
    },
}

impl VarMap {
    pub fn identity(var: usize) -> Self {
        VarMap::Affine {
            var,
            offset: 0.0,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(MultiIndex::zero(nvars), c);
        p
    }

    pub fn variable(nvars: usize, var: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(MultiIndex::unit(nvars, var), 1.0);
        p
    }

    /// `c0 + sum_i coeffs[i] * x_i`.
    pub fn affine(c0: f64, coeffs: &[f64]) -> Self {
        let nvars = coeffs.len();
        let mut p = Self::constant(nvars, c0);
        for (i, &c) in coeffs.iter().enumerate() {
            p.add_term(MultiIndex::unit(nvars, i), c);
        }
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        let mut p = Self::zero(nvars);
        for (alpha, c) in terms {
            assert_eq!(alpha.nvars(), nvars, "multi-index length must equal nvars");
            p.add_term(alpha, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(a, &c)| (a, c))
    }

    pub fn coefficient(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient(&MultiIndex::zero(self.nvars))
    }

    /// Degree of the polynomial; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.terms.keys().all(MultiIndex::is_zero)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.entry(alpha) {
            Entry::Occupied(mut slot) => {
                *slot.get_mut() += c;
                if *slot.get() == 0.0 {
                    slot.remove();
                }
            }
            Entry::Vacant(slot) => {
                slot.insert(c);
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        self.terms.iter().map(|(a, c)| c * a.eval(x)).sum()
    }

    pub fn checked_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.same_nvars(other)?;
        let mut out = self.clone();
        for (a, &c) in &other.terms {
            out.add_term(a.clone(), c);
        }
        Ok(out)
    }

    pub fn checked_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.same_nvars(other)?;
        let mut out = self.clone();
        for (a, &c) in &other.terms {
            out.add_term(a.clone(), -c);
        }
        Ok(out)
    }

    pub fn checked_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.same_nvars(other)?;
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                *acc.entry(a.add(b)).or_insert(0.0) += ca * cb;
            }
        }
        acc.retain(|_, c| *c != 0.0);
        Ok(Polynomial {
            nvars: self.nvars,
            terms: acc,
        })
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(self.nvars);
        }
        let mut terms = self.terms.clone();
        for c in terms.values_mut() {
            *c *= s;
        }
        terms.retain(|_, c| *c != 0.0);
        Polynomial {
            nvars: self.nvars,
            terms,
        }
    }

    /// `self^k` by binary exponentiation.
    pub fn pow(&self, k: u32) -> Polynomial {
        let mut result = Polynomial::constant(self.nvars, 1.0);
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Rewrites every variable according to `map` into a polynomial in
    /// `new_nvars` variables.
    pub fn substitute(&self, map: &[VarMap], new_nvars: usize) -> Polynomial {
        assert_eq!(
            map.len(),
            self.nvars,
            "substitution map must cover every variable"
        );
        let images: Vec<Polynomial> = map
            .iter()
            .map(|m| match *m {
                VarMap::Constant(c) => Polynomial::constant(new_nvars, c),
                VarMap::Affine { var, offset, scale } => {
                    let mut p = Polynomial::constant(new_nvars, offset);
                    p.add_term(MultiIndex::unit(new_nvars, var), scale);
                    p
                }
            })
            .collect();
        let mut power_cache: Vec<Vec<Polynomial>> = images
            .iter()
            .map(|p| vec![Polynomial::constant(new_nvars, 1.0), p.clone()])
            .collect();
        let mut out = Polynomial::zero(new_nvars);
        for (alpha, &c) in &self.terms {
            let mut term = Polynomial::constant(new_nvars, c);
            for (i, &e) in alpha.exponents().iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let cache = &mut power_cache[i];
                while cache.len() <= e as usize {
                    let next = &cache[cache.len() - 1] * &images[i];
                    cache.push(next);
                }
                term = &term * &cache[e as usize];
            }
            for (a, v) in term.terms {
                out.add_term(a, v);
            }
        }
        out
    }

    /// Embeds into a polynomial over more variables, variable `i` becoming
    /// variable `offset + i`.
    pub fn embed(&self, new_nvars: usize, offset: usize) -> Polynomial {
        assert!(offset + self.nvars <= new_nvars);
        let terms = self.terms.iter().map(|(a, &c)| {
            let mut e = vec![0; new_nvars];
            e[offset..offset + self.nvars].copy_from_slice(a.exponents());
            (MultiIndex(e), c)
        });
        Polynomial::from_terms(new_nvars, terms)
    }

    fn same_nvars(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.nvars == other.nvars {
            Ok(())
        } else {
            Err(PolyError::NvarsMismatch(self.nvars, other.nvars))
        }
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.checked_add(rhs)
            .expect("nvars mismatch in polynomial addition")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.checked_sub(rhs)
            .expect("nvars mismatch in polynomial subtraction")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.checked_mul(rhs)
            .expect("nvars mismatch in polynomial multiplication")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (alpha, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (i, &e) in alpha.exponents().iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{e}", i + 1)?,
                }
            }
        }
        Ok(())
    }
}

/// Expands `f(x) = sum_i w_i y_i (a x_i^T x + b)^d` into an explicit
/// polynomial in the `n` input variables.
pub fn expand_poly_kernel(model: &ModelSpec) -> Result<Polynomial, PolyError> {
    let ModelSpec::PolyKernel {
        scale,
        offset,
        degree,
        entries,
    } = model
    else {
        return Err(PolyError::NotPolynomialKernel);
    };
    let n = model.n_features().unwrap_or(0);
    let mut out = Polynomial::zero(n);
    for e in entries {
        let coeffs: Vec<f64> = e.vector.iter().map(|v| scale * v).collect();
        let inner = Polynomial::affine(*offset, &coeffs);
        let term = inner.pow(*degree).scale(e.signed_weight());
        for (a, c) in term.terms {
            out.add_term(a, c);
        }
    }
    Ok(out)
}

/// `g(x, x') = p(x) - p(x')` over `2n` variables: `x` first, then `x'`.
pub fn build_gap_polynomial(p: &Polynomial) -> Polynomial {
    let n = p.nvars();
    &p.embed(2 * n, 0) - &p.embed(2 * n, n)
}

/// `x_var (x_var - 1) ... (x_var - k)`, vanishing exactly on `{0, ..., k}`.
pub fn integrality_polynomial(nvars: usize, var: usize, k: u32) -> Result<Polynomial, PolyError> {
    integer_range_polynomial(nvars, var, 0.0, k)
}

/// `prod_{j=0..=k} (x_var - lower - j)`, vanishing exactly on
/// `{lower, ..., lower + k}`. Only `k <= 2` is supported.
pub fn integer_range_polynomial(
    nvars: usize,
    var: usize,
    lower: f64,
    k: u32,
) -> Result<Polynomial, PolyError> {
    if k > 2 {
        return Err(PolyError::UnsupportedIntegrality(k + 1));
    }
    let mut p = Polynomial::constant(nvars, 1.0);
    for j in 0..=k {
        let mut factor = Polynomial::variable(nvars, var);
        factor.add_term(MultiIndex::zero(nvars), -(lower + f64::from(j)));
        p = &p * &factor;
    }
    Ok(p)
}
