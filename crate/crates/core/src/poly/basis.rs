use std::collections::HashMap;

use super::{MultiIndex, PolyError};

/// Upper limit on the number of monomials in any enumerated basis.
pub const MAX_BASIS_SIZE: usize = 1_000_000;

/// All monomials of degree `<= degree` in `nvars` variables, graded-lex ordered.
#[derive(Debug, Clone)]
pub struct MonomialBasis {
    nvars: usize,
    degree: u32,
    monomials: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
}

impl MonomialBasis {
    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monomials
    }

    pub fn get(&self, k: usize) -> &MultiIndex {
        &self.monomials[k]
    }

    pub fn index_of(&self, alpha: &MultiIndex) -> Option<usize> {
        self.position.get(alpha).copied()
    }

    /// `[x]_d` evaluated at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.monomials.iter().map(|m| m.eval(x)).collect()
    }
}

/// `binomial(n + d, d)`, saturating.
pub fn basis_size(n: usize, d: u32) -> u128 {
    let mut acc: u128 = 1;
    for k in 1..=u128::from(d) {
        acc = acc.saturating_mul(n as u128 + k) / k;
    }
    acc
}

pub fn enumerate_basis(nvars: usize, degree: u32) -> Result<MonomialBasis, PolyError> {
    let size = basis_size(nvars, degree);
    if size > MAX_BASIS_SIZE as u128 {
        return Err(PolyError::BasisTooLarge {
            size,
            limit: MAX_BASIS_SIZE,
        });
    }
    let mut monomials = Vec::with_capacity(size as usize);
    let mut current = vec![0u32; nvars];
    fill(&mut current, 0, degree, &mut monomials);
    monomials.sort();
    let position = monomials
        .iter()
        .enumerate()
        .map(|(k, m)| (m.clone(), k))
        .collect();
    Ok(MonomialBasis {
        nvars,
        degree,
        monomials,
        position,
    })
}

fn fill(current: &mut Vec<u32>, var: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if var == current.len() {
        out.push(MultiIndex::new(current.clone()));
        return;
    }
    for e in 0..=remaining {
        current[var] = e;
        fill(current, var + 1, remaining - e, out);
    }
    current[var] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exps(b: &MonomialBasis) -> Vec<Vec<u32>> {
        b.monomials()
            .iter()
            .map(|m| m.exponents().to_vec())
            .collect()
    }

    #[test]
    fn two_variables_degree_two() {
        let b = enumerate_basis(2, 2).unwrap();
        assert_eq!(b.len(), 6);
        assert_eq!(
            exps(&b),
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn univariate_and_linear() {
        let b = enumerate_basis(1, 3).unwrap();
        assert_eq!(exps(&b), vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(enumerate_basis(3, 1).unwrap().len(), 4);
        assert_eq!(enumerate_basis(4, 0).unwrap().len(), 1);
    }

    #[test]
    fn sizes_match_binomial() {
        for n in 1..=6 {
            for d in 0..=4 {
                let b = enumerate_basis(n, d).unwrap();
                assert_eq!(b.len() as u128, basis_size(n, d));
                for (k, m) in b.monomials().iter().enumerate() {
                    assert_eq!(b.index_of(m), Some(k));
                }
            }
        }
        assert_eq!(basis_size(6, 4), 210);
    }

    #[test]
    fn oversized_basis_rejected() {
        assert!(matches!(
            enumerate_basis(40, 8),
            Err(PolyError::BasisTooLarge { .. })
        ));
    }
}
