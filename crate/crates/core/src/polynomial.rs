//! Dense multivariate polynomials over a graded-lexicographic monomial basis.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// All exponent vectors of total degree `<= degree` in `dim` variables,
/// ordered by total degree, then lexicographically descending (so
/// `x1^2 > x1 x2 > x2^2` within degree 2).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialBasis {
    dim: usize,
    degree: u32,
    exponents: Vec<Vec<u32>>,
}

impl MonomialBasis {
    pub fn new(dim: usize, degree: u32) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree {
            let mut current = vec![0u32; dim];
            push_compositions(&mut exponents, &mut current, 0, total);
        }
        Self {
            dim,
            degree,
            exponents,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Index range of the top-degree block.
    pub fn top_block(&self) -> std::ops::Range<usize> {
        let start = self
            .exponents
            .iter()
            .position(|e| e.iter().sum::<u32>() == self.degree)
            .unwrap_or(self.exponents.len());
        start..self.exponents.len()
    }

    pub fn evaluate_monomials(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.exponents.iter().map(|e| {
            e.iter()
                .zip(x)
                .fold(1.0, |acc, (p, xi)| acc * xi.powi(*p as i32))
        }));
    }
}

fn push_compositions(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, idx: usize, remaining: u32) {
    if current.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if idx == current.len() - 1 {
        current[idx] = remaining;
        out.push(current.clone());
        current[idx] = 0;
        return;
    }
    for p in (0..=remaining).rev() {
        current[idx] = p;
        push_compositions(out, current, idx + 1, remaining - p);
    }
    current[idx] = 0;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    basis: Arc<MonomialBasis>,
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(basis: Arc<MonomialBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                actual: coeffs.len(),
            });
        }
        Ok(Self { basis, coeffs })
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> u32 {
        self.basis.degree()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval_coeffs(&self.basis, &self.coeffs, x)
    }

    /// Euclidean norm of the top-degree coefficient block.
    pub fn coeff_top_norm(&self) -> f64 {
        top_norm(&self.basis, &self.coeffs)
    }

    /// Rescale so that the top-degree coefficient norm is 1.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.coeff_top_norm();
        if n == 0.0 {
            return Err(invalid("polynomial", "top-degree block is zero"));
        }
        Ok(Self {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().map(|c| c / n).collect(),
        })
    }
}

pub(crate) fn eval_coeffs(basis: &MonomialBasis, coeffs: &[f64], x: &[f64]) -> f64 {
    basis
        .exponents
        .iter()
        .zip(coeffs)
        .filter(|(_, c)| **c != 0.0)
        .map(|(e, c)| {
            c * e
                .iter()
                .zip(x)
                .fold(1.0, |acc, (p, xi)| acc * xi.powi(*p as i32))
        })
        .sum()
}

pub(crate) fn top_norm(basis: &MonomialBasis, coeffs: &[f64]) -> f64 {
    coeffs[basis.top_block()]
        .iter()
        .map(|c| c * c)
        .sum::<f64>()
        .sqrt()
}
