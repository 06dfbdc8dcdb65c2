//! Symmetric skyline (variable-band) storage with an in-place Cholesky
//! factorization.
//!
//! Row `i` stores the lower-triangular entries `first[i]..=i` contiguously, so
//! the inner products of the factorization run over dense slices.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FactorError {
    #[error("matrix is not positive definite: pivot {pivot:.3e} at row {row}")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("non-finite entry encountered at row {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    n: usize,
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
    factored: bool,
}

impl SkylineMatrix {
    /// Build the profile from the dof lists of every element. Each element's
    /// dofs are mutually coupled.
    pub fn from_element_dofs<'a, I>(n: usize, elements: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let mut first: Vec<usize> = (0..n).collect();
        for dofs in elements {
            let lo = dofs.iter().copied().min().unwrap_or(0);
            for &d in dofs {
                if lo < first[d] {
                    first[d] = lo;
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            offset.push(acc);
            acc += i - f + 1;
        }
        offset.push(acc);
        Self { n, first, offset, values: vec![0.0; acc], factored: false }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.factored = false;
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> Option<usize> {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            None
        } else {
            Some(self.offset[r] + c - self.first[r])
        }
    }

    /// Add `v` to entry `(i, j)` of the symmetric matrix. Only one triangle
    /// should be assembled; callers pass `i >= j`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j).expect("entry outside assembled profile");
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.index(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Replace row and column `i` with the identity.
    pub fn set_identity_row(&mut self, i: usize) {
        let f = self.first[i];
        let o = self.offset[i];
        for c in f..i {
            self.values[o + c - f] = 0.0;
        }
        self.values[o + i - f] = 1.0;
        for r in i + 1..self.n {
            if self.first[r] <= i {
                let k = self.offset[r] + i - self.first[r];
                self.values[k] = 0.0;
            }
        }
    }

    /// `y = A x` using the unfactored matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored, "matrix already factored");
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let f = self.first[i];
            let row = &self.values[self.offset[i]..self.offset[i + 1]];
            let mut acc = 0.0;
            for (k, &a) in row.iter().enumerate() {
                let j = f + k;
                acc += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
            y[i] += acc;
        }
        y
    }

    /// In-place Cholesky `A = L Lᵀ`.
    pub fn factor(&mut self) -> Result<(), FactorError> {
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..=i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let start = fi.max(fj);
                let mut s = self.values[oi + j - fi];
                let ri = &self.values[oi + start - fi..oi + j - fi];
                let rj = &self.values[oj + start - fj..oj + j - fj];
                s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                if j < i {
                    let djj = self.values[oj + j - fj];
                    self.values[oi + j - fi] = s / djj;
                } else {
                    if !s.is_finite() {
                        return Err(FactorError::NonFinite(i));
                    }
                    if s <= 0.0 {
                        return Err(FactorError::NotPositiveDefinite { row: i, pivot: s });
                    }
                    self.values[oi + i - fi] = s.sqrt();
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve with the factored matrix, overwriting `b` with the solution.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert!(self.factored, "factor() must be called before solving");
        // L y = b
        for i in 0..self.n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let row = &self.values[oi..oi + i - fi];
            let s: f64 = row.iter().zip(&b[fi..i]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / self.values[oi + i - fi];
        }
        // Lᵀ x = y
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            b[i] /= self.values[oi + i - fi];
            let xi = b[i];
            for (k, a) in self.values[oi..oi + i - fi].iter().enumerate() {
                b[fi + k] -= a * xi;
            }
        }
    }
}
