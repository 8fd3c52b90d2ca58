//! Affine matrix expressions `M(x) = M0 + Σ x_j M_j` used to assemble LMI blocks.

use std::ops::{Add, Neg, Sub};

use nalgebra::DMatrix;

use crate::program::{LmiBlock, Sense};

#[derive(Debug, Clone, PartialEq)]
pub struct AffineMatrix {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl AffineMatrix {
    pub fn constant(m: DMatrix<f64>, num_vars: usize) -> Self {
        let coeffs = vec![DMatrix::zeros(m.nrows(), m.ncols()); num_vars];
        Self { constant: m, coeffs }
    }

    pub fn zeros(rows: usize, cols: usize, num_vars: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols), num_vars)
    }

    /// `x_var · pattern`.
    pub fn variable(pattern: DMatrix<f64>, var: usize, num_vars: usize) -> Self {
        let mut out = Self::zeros(pattern.nrows(), pattern.ncols(), num_vars);
        out.coeffs[var] = pattern;
        out
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn num_vars(&self) -> usize {
        self.coeffs.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (c, &xj) in self.coeffs.iter().zip(x) {
            m += c * xj;
        }
        m
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Self {
        Self { constant: f(&self.constant), coeffs: self.coeffs.iter().map(f).collect() }
    }

    pub fn transpose(&self) -> Self {
        self.map(|m| m.transpose())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m * s)
    }

    /// `left · M(x)`.
    pub fn left_mul(&self, left: &DMatrix<f64>) -> Self {
        self.map(|m| left * m)
    }

    /// `M(x) · right`.
    pub fn right_mul(&self, right: &DMatrix<f64>) -> Self {
        self.map(|m| m * right)
    }

    /// Affine trace, returned as a 1×1 expression.
    pub fn trace(&self) -> Self {
        self.map(|m| DMatrix::from_element(1, 1, m.trace()))
    }

    /// Column `j` as an n×1 expression.
    pub fn column(&self, j: usize) -> Self {
        self.map(|m| m.columns(j, 1).into_owned())
    }

    /// Assembles a block matrix from rows of expressions.
    pub fn from_blocks(rows: &[Vec<AffineMatrix>]) -> Self {
        let num_vars = rows[0][0].num_vars();
        let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
        let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
        let total_r: usize = heights.iter().sum();
        let total_c: usize = widths.iter().sum();
        let assemble = |pick: &dyn Fn(&AffineMatrix) -> &DMatrix<f64>| {
            let mut out = DMatrix::zeros(total_r, total_c);
            let mut r0 = 0;
            for (row, &h) in rows.iter().zip(&heights) {
                let mut c0 = 0;
                for (block, &w) in row.iter().zip(&widths) {
                    assert_eq!((block.nrows(), block.ncols()), (h, w), "block shape mismatch");
                    out.view_mut((r0, c0), (h, w)).copy_from(pick(block));
                    c0 += w;
                }
                r0 += h;
            }
            out
        };
        let constant = assemble(&|b| &b.constant);
        let coeffs = (0..num_vars).map(|j| assemble(&|b| &b.coeffs[j])).collect();
        Self { constant, coeffs }
    }

    /// Block-diagonal stacking.
    pub fn block_diag(parts: &[AffineMatrix]) -> Self {
        let num_vars = parts[0].num_vars();
        let rows: Vec<Vec<AffineMatrix>> = parts
            .iter()
            .enumerate()
            .map(|(i, pi)| {
                parts
                    .iter()
                    .enumerate()
                    .map(
                        |(j, pj)| {
                            if i == j {
                                pi.clone()
                            } else {
                                AffineMatrix::zeros(pi.nrows(), pj.ncols(), num_vars)
                            }
                        },
                    )
                    .collect()
            })
            .collect();
        Self::from_blocks(&rows)
    }

    pub fn into_block(self, label: &str, sense: Sense, strict: bool) -> LmiBlock {
        LmiBlock { label: label.to_string(), constant: self.constant, coeffs: self.coeffs, sense, strict }
    }
}

impl Add for &AffineMatrix {
    type Output = AffineMatrix;
    fn add(self, rhs: &AffineMatrix) -> AffineMatrix {
        AffineMatrix {
            constant: &self.constant + &rhs.constant,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &AffineMatrix {
    type Output = AffineMatrix;
    fn sub(self, rhs: &AffineMatrix) -> AffineMatrix {
        self + &(-rhs)
    }
}

impl Neg for &AffineMatrix {
    type Output = AffineMatrix;
    fn neg(self) -> AffineMatrix {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_matches_manual_product() {
        let y = &AffineMatrix::variable(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), 0, 2)
            + &AffineMatrix::variable(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), 1, 2);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let expr = &y.left_mul(&a) + &y.left_mul(&a).transpose();
        let x = [0.5, -2.0];
        let yv = y.evaluate(&x);
        let direct = &a * &yv + (&a * &yv).transpose();
        assert!((expr.evaluate(&x) - direct).amax() < 1e-14);
    }

    #[test]
    fn block_diag_places_parts() {
        let a = AffineMatrix::variable(DMatrix::identity(1, 1), 0, 1);
        let b = AffineMatrix::constant(DMatrix::identity(2, 2) * 3.0, 1);
        let m = AffineMatrix::block_diag(&[a, b]).evaluate(&[7.0]);
        assert_eq!(m, DMatrix::from_row_slice(3, 3, &[7.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 3.0]));
    }
}
