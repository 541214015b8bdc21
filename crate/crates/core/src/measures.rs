//! Matrix measures (logarithmic norms), induced norms and singular values,
//! plus the block-matrix bounds used to lift per-agent estimates to a
//! max-separable metric.
//!
//! The stacked metric is fixed throughout the crate: the Euclidean norm on
//! every agent block, combined with the max-norm across agents,
//! `|z|_G = max_i |z_i|_2`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure_finite, Error, Result};

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() == 0 || a.nrows() != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a.iter().copied(), "matrix")
}

/// Measure induced by the Euclidean norm: the largest eigenvalue of the
/// symmetric part `(A + A^T) / 2`.
pub fn mu2(a: &DMatrix<f64>) -> Result<f64> {
    check_square(a)?;
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Measure induced by the max-norm: `max_i (a_ii + sum_{j != i} |a_ij|)`.
pub fn mu_inf(a: &DMatrix<f64>) -> Result<f64> {
    check_square(a)?;
    Ok(a.row_iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| if i == j { v } else { v.abs() })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    ensure_finite(a.iter().copied(), "matrix")?;
    Ok(a.clone().singular_values().iter().copied().collect())
}

/// Largest singular value.
pub fn sigma_max(a: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(a)?.into_iter().fold(0.0, f64::max))
}

/// Smallest singular value (of the `min(rows, cols)` returned by the SVD).
pub fn sigma_min(a: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(a)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// Spectral norm, identical to [`sigma_max`].
pub fn norm2(a: &DMatrix<f64>) -> Result<f64> {
    sigma_max(a)
}

/// Max-row-sum norm induced by `|.|_inf`.
pub fn norm_inf(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    ensure_finite(a.iter().copied(), "matrix")?;
    Ok(a.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

/// `max_i |z_i|_2` for a stacked vector partitioned by `block_dims`.
pub fn max_separable_norm(z: &[f64], block_dims: &[usize]) -> f64 {
    let mut offset = 0;
    let mut best: f64 = 0.0;
    for &d in block_dims {
        let block = &z[offset..offset + d];
        best = best.max(block.iter().map(|v| v * v).sum::<f64>().sqrt());
        offset += d;
    }
    best
}

/// A square matrix partitioned into square diagonal blocks.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    matrix: DMatrix<f64>,
    block_dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockMatrix {
    pub fn new(matrix: DMatrix<f64>, block_dims: Vec<usize>) -> Result<Self> {
        check_square(&matrix)?;
        if block_dims.is_empty() || block_dims.contains(&0) {
            return Err(Error::DimensionMismatch("block dimensions must be positive".into()));
        }
        let total: usize = block_dims.iter().sum();
        if total != matrix.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "blocks sum to {total}, matrix has dimension {}",
                matrix.nrows()
            )));
        }
        let offsets = block_dims
            .iter()
            .scan(0, |acc, &d| {
                let start = *acc;
                *acc += d;
                Some(start)
            })
            .collect();
        Ok(Self { matrix, block_dims, offsets })
    }

    /// Assembles a matrix from an `N x N` grid of blocks.
    pub fn from_blocks(blocks: Vec<Vec<DMatrix<f64>>>) -> Result<Self> {
        let n = blocks.len();
        if n == 0 || blocks.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch("block grid must be square and non-empty".into()));
        }
        let dims: Vec<usize> = (0..n).map(|i| blocks[i][i].nrows()).collect();
        let total: usize = dims.iter().sum();
        let mut matrix = DMatrix::zeros(total, total);
        let mut row_off = 0;
        for (i, row) in blocks.iter().enumerate() {
            let mut col_off = 0;
            for (j, block) in row.iter().enumerate() {
                if block.nrows() != dims[i] || block.ncols() != dims[j] {
                    return Err(Error::DimensionMismatch(format!(
                        "block ({i},{j}) is {}x{}, expected {}x{}",
                        block.nrows(),
                        block.ncols(),
                        dims[i],
                        dims[j]
                    )));
                }
                matrix.view_mut((row_off, col_off), (dims[i], dims[j])).copy_from(block);
                col_off += dims[j];
            }
            row_off += dims[i];
        }
        Self::new(matrix, dims)
    }

    pub fn num_blocks(&self) -> usize {
        self.block_dims.len()
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.matrix
            .view((self.offsets[i], self.offsets[j]), (self.block_dims[i], self.block_dims[j]))
            .into_owned()
    }
}

/// Upper bound on the measure of `A` in the max-separable metric:
/// `max_i { mu2(A_ii) + sum_{j != i} ||A_ij||_2 }`.
pub fn lemma1_measure_bound(a: &BlockMatrix) -> Result<f64> {
    let n = a.num_blocks();
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        let mut row = mu2(&a.block(i, i))?;
        for j in (0..n).filter(|&j| j != i) {
            row += norm2(&a.block(i, j))?;
        }
        best = best.max(row);
    }
    Ok(best)
}

/// Upper bound on the induced norm in the max-separable metric:
/// `max_i sum_j ||H_ij||_2`.
pub fn lemma1_norm_bound(h: &BlockMatrix) -> Result<f64> {
    let n = h.num_blocks();
    let mut best: f64 = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += norm2(&h.block(i, j))?;
        }
        best = best.max(row);
    }
    Ok(best)
}
