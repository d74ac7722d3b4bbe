//! Dense row-major matrices and symmetric eigensolvers.

mod eigen;
mod matrix;

pub use eigen::{sym_eig, sym_eig_jacobi, sym_eig_tridiagonal, EigenSolver, SymEigResult};
pub use matrix::{matmul, Matrix};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("buffer of length {len} cannot form a {rows}x{cols} matrix")]
    Length { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |s_ij - s_ji| = {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },
    #[error("eigensolver did not converge after {iterations} iterations (off-diagonal residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}
