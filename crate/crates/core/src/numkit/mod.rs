//! Sparse storage, sparse LU, small dense matrices and the dense matrix exponential.

mod dense;
mod expm;
mod lu;
mod sparse;
pub mod vecops;

pub use dense::{DenseLu, DenseMatrix};
pub use expm::{dense_expm, dense_expm_capped, expm_and_phi1_first_column, DEFAULT_EXPM_CAP};
pub use lu::{
    factorization_count, lu_factorize, lu_factorize_ordered, lu_factorize_with, lu_solve, minimum_degree_order,
    substitution_pairs, ColumnOrdering, LuFactors, LuOptions, SINGULAR_PIVOT_RELATIVE,
};
pub use sparse::SparseMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("matrix dimensions must be at least 1x1")]
    EmptyMatrix,
    #[error("entry ({row}, {col}) outside {nrows}x{ncols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("malformed compressed-column arrays")]
    MalformedCsc,
    #[error("square matrix required, got {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("structurally singular: no pivot candidate for column {column}")]
    StructurallySingular { column: usize },
    #[error("numerically singular at column {column}: pivot {pivot:e} below {threshold:e}")]
    NumericallySingular {
        column: usize,
        pivot: f64,
        threshold: f64,
    },
    #[error("dense matrix of order {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("non-finite matrix entries")]
    NonFinite,
}

impl NumError {
    pub fn is_singular(&self) -> bool {
        matches!(
            self,
            NumError::StructurallySingular { .. } | NumError::NumericallySingular { .. }
        )
    }
}
