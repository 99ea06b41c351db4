//! Dense linear algebra carriers and factorizations.

mod eigen;
mod matrix;
mod svd;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use matrix::{axpy, dot, norm, DenseMatrix};
pub use svd::{svd, SvdRank, SvdResult};
