//! Kronecker-factored curvature approximations for fully connected layers:
//! Shampoo, its squared variant, K-FAC and the optimal Kronecker product,
//! together with the models, data loaders and probes used to compare them.

pub mod curvature;
pub mod data;
pub mod error;
pub mod kronalg;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod seed;

pub use error::{Error, Result};
pub use kronalg::{Damping, KronFactors, Provenance};
pub use linalg::DenseMatrix;
