//! Numerical engine for interactive clustering analysis.
//!
//! The crate loads tabular data, filters it with a small expression
//! language, fits k-means / agglomerative clusterings and linear 2-D
//! projections (PCA, classical MDS), and implements the spatial
//! interactions built on a fitted linear projection:
//!
//! * forward projection: `Δy = Δx E`
//! * prolines: forward-projection paths sweeping one feature over `x_i ± kσ_i`
//! * backward projection: the minimal-norm inverse `Δx = Δy Eᵀ`, or a
//!   constrained least-squares QP with equalities and box bounds.
//!
//! Every fit function is pure over an immutable [`data::TableView`] snapshot.

pub mod cancel;
pub mod cluster;
pub mod data;
pub mod dimred;
pub mod distance;
pub mod error;
pub mod filter;
pub mod interact;
pub mod qp;
pub mod stats;

pub use cancel::CancelToken;
pub use error::{Error, Result};
