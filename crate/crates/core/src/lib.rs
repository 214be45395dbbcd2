//! Diffusion-jump graph learning.
//!
//! A trainable diffusion pump learns a low-energy embedding `U = f(A)` of the
//! graph whose row distances approximate asymptotic diffusion distances. The
//! distance ranks define a bank of sparse structural filters ("jumps") which
//! feed parallel GNN branches combined by learned convex attention.
//!
//! The crate also carries the exact oracles (spectra, commute times, escape
//! probabilities, structural heterophily), closed-form label propagation
//! baselines and a stochastic block model harness.
//!
//! Pure numeric kernels are generic over [`Scalar`]; the training stack runs
//! on `f64`.

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod error;
pub mod graph;
pub mod io;
pub mod jump;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pump;
pub mod scalar;
pub mod sbm;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::{FeatureMatrix, Graph, LabelVector, SplitMasks};
pub use scalar::Scalar;

/// Dense matrix in the default precision.
pub type Mat = ndarray::Array2<f64>;
/// Dense matrix in single precision.
pub type Mat32 = ndarray::Array2<f32>;
pub type Vector = ndarray::Array1<f64>;

pub type EigenSystem64 = linalg::EigenSystem<f64>;
pub type EigenSystem32 = linalg::EigenSystem<f32>;
pub type SpectralData64 = spectral::SpectralData<f64>;
pub type PumpParams64 = pump::PumpParams<f64>;
pub type FiedlerEnvironment64 = pump::FiedlerEnvironment<f64>;
pub type DistanceMatrix64 = pump::DistanceMatrix<f64>;
pub type FilterBank64 = jump::FilterBank<f64>;

