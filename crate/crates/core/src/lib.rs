//! Numerics for trigonometric functionals of Gaussian fields: Wiener-chaos truncation,
//! exact Wick moments, Taylor-renormalized singular kernels, the smoothing-pairing
//! operator and the moment experiments built on them.

pub mod chaos;
pub mod clustering;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod field;
pub mod geometry;
pub mod isserlis;
pub mod kernel;
pub mod models;
pub mod nonlinearity;
pub mod operator;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use chaos::{ChaosTruncSpec, Trig, TwoPointFunctional};
pub use clustering::ClusterPartition;
pub use error::{Error, Result};
pub use field::{CovarianceSpec, FieldSample, SandwichReport, Spectrum};
pub use geometry::{Lattice, ScalingGeometry, TestFunction};
pub use kernel::RenormKernel;
pub use isserlis::{ClusterCoeffQuery, DMatrix, RatioReport};
