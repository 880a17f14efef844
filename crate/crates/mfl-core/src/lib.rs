//! Numerical laboratory for slow-fast systems driven by fractional Brownian
//! motion with Hurst parameter H > 1/2.
//!
//! The crate provides the building blocks and the experiments:
//!
//! - [`fbm`] — exact fBM generators (circulant embedding, Cholesky, Volterra)
//!   and path-regularity functionals,
//! - [`integrate`] — pathwise Young integration, Itô integration and a mixed
//!   Young-Itô Euler stepper with a formula verifier,
//! - [`fastproc`] — the fast Itô process on its own clock, its invariant
//!   measure and moment/Hölder diagnostics,
//! - [`cell`] — the Poisson (cell) problem for the corrector and all
//!   effective coefficients,
//! - [`multiscale`] — coupled slow-fast simulation and the deviation process,
//! - [`limit`] — the limiting fluctuation dynamics,
//! - [`stats`] — ensembles, Kolmogorov-Smirnov / rate-fit verdicts and the
//!   weak-convergence experiments.
//!
//! Core numerics are generic over the floating-point type through [`Scalar`]
//! (and [`SimScalar`] where sampling or FFTs are involved); the concrete
//! aliases below fix `f64` for the experiment layer.

pub mod bench;
pub mod cell;
pub mod error;
pub mod fastproc;
pub mod fbm;
pub mod grid;
pub mod integrate;
pub mod io;
pub mod limit;
pub mod linalg;
pub mod multiscale;
pub mod scalar;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
pub use scalar::{Scalar, SimScalar};
pub use stream::StreamKey;

/// Scalar type used by the experiment and report layer.
pub type Real = f64;

/// Concrete aliases for the main data types at `Real` precision.
pub type TimeGrid = grid::TimeGrid<Real>;
pub type Path = grid::Path<Real>;
pub type Hurst = fbm::Hurst<Real>;
pub type FbmPath = fbm::FbmPath<Real>;
pub type DriverPair = fbm::DriverPair<Real>;
pub type Mat = linalg::Mat<Real>;
