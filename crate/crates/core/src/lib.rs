//! Lyapunov spectra of linear cocycles over the Lorenz flow, its Poincaré
//! return map, and the suspension picture that links them.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cocycles;
pub mod error;
pub mod experiments;
pub mod flows;
pub mod linalg;
pub mod ode;
pub mod real;
pub mod rng;
pub mod sections;
pub mod spectra;
pub mod stats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Error, Result};
pub use real::Real;

pub use cocycles::{CocycleGenerator, CocycleKind, Scalars};
pub use flows::VectorField;
pub use linalg::Matrix;
pub use ode::IntegratorConfig;
pub use sections::CrossSection;
pub use spectra::LyapunovSpectrum;

pub type Mat64 = linalg::Matrix<f64>;
pub type Field64 = flows::VectorField<f64>;
pub type Section64 = sections::CrossSection<f64>;
pub type Generator64 = cocycles::CocycleGenerator<f64>;
pub type Spectrum64 = spectra::LyapunovSpectrum<f64>;
pub type Config64 = ode::IntegratorConfig<f64>;
pub type ReturnSample64 = sections::ReturnSample<f64>;
pub type Trajectory64 = flows::Trajectory<f64>;
