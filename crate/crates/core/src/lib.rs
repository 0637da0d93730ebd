//! Stochastic block model with ambient noise for weighted multilayer networks.
//!
//! Nodes fall into Q blocks. Edges inside a signal block follow that block's
//! equicorrelated K-variate Gaussian; edges between blocks, and edges inside
//! the single noise block, follow one shared diagonal "ambient" Gaussian.
//! [`vem::fit`] estimates memberships, parameters and which block is noise.

pub mod error;
pub mod eval;
pub mod exec;
pub mod init;
pub mod io;
pub mod model;
pub mod network;
pub mod rng;
pub mod simulate;
pub mod svi;
pub mod transform;
pub mod vem;

pub use error::{Error, Result};
pub use exec::Exec;
pub use model::{BlockParams, ModelParams, NoiseParams, VariationalState};
pub use network::MultilayerNetwork;
pub use svi::SviConfig;
pub use vem::{fit, fit_from_state, FitConfig, FitResult};
