//! Maximum-entropy inverse correlated equilibrium for linearly parameterized
//! normal-form games.

pub mod baselines;
pub mod cli;
pub mod behavior;
pub mod equilibria;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod game;
pub mod io;
pub mod oracle;
pub mod routing;
pub mod solver;

pub use error::{IceError, Result};
