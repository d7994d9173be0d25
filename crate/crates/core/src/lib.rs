//! Traveling waves of a three-species competition system with a
//! spatio-temporal delay, solved in cooperative coordinates by monotone
//! iteration between explicit upper and lower solutions.

pub mod asymptotics;
pub mod bvp;
pub mod cli;
pub mod error;
pub mod model;
pub mod pde;
pub mod scalar_waves;
pub mod system_waves;

pub use bvp::{Grid, Profile};
pub use error::{Error, Result};
pub use model::{classify_regime, rates, ModelParams, Regime, RegimeVariant};
pub use system_waves::{IterationConfig, PairOptions, WaveSolution};
