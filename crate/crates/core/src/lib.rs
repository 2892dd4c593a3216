//! Modular multilevel converter models: a stationary-frame arm-averaged
//! reference and a twelve-state dqz model that is time invariant in steady
//! state, driven by a shared controller, with equilibrium, linearization and
//! cross-model comparison tools.

pub mod aam;
pub mod analysis;
pub mod cli;
pub mod control;
pub mod frames;
pub mod params;
pub mod sim;
pub mod ssti;
