//! Adaptive grid synchronization of a voltage source converter on a weak grid.
//!
//! The converter's dq frame is locked to the grid voltage without measuring
//! it: an observer reconstructs the grid voltage from filter measurements up to
//! three constant parameters, a least-squares estimator identifies them, and a
//! PLL driven by the estimate steers the frame. A PI current loop with
//! decoupling tracks the current reference.
//!
//! Module map:
//! - [`signals`]: rotations, Park transform, three-phase sources
//! - [`plant`]: LCL filter plus Thevenin grid in dq and phase coordinates
//! - [`observer`]: dynamic extension, regressor and filters
//! - [`estimator`]: least squares with forgetting, excitation monitor
//! - [`control`]: phase detectors, PLL, current loop
//! - [`equilibrium`]: assignable equilibria and power-flow references
//! - [`sim`]: integrator, scenarios, metrics, sweeps

pub mod control;
pub mod equilibrium;
pub mod error;
pub mod estimator;
pub mod observer;
pub mod plant;
pub mod signals;
pub mod sim;

pub use error::{Error, Result};
