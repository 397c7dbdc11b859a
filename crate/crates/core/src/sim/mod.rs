//! Closed-loop simulation: integrator, scenarios, metrics and artifacts.

pub mod abc;
pub mod closed_loop;
pub mod config;
pub mod metrics;
pub mod ode;
pub mod order;
pub mod output;
pub mod run;
pub mod sweep;

pub use closed_loop::{loop_deriv, Controller, LoopSignals, LoopState, Setpoint};
pub use config::{preset, ScenarioConfig, PRESETS};
pub use metrics::{compute_metrics, Metrics};
pub use run::{integrate, integrate_with, RunOptions, RunOutput, Sample};
pub use sweep::{sweep_random_init, Dispersion, SweepReport};
