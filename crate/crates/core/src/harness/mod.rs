//! Experiment orchestration: configuration, fitting, grid search, the
//! retrospective and prospective protocols, and simulation.

pub mod config;
pub mod experiments;
pub mod fit;
pub mod grid;
pub mod simulate;

pub use config::ExperimentConfig;
pub use experiments::{run_prospective, run_retrospective};
pub use fit::{fit_series, read_fit, score_fit, write_fit, FitRecord};
pub use grid::{grid_search, refit_and_test, GridValue};
pub use simulate::{simulate, SimLatent, SimulationConfig};
