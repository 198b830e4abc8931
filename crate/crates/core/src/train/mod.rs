//! Optimization: configuration, Adam, density control and the training loop.

pub mod adam;
pub mod config;
pub mod density;
pub mod state;
pub mod trainer;

pub use config::TrainConfig;
pub use state::TrainState;
pub use trainer::{evaluate, render_view, run, train, TrainOutput, TrainReport, ViewMetrics};
