//! Simulation and parameter estimation for rank-based stock market models.
//!
//! First-order models assign drift and volatility by rank; second-order
//! (hybrid Atlas) models add a drift attached to each name. The crate
//! simulates both, estimates first-order statistics from observed weights,
//! computes flows and expected-rank maps, and recovers second-order drifts by
//! a matrix route and a recursive flow route.

pub mod error;
pub mod first_order;
pub mod flow;
pub mod io;
pub mod presets;
pub mod ranker;
pub mod second_order;
pub mod simulator;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    compute_weights, FirstOrderParams, MarketHistory, OccupationMatrix, SecondOrderParams, ValidityReport,
    WeightHistory,
};
