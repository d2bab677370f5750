//! Traffic-aware lap strategy toolkit for hybrid race cars.
//!
//! The crate is organised along the processing chain:
//!
//! * [`ingest`] parses sector-time tables and removes spurious laps with a
//!   per-sector 1-D DBSCAN.
//! * [`stats`] rebuilds competitor positions from sector times, extracts
//!   free sector-time distributions and class-pair overtaking probabilities.
//! * [`vehicle`] is the longitudinal model of the ego car (friction circle,
//!   four powertrain modes, spatial integration).
//! * [`miqcp`] builds, verifies and exports the convexified lap-time problem.
//! * [`ga_opt`] searches per-region energy budgets with a genetic algorithm.
//! * [`mc_sim`] produces Monte Carlo traffic with an influence/reaction model.
//! * [`sdp`] scores strategies on probability/cost decision trees.
//! * [`pipeline`] and [`synth`] wire the stages together for the CLI.

pub mod error;
pub mod ga_opt;
pub mod ingest;
pub mod mc_sim;
pub mod miqcp;
pub mod pipeline;
pub mod sdp;
pub mod stats;
pub mod synth;
pub mod table;
pub mod vehicle;

pub use error::{Error, Result};
