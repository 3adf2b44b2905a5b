//! Scenario configuration, runs, sweeps, plot data and the acceptance suite
//! behind the `gradvi` command.

pub mod config;
pub mod plot;
pub mod run;
pub mod scenarios;
pub mod verify;
