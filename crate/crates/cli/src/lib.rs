//! Experiment driver for the `riemalm` solver: problem files, experiment
//! runners, CSV/text artifacts and the command-line front end.

pub mod commands;
pub mod config;
pub mod experiments;
pub mod output;
