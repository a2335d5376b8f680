//! Command-line front end: dataset generation, experiment runs, reports and
//! self-checks.

pub mod check;
pub mod commands;
pub mod config;
pub mod generate;
pub mod report;
pub mod run;
pub mod solutions;
