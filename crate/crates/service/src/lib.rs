//! Practice service and command-line tools around the `nativeness` models.

pub mod api;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod sessions;
