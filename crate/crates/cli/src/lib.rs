//! Command line and HTTP front ends.

pub mod api;
pub mod commands;
pub mod jobs;
