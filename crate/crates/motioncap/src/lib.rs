//! Files, command line and thread-pool execution around `motioncap-core`.

pub mod cli;
pub mod config;
pub mod exec;
pub mod io;
pub mod pipeline;
