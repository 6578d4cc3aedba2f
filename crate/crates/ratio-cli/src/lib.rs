//! Config-driven experiment runner: each subcommand reads one JSON config,
//! derives all randomness from its root seed, and leaves a manifest in the
//! run directory that records artifacts and can re-drive later stages.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
