//! Pipeline stages behind the `streetsafe` command.

pub mod config;
pub mod stages;
