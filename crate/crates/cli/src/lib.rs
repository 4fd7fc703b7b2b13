//! Pipeline stages behind the `retroseq` command.

pub mod commands;
pub mod config;
