//! Studio service and command line for the textmatch engine.

pub mod cli;
pub mod service;
