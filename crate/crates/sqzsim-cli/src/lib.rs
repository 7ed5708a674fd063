//! Library side of the command-line front end: the configuration-file
//! format and the run orchestration, kept separate from the binary so the
//! integration tests can exercise them directly.

pub mod config;
pub mod run;
