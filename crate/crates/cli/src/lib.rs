//! Command-line front end and `/v1` HTTP service for `fbsdiag`.

pub mod cli;
pub mod envelope;
pub mod service;

pub use cli::{run, Cli};
pub use envelope::{ApiEnvelope, ErrorBody, Status};
