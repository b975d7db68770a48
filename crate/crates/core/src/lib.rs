//! Authentic execution of distributed event-driven applications on
//! simulated trusted execution environments.

pub mod apps;
pub mod behavior;
pub mod clock;
pub mod crypto;
pub mod deployer;
pub mod error;
pub mod harness;
pub mod manager;
pub mod metrics;
pub mod package;
pub mod runtime;
pub mod secure_io;
pub mod tee;

pub use error::{Error, ErrorKind, Result};
