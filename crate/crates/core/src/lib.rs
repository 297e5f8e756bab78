pub mod autodiff;
pub mod cli;
pub mod config;
pub mod csvfmt;
pub mod experiments;
pub mod error;
pub mod network;
pub mod oracle;
pub mod physics;
pub mod training;

pub use error::{Error, Result};
