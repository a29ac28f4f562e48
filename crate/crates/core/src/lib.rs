pub mod calibration;
pub mod copulas;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod marginals;
pub mod models;
pub mod par;
pub mod quantile;
pub mod report;
pub mod stats;

pub use error::{Error, Result};
