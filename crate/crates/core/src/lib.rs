pub mod cobiveco;
pub mod eikonal;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod inverse;
pub mod metrics;
pub mod pseudo_ecg;
pub mod qrs_analysis;
pub mod scenario;

pub use error::{Error, Result};
