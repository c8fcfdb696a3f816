//! Label propagation for cardiac cine MRI and vendor histogram matching.
//!
//! Only the end-systole (ES) and end-diastole (ED) frames of a cine series
//! carry manual labels. [`propagation`] registers both onto every other
//! frame, keeps the gentler of the two warps and carries its label across.
//! [`style`] harmonizes intensity distributions between scanner vendors by
//! histogram matching. [`phantom`] generates a beating-heart series with
//! exact labels on every frame, which the tests use as ground truth.

pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod propagation;
pub mod registration;
pub mod style;
pub mod volume;

pub use error::{Error, Result};
