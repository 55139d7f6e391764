//! Tracking of precipitation events in gridded radar reflectivity, one
//! geographical network per event, and the cross-event correlation of
//! meteorological and network metrics.

pub mod cli;
pub mod error;
pub mod grid;
pub mod meteonet;
pub mod network;
pub mod pipeline;
pub mod similarity;
pub mod stats;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use grid::{GridGeometry, GridStack};
pub use pipeline::PipelineConfig;
