//! Sampling-free uncertainty estimation for anchor-free heatmap object
//! detection.
//!
//! The detector scores every heatmap cell with an RBF kernel between a
//! per-class hyperspace embedding and a learned class centroid, so the
//! objectness score itself is uncertainty-aware. Location, size and class
//! uncertainties are then read off the heatmaps in closed form, without
//! sampling.
//!
//! Modules:
//! - [`model`]: feature extractor, hyperspace projection, RBF scoring, dims head
//! - [`training`]: losses, balanced centroid updates, schedules, training loop
//! - [`decode`]: peaks to detections with all four uncertainties
//! - [`metrics`]: AP, objectness calibration metrics, CE and UBQ
//! - [`synthdata`]: synthetic benchmark scenes, domain shift, dataset I/O
//! - [`formats`]: detection and heatmap-dump JSON Lines

pub mod decode;
pub mod error;
pub mod formats;
pub mod geometry;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod synthdata;
pub mod training;

pub use decode::{decode, decode_maps, DecodeConfig, Detection};
pub use error::{Error, Result};
pub use geometry::BBox;
pub use grid::{ScalarGrid, VectorGrid};
pub use metrics::{evaluate, EvalConfig, EvalReport, GroundTruth};
pub use model::{HeadOutputs, Model, ModelConfig};
pub use synthdata::{Dataset, Scene, SceneConfig, ShiftConfig};
pub use training::{Ablation, FeatureFlags, TrainConfig};
