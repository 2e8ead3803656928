//! Stabilized training of the uncertainty-aware head: losses with analytic
//! gradients, balanced centroid moving averages with outlier protection,
//! centroid-momentum scheduling and length-scale annealing.

mod centroids;
mod config;
mod losses;
mod optim;
mod targets;
mod trainer;

pub use centroids::{anneal_length_scale, schedule_momentum, update_centroids, CentroidAccumulator};
pub use config::{Ablation, FeatureFlags, TrainConfig};
pub use losses::{bce_term, detection_loss, dims_loss, regularization_loss, regularization_loss_normalized};
pub use optim::Adam;
pub use targets::{splat_ground_truth, GroundTruthHeatmaps};
pub use trainer::{train, write_trace_csv, TraceRow, TrainOutcome, TrainState};
