//! Shared fixtures for the criterion benches.

use certainnet_core::metrics::GroundTruth;
use certainnet_core::synthdata::generate_dataset;
use certainnet_core::{decode, Dataset, DecodeConfig, Detection, FeatureFlags, Model, ModelConfig, SceneConfig};

/// Untrained desk-size model; weights do not change the cost of a pass.
pub fn model() -> Model {
    Model::new(ModelConfig::default(), 0.25, 0.25, 0.9, FeatureFlags::all(), 1).expect("default config is valid")
}

pub fn scenes(count: usize) -> Dataset {
    generate_dataset(&SceneConfig::default(), 0, count).expect("default scene config is valid")
}

pub fn ground_truths(ds: &Dataset) -> Vec<GroundTruth> {
    ds.scenes
        .iter()
        .flat_map(|s| {
            s.boxes().into_iter().map(move |(bbox, class)| GroundTruth {
                image_id: s.image_id,
                class,
                bbox,
            })
        })
        .collect()
}

/// Detections from the untrained model with a low threshold, so the
/// metric benches see a realistic mix of matches and misses.
pub fn detections(model: &Model, ds: &Dataset) -> Vec<Detection> {
    let cfg = DecodeConfig {
        peak_threshold: 0.05,
        ..DecodeConfig::default()
    };
    ds.scenes
        .iter()
        .flat_map(|s| decode(s.image_id, &model.forward(&s.to_image()).unwrap(), &cfg).unwrap())
        .collect()
}
