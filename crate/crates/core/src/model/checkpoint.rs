//! Checkpoint file: a magic line followed by one JSON document holding every
//! tensor, the centroid state and the feature-flag set.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "CERTAINNET-CKPT-v1";
const MAGIC_FAMILY: &str = "CERTAINNET-CKPT-";

#[derive(Serialize)]
struct HeaderRef<'a> {
    stride: usize,
    num_classes: usize,
    hyperspace_dim: usize,
    length_scale: f64,
    momentum: f64,
    model: &'a Model,
}

#[derive(Deserialize)]
struct Header {
    stride: usize,
    num_classes: usize,
    hyperspace_dim: usize,
    model: Model,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    model.validate()?;
    let body = HeaderRef {
        stride: model.stride(),
        num_classes: model.num_classes(),
        hyperspace_dim: model.config.hyperspace_dim,
        length_scale: model.centroids.length_scale,
        momentum: model.centroids.momentum,
        model,
    };
    let json = serde_json::to_string(&body).map_err(|e| Error::format(path, e.to_string()))?;
    let mut text = String::with_capacity(json.len() + CHECKPOINT_MAGIC.len() + 2);
    text.push_str(CHECKPOINT_MAGIC);
    text.push('\n');
    text.push_str(&json);
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (magic, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    if magic != CHECKPOINT_MAGIC {
        if let Some(found) = magic.strip_prefix(MAGIC_FAMILY) {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: found.to_string(),
                expected: "v1".into(),
            });
        }
        return Err(Error::format(path, format!("missing {CHECKPOINT_MAGIC} header")));
    }
    let header: Header = serde_json::from_str(body).map_err(|e| Error::CorruptRecord {
        path: path.to_path_buf(),
        record: 0,
        offset: (magic.len() + 1) as u64,
        detail: e.to_string(),
    })?;
    let model = header.model;
    model.validate()?;
    if header.stride != model.stride()
        || header.num_classes != model.num_classes()
        || header.hyperspace_dim != model.config.hyperspace_dim
    {
        return Err(Error::format(path, "header disagrees with the stored architecture"));
    }
    Ok(model)
}
