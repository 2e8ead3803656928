//! JSON Lines exchange formats: detections and per-image heatmap dumps.
//!
//! A heatmap dump record holds `{image_id, stride, class_heatmaps, dims_w,
//! dims_h}` where `class_heatmaps[c][row][col]` and `dims_*[row][col]` are
//! row-major nested arrays. Floats round-trip exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decode::Detection;
use crate::error::{Error, Result};
use crate::grid::{ScalarGrid, VectorGrid};
use crate::model::HeadOutputs;

/// Heatmaps and size maps for one image, as exported or imported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapDump {
    pub image_id: u64,
    pub stride: usize,
    pub class_heatmaps: Vec<Vec<Vec<f64>>>,
    pub dims_w: Vec<Vec<f64>>,
    pub dims_h: Vec<Vec<f64>>,
}

impl HeatmapDump {
    pub fn from_outputs(image_id: u64, outputs: &HeadOutputs) -> Self {
        HeatmapDump {
            image_id,
            stride: outputs.stride,
            class_heatmaps: outputs.class_heatmaps.iter().map(ScalarGrid::to_rows).collect(),
            dims_w: outputs.dims_map.plane_grid(0).to_rows(),
            dims_h: outputs.dims_map.plane_grid(1).to_rows(),
        }
    }

    /// Converts back to grids, validating that all maps share one shape.
    pub fn to_grids(&self) -> Result<(Vec<ScalarGrid>, VectorGrid)> {
        let heatmaps = self
            .class_heatmaps
            .iter()
            .map(|rows| ScalarGrid::from_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        let w = ScalarGrid::from_rows(&self.dims_w)?;
        let h = ScalarGrid::from_rows(&self.dims_h)?;
        if w.shape() != h.shape() || heatmaps.iter().any(|m| m.shape() != w.shape()) {
            return Err(Error::ShapeMismatch(format!(
                "image {}: heatmap and dimension maps differ in shape",
                self.image_id
            )));
        }
        let (rows, cols) = w.shape();
        let mut data = w.into_vec();
        data.extend(h.into_vec());
        Ok((heatmaps, VectorGrid::from_vec(2, rows, cols, data)?))
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for (record, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            let rec = serde_json::from_str(&line).map_err(|e| Error::CorruptRecord {
                path: path.to_path_buf(),
                record,
                offset,
                detail: e.to_string(),
            })?;
            out.push(rec);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

pub fn write_detections(path: &Path, detections: &[Detection]) -> Result<()> {
    write_jsonl(path, detections)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_jsonl(path)
}

pub fn write_heatmap_dumps(path: &Path, dumps: &[HeatmapDump]) -> Result<()> {
    write_jsonl(path, dumps)
}

pub fn read_heatmap_dumps(path: &Path) -> Result<Vec<HeatmapDump>> {
    read_jsonl(path)
}
