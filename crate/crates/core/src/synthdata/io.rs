//! Dataset directory layout:
//!
//! ```text
//! manifest.toml       format version, image size, class names, scene count
//! scenes.bin          magic, then one binary record per scene
//! annotations.jsonl   {image_id, class, box [x, y, w, h], shape, intensity}
//! ```
//!
//! A scene record is little-endian: `image_id u64, height u32, width u32,
//! background f64, noise f64, render_seed u64`, then `height * width` f32
//! pixels.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Scene, SceneObject, ShapeKind};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const DATASET_VERSION: u32 = 1;
const SCENES_MAGIC: &[u8; 8] = b"CNSCENE1";
const RECORD_HEADER: usize = 8 + 4 + 4 + 8 + 8 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    height: usize,
    width: usize,
    num_scenes: usize,
    class_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    image_id: u64,
    class: usize,
    #[serde(rename = "box")]
    bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<ShapeKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intensity: Option<f64>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format_version: DATASET_VERSION,
        height: dataset.height,
        width: dataset.width,
        num_scenes: dataset.scenes.len(),
        class_names: dataset.class_names.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format(dir, e.to_string()))?;
    write_file(&dir.join("manifest.toml"), text.as_bytes())?;

    let scenes_path = dir.join("scenes.bin");
    let file = fs::File::create(&scenes_path).map_err(|e| Error::io(&scenes_path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(&scenes_path, e));
    put(SCENES_MAGIC)?;
    for s in &dataset.scenes {
        if s.pixels.len() != s.height * s.width {
            return Err(Error::InvalidArgument(format!("scene {} pixel count mismatch", s.image_id)));
        }
        put(&s.image_id.to_le_bytes())?;
        put(&(s.height as u32).to_le_bytes())?;
        put(&(s.width as u32).to_le_bytes())?;
        put(&s.background.to_le_bytes())?;
        put(&s.noise.to_le_bytes())?;
        put(&s.render_seed.to_le_bytes())?;
        for p in &s.pixels {
            put(&p.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(&scenes_path, e))?;

    let mut lines = String::new();
    for s in &dataset.scenes {
        for o in &s.objects {
            let rec = AnnotationRecord {
                image_id: s.image_id,
                class: o.class,
                bbox: o.bbox,
                shape: Some(o.shape),
                intensity: Some(o.intensity),
            };
            lines.push_str(&serde_json::to_string(&rec).expect("annotation serializes"));
            lines.push('\n');
        }
    }
    write_file(&dir.join("annotations.jsonl"), lines.as_bytes())
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: toml::Value = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    match value.get("format_version").and_then(toml::Value::as_integer) {
        Some(v) if v == i64::from(DATASET_VERSION) => {}
        Some(v) => {
            return Err(Error::Version {
                path,
                found: v.to_string(),
                expected: DATASET_VERSION.to_string(),
            })
        }
        None => return Err(Error::format(&path, "missing integer format_version")),
    }
    value
        .try_into()
        .map_err(|e: toml::de::Error| Error::format(&path, e.to_string()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let slice = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        slice.try_into().ok()
    }
}

fn read_scenes(dir: &Path, manifest: &Manifest) -> Result<Vec<Scene>> {
    let path = dir.join("scenes.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.get(..8) != Some(SCENES_MAGIC.as_slice()) {
        return Err(Error::format(&path, "missing CNSCENE1 magic"));
    }
    let mut cur = Cursor { bytes: &bytes, pos: 8 };
    let mut scenes = Vec::with_capacity(manifest.num_scenes);
    for record in 0..manifest.num_scenes {
        let start = cur.pos;
        let corrupt = |detail: String| Error::CorruptRecord {
            path: path.clone(),
            record,
            offset: start as u64,
            detail,
        };
        if bytes.len() < start + RECORD_HEADER {
            return Err(corrupt(format!(
                "truncated header: need {RECORD_HEADER} bytes, {} remain",
                bytes.len() - start
            )));
        }
        let image_id = u64::from_le_bytes(cur.take().expect("bounds checked"));
        let height = u32::from_le_bytes(cur.take().expect("bounds checked")) as usize;
        let width = u32::from_le_bytes(cur.take().expect("bounds checked")) as usize;
        let background = f64::from_le_bytes(cur.take().expect("bounds checked"));
        let noise = f64::from_le_bytes(cur.take().expect("bounds checked"));
        let render_seed = u64::from_le_bytes(cur.take().expect("bounds checked"));
        if height != manifest.height || width != manifest.width {
            return Err(corrupt(format!(
                "scene size {height}x{width} differs from manifest {}x{}",
                manifest.height, manifest.width
            )));
        }
        let n = height * width;
        if bytes.len() < cur.pos + 4 * n {
            return Err(corrupt(format!(
                "truncated pixels: need {} bytes, {} remain",
                4 * n,
                bytes.len() - cur.pos
            )));
        }
        let pixels = (0..n)
            .map(|_| f32::from_le_bytes(cur.take().expect("bounds checked")))
            .collect();
        scenes.push(Scene {
            image_id,
            height,
            width,
            background,
            noise,
            render_seed,
            pixels,
            objects: Vec::new(),
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptRecord {
            path,
            record: manifest.num_scenes,
            offset: cur.pos as u64,
            detail: format!("{} trailing bytes after the last record", bytes.len() - cur.pos),
        });
    }
    Ok(scenes)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut scenes = read_scenes(dir, &manifest)?;
    let index: BTreeMap<u64, usize> = scenes.iter().enumerate().map(|(i, s)| (s.image_id, i)).collect();

    let path = dir.join("annotations.jsonl");
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut offset = 0u64;
    for (record, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let len = line.len() as u64 + 1;
        if !line.trim().is_empty() {
            let corrupt = |detail: String| Error::CorruptRecord {
                path: path.clone(),
                record,
                offset,
                detail,
            };
            let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            let &slot = index
                .get(&rec.image_id)
                .ok_or_else(|| corrupt(format!("unknown image_id {}", rec.image_id)))?;
            if rec.class >= manifest.class_names.len() {
                return Err(corrupt(format!("class {} out of range", rec.class)));
            }
            scenes[slot].objects.push(SceneObject {
                class: rec.class,
                bbox: rec.bbox,
                shape: rec.shape.unwrap_or(ShapeKind::Rectangle),
                intensity: rec.intensity.unwrap_or(1.0),
            });
        }
        offset += len;
    }
    Ok(Dataset {
        height: manifest.height,
        width: manifest.width,
        class_names: manifest.class_names,
        scenes,
    })
}
