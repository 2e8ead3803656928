//! Deterministic synthetic scenes with exact box annotations and a
//! controllable domain shift.
//!
//! Every scene is a pure function of `(config, index)`: the generator seeds a
//! dedicated ChaCha stream per index, so scenes can be produced in any order.

mod io;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

pub use io::{load_dataset, save_dataset, DATASET_VERSION};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::grid::VectorGrid;

/// Silhouette drawn for an object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
    /// Hollow ellipse; never produced in-domain.
    Ring,
    /// Plus sign; never produced in-domain.
    Cross,
}

impl ShapeKind {
    pub const UNSEEN: [ShapeKind; 2] = [ShapeKind::Ring, ShapeKind::Cross];

    /// Whether the pixel at normalized box coordinates `(u, v)` in `[0, 1]^2`
    /// is covered.
    fn covers(self, u: f64, v: f64) -> bool {
        match self {
            ShapeKind::Rectangle => true,
            ShapeKind::Ellipse => {
                let (du, dv) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                du * du + dv * dv <= 1.0
            }
            ShapeKind::Triangle => {
                // Apex at top center, base along the bottom edge.
                (2.0 * u - 1.0).abs() <= v
            }
            ShapeKind::Ring => {
                let (du, dv) = (2.0 * u - 1.0, 2.0 * v - 1.0);
                let r = du * du + dv * dv;
                (0.36..=1.0).contains(&r)
            }
            ShapeKind::Cross => (u - 0.5).abs() <= 0.17 || (v - 0.5).abs() <= 0.17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub shape: ShapeKind,
    pub frequency: f64,
}

/// Scene generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Object count is uniform in `min_objects..=max_objects`.
    pub min_objects: usize,
    pub max_objects: usize,
    pub classes: Vec<ClassSpec>,
    /// Range of the geometric-mean side length, in pixels.
    pub size_min: f64,
    pub size_max: f64,
    /// Range of width / height.
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub background_min: f64,
    pub background_max: f64,
    /// Standard deviation of per-pixel background noise.
    pub noise: f64,
    /// Minimum pixel gap kept between objects.
    pub min_gap: f64,
    pub placement_retries: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 128,
            width: 128,
            min_objects: 1,
            max_objects: 4,
            classes: vec![
                ClassSpec {
                    name: "rectangle".into(),
                    shape: ShapeKind::Rectangle,
                    frequency: 0.7,
                },
                ClassSpec {
                    name: "ellipse".into(),
                    shape: ShapeKind::Ellipse,
                    frequency: 0.2,
                },
                ClassSpec {
                    name: "triangle".into(),
                    shape: ShapeKind::Triangle,
                    frequency: 0.1,
                },
            ],
            size_min: 16.0,
            size_max: 32.0,
            aspect_min: 0.75,
            aspect_max: 1.33,
            intensity_min: 0.55,
            intensity_max: 1.0,
            background_min: 0.0,
            background_max: 0.3,
            noise: 0.03,
            min_gap: 2.0,
            placement_retries: 64,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("scene config: {msg}")));
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive");
        }
        if self.classes.is_empty() {
            return bad("at least one class is required");
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects");
        }
        if !(self.size_min > 0.0 && self.size_min <= self.size_max) {
            return bad("sizes must be positive with size_min <= size_max");
        }
        if self.size_max * self.aspect_max.max(1.0).sqrt() > self.width.min(self.height) as f64 {
            return bad("objects cannot fit inside the image");
        }
        if !(self.aspect_min > 0.0 && self.aspect_min <= self.aspect_max) {
            return bad("aspect range must be positive and ordered");
        }
        if self.classes.iter().any(|c| !(c.frequency >= 0.0)) {
            return bad("class frequencies must be non-negative");
        }
        let total: f64 = self.classes.iter().map(|c| c.frequency).sum();
        if (total - 1.0).abs() > 1e-6 {
            return bad("class frequencies must sum to 1");
        }
        if self.intensity_min > self.intensity_max || self.background_min > self.background_max {
            return bad("intensity ranges must be ordered");
        }
        if !(self.noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        Ok(())
    }
}

/// Domain-shift perturbation applied on top of generated scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Constant added to every pixel.
    pub intensity_shift: f64,
    /// Object boxes are scaled about their centers by this factor.
    pub size_factor: f64,
    /// Probability that an object is redrawn with a shape never seen in
    /// training (its annotation keeps the original class).
    pub unseen_shape_rate: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        ShiftConfig {
            noise_sigma: 0.0,
            intensity_shift: 0.0,
            size_factor: 1.0,
            unseen_shape_rate: 0.0,
        }
    }
}

impl ShiftConfig {
    pub fn is_identity(&self) -> bool {
        *self == ShiftConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !(self.size_factor > 0.0) || !(0.0..=1.0).contains(&self.unseen_shape_rate)
        {
            return Err(Error::InvalidArgument(
                "shift config: need noise_sigma >= 0, size_factor > 0, unseen_shape_rate in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    pub bbox: BBox,
    pub shape: ShapeKind,
    pub intensity: f64,
}

/// A grayscale image with its annotations and the parameters needed to
/// re-render it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: u64,
    pub height: usize,
    pub width: usize,
    pub background: f64,
    pub noise: f64,
    pub render_seed: u64,
    /// Row-major pixel intensities.
    pub pixels: Vec<f32>,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Single-channel model input.
    pub fn to_image(&self) -> VectorGrid {
        let data = self.pixels.iter().map(|&p| f64::from(p)).collect();
        VectorGrid::from_vec(1, self.height, self.width, data).expect("scene pixel count")
    }

    pub fn boxes(&self) -> Vec<(BBox, usize)> {
        self.objects.iter().map(|o| (o.bbox, o.class)).collect()
    }
}

/// A collection of scenes sharing one image size and class list.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub class_names: Vec<String>,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Rasterizes background noise then objects in order.
fn render(height: usize, width: usize, background: f64, noise: f64, render_seed: u64, objects: &[SceneObject]) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(render_seed);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
    let mut px: Vec<f64> = (0..height * width)
        .map(|_| background + if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 })
        .collect();
    for obj in objects {
        let b = obj.bbox;
        if b.w <= 0.0 || b.h <= 0.0 {
            continue;
        }
        let y0 = b.y.floor().max(0.0) as usize;
        let x0 = b.x.floor().max(0.0) as usize;
        let y1 = (b.bottom().ceil().max(0.0) as usize).min(height);
        let x1 = (b.right().ceil().max(0.0) as usize).min(width);
        for y in y0..y1 {
            let v = (y as f64 + 0.5 - b.y) / b.h;
            if !(0.0..=1.0).contains(&v) {
                continue;
            }
            for x in x0..x1 {
                let u = (x as f64 + 0.5 - b.x) / b.w;
                if (0.0..=1.0).contains(&u) && obj.shape.covers(u, v) {
                    px[y * width + x] = obj.intensity + (px[y * width + x] - background);
                }
            }
        }
    }
    px.into_iter().map(|p| p as f32).collect()
}

/// Generates scene `index` for `config`. Objects that cannot be placed
/// without overlap after the configured retries are dropped.
pub fn generate_scene(config: &SceneConfig, index: u64) -> Result<Scene> {
    config.validate()?;
    let mut rng = scene_rng(config.seed, index);
    let class_dist = WeightedIndex::new(config.classes.iter().map(|c| c.frequency))
        .map_err(|e| Error::InvalidArgument(format!("class frequencies: {e}")))?;
    let count = rng.random_range(config.min_objects..=config.max_objects);
    let (hf, wf) = (config.height as f64, config.width as f64);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    for _ in 0..count {
        let class = class_dist.sample(&mut rng);
        let intensity = rng.random_range(config.intensity_min..=config.intensity_max);
        let mut placed = false;
        for _ in 0..config.placement_retries.max(1) {
            let side = rng.random_range(config.size_min..=config.size_max);
            let aspect = rng.random_range(config.aspect_min..=config.aspect_max);
            let w = (side * aspect.sqrt()).min(wf);
            let h = (side / aspect.sqrt()).min(hf);
            let x = rng.random_range(0.0..=(wf - w));
            let y = rng.random_range(0.0..=(hf - h));
            let candidate = BBox::new(x, y, w, h);
            let grown = candidate.inflate(config.min_gap, config.min_gap);
            if objects.iter().all(|o| o.bbox.intersection_area(&grown) == 0.0) {
                objects.push(SceneObject {
                    class,
                    bbox: candidate,
                    shape: config.classes[class].shape,
                    intensity,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            log::debug!("scene {index}: could not place an object after {} tries", config.placement_retries);
        }
    }
    let background = rng.random_range(config.background_min..=config.background_max);
    let render_seed: u64 = rng.random();
    let pixels = render(config.height, config.width, background, config.noise, render_seed, &objects);
    Ok(Scene {
        image_id: index,
        height: config.height,
        width: config.width,
        background,
        noise: config.noise,
        render_seed,
        pixels,
        objects,
    })
}

/// Generates scenes `start..start + count` as a dataset.
pub fn generate_dataset(config: &SceneConfig, start: u64, count: usize) -> Result<Dataset> {
    config.validate()?;
    let scenes = (start..start + count as u64)
        .map(|i| generate_scene(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        height: config.height,
        width: config.width,
        class_names: config.class_names(),
        scenes,
    })
}

/// Applies a domain shift to one scene. Deterministic per `(seed, image_id)`.
///
/// Size scaling and shape substitution re-render the scene over its original
/// background noise; intensity shift and additive noise are then applied to
/// every pixel without clipping.
pub fn apply_shift(scene: &Scene, shift: &ShiftConfig, seed: u64) -> Result<Scene> {
    shift.validate()?;
    let mut out = scene.clone();
    if shift.is_identity() {
        return Ok(out);
    }
    let mut rng = scene_rng(seed ^ 0x5348_4946_545f_5631, scene.image_id);
    let needs_render = shift.size_factor != 1.0 || shift.unseen_shape_rate > 0.0;
    if needs_render {
        for obj in &mut out.objects {
            if shift.size_factor != 1.0 {
                obj.bbox = obj.bbox.scale_about_center(shift.size_factor);
            }
            if shift.unseen_shape_rate > 0.0 && rng.random_bool(shift.unseen_shape_rate) {
                obj.shape = ShapeKind::UNSEEN[rng.random_range(0..ShapeKind::UNSEEN.len())];
            }
        }
        out.pixels = render(out.height, out.width, out.background, out.noise, out.render_seed, &out.objects);
    }
    if shift.intensity_shift != 0.0 || shift.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, shift.noise_sigma).expect("validated noise");
        for p in &mut out.pixels {
            let n = if shift.noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            *p = (f64::from(*p) + shift.intensity_shift + n) as f32;
        }
    }
    Ok(out)
}

/// Applies [`apply_shift`] to every scene.
pub fn shift_dataset(dataset: &Dataset, shift: &ShiftConfig, seed: u64) -> Result<Dataset> {
    let scenes = dataset
        .scenes
        .iter()
        .map(|s| apply_shift(s, shift, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        scenes,
        ..dataset.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(generate_scene(&cfg, 7).unwrap(), generate_scene(&cfg, 7).unwrap());
        assert_ne!(generate_scene(&cfg, 7).unwrap().pixels, generate_scene(&cfg, 8).unwrap().pixels);
    }

    #[test]
    fn zero_objects_gives_background_only() {
        let cfg = SceneConfig {
            min_objects: 0,
            max_objects: 0,
            ..SceneConfig::default()
        };
        let s = generate_scene(&cfg, 3).unwrap();
        assert!(s.objects.is_empty());
        let mean: f64 = s.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / s.pixels.len() as f64;
        assert!((mean - s.background).abs() < 0.01);
    }

    #[test]
    fn boxes_lie_inside_the_image() {
        let cfg = SceneConfig::default();
        let frame = BBox::new(0.0, 0.0, cfg.width as f64, cfg.height as f64);
        for i in 0..200 {
            for o in generate_scene(&cfg, i).unwrap().objects {
                assert!(frame.contains(&o.bbox), "scene {i}: {:?}", o.bbox);
            }
        }
    }

    #[test]
    fn class_frequencies_reproduced() {
        // Oracle: count classes over >= 10k objects.
        let cfg = SceneConfig {
            min_objects: 4,
            max_objects: 4,
            height: 256,
            width: 256,
            ..SceneConfig::default()
        };
        let mut counts = [0usize; 3];
        let mut total = 0;
        let mut i = 0;
        while total < 10_000 {
            for o in generate_scene(&cfg, i).unwrap().objects {
                counts[o.class] += 1;
                total += 1;
            }
            i += 1;
        }
        for (c, spec) in cfg.classes.iter().enumerate() {
            let f = counts[c] as f64 / total as f64;
            assert!((f - spec.frequency).abs() < 0.02, "class {c}: {f}");
        }
    }

    #[test]
    fn identity_shift_is_noop() {
        let s = generate_scene(&SceneConfig::default(), 1).unwrap();
        assert_eq!(apply_shift(&s, &ShiftConfig::default(), 9).unwrap(), s);
    }

    #[test]
    fn noise_shift_matches_configured_sigma() {
        let s = generate_scene(&SceneConfig::default(), 2).unwrap();
        let shift = ShiftConfig {
            noise_sigma: 0.2,
            ..ShiftConfig::default()
        };
        let t = apply_shift(&s, &shift, 4).unwrap();
        let d: Vec<f64> = s.pixels.iter().zip(&t.pixels).map(|(a, b)| f64::from(*b) - f64::from(*a)).collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((sd - 0.2).abs() / 0.2 < 0.05, "sd {sd}");
        assert_eq!(t.objects, s.objects);
    }

    #[test]
    fn size_shift_scales_boxes_exactly() {
        let s = generate_scene(&SceneConfig::default(), 5).unwrap();
        let shift = ShiftConfig {
            size_factor: 1.5,
            ..ShiftConfig::default()
        };
        let t = apply_shift(&s, &shift, 4).unwrap();
        for (a, b) in s.objects.iter().zip(&t.objects) {
            assert!((b.bbox.w - 1.5 * a.bbox.w).abs() < 1e-12);
            assert!((b.bbox.h - 1.5 * a.bbox.h).abs() < 1e-12);
            let (ca, cb) = (a.bbox.center(), b.bbox.center());
            assert!((ca.0 - cb.0).abs() < 1e-9 && (ca.1 - cb.1).abs() < 1e-9);
        }
    }

    #[test]
    fn unseen_shapes_keep_annotations() {
        let s = generate_scene(&SceneConfig::default(), 6).unwrap();
        let shift = ShiftConfig {
            unseen_shape_rate: 1.0,
            ..ShiftConfig::default()
        };
        let t = apply_shift(&s, &shift, 4).unwrap();
        for (a, b) in s.objects.iter().zip(&t.objects) {
            assert_eq!((a.class, a.bbox), (b.class, b.bbox));
            assert!(ShapeKind::UNSEEN.contains(&b.shape));
        }
    }
}
