//! Central finite-difference checks for every analytic gradient in training.

use certainnet_core::geometry::BBox;
use certainnet_core::grid::{ScalarGrid, VectorGrid};
use certainnet_core::model::{CentroidSet, Gradients, Model, ModelConfig, ParamGroup, StageSpec};
use certainnet_core::training::{detection_loss, dims_loss, regularization_loss, splat_ground_truth};
use certainnet_core::FeatureFlags;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
/// The regularizer is exactly quadratic per coordinate, so a central
/// difference has no truncation error and a wide step keeps rounding small.
pub const QUADRATIC_STEP: f64 = 1e-3;

/// Relative error with an absolute floor. Central differences at `STEP`
/// carry about `eps * |loss| / STEP ~ 1e-9` of rounding noise for losses of
/// order 10, so gradients below the floor are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / scale
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> ScalarGrid {
    let v = (0..h * w).map(|_| rng.random_range(lo..hi)).collect();
    ScalarGrid::from_vec(h, w, v).unwrap()
}

/// Max relative error of the detection-loss gradient on one random instance.
pub fn detection_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (rng.random_range(2..5), rng.random_range(2..5), rng.random_range(1..4));
    let scores: Vec<ScalarGrid> = (0..c).map(|_| random_grid(&mut rng, h, w, 0.05, 0.95)).collect();
    let targets: Vec<ScalarGrid> = (0..c).map(|_| random_grid(&mut rng, h, w, 0.0, 1.0)).collect();
    let pw = rng.random_range(1.0..10.0);
    let (_, grads) = detection_loss(&scores, &targets, pw).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..c {
        for i in 0..h * w {
            let num = central(
                |x| {
                    let mut s = scores.clone();
                    s[k].as_mut_slice()[i] = x;
                    detection_loss(&s, &targets, pw).unwrap().0
                },
                scores[k].as_slice()[i],
                STEP,
            );
            worst = worst.max(rel_err(grads[k].as_slice()[i], num));
        }
    }
    worst
}

/// Max relative error of the hyperspace regularizer gradient.
pub fn regularization_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c, d) = (rng.random_range(2..5), rng.random_range(2..5), rng.random_range(1..4), rng.random_range(1..5));
    let emb: Vec<VectorGrid> = (0..c)
        .map(|_| {
            let v = (0..d * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            VectorGrid::from_vec(d, h, w, v).unwrap()
        })
        .collect();
    let targets: Vec<ScalarGrid> = (0..c).map(|_| random_grid(&mut rng, h, w, 0.0, 1.0)).collect();
    let cents = (0..c).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let set = CentroidSet::new(cents, 0.3, 0.9).unwrap();
    let lambda = rng.random_range(1.0..4.0);
    let (_, grads) = regularization_loss(&emb, &set, &targets, lambda).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..c {
        for i in 0..d * h * w {
            let num = central(
                |x| {
                    let mut e = emb.clone();
                    let mut v = e[k].clone().into_vec();
                    v[i] = x;
                    e[k] = VectorGrid::from_vec(d, h, w, v).unwrap();
                    regularization_loss(&e, &set, &targets, lambda).unwrap().0
                },
                emb[k].as_slice()[i],
                QUADRATIC_STEP,
            );
            worst = worst.max(rel_err(grads[k].as_slice()[i], num));
        }
    }
    worst
}

/// Max relative error of the size-regression gradient. Predictions stay
/// at least 0.1 from their targets so the L1 kink is never straddled.
pub fn dims_instance(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (rng.random_range(2..5), rng.random_range(2..5));
    let n = h * w;
    let targets: Vec<f64> = (0..2 * n).map(|_| rng.random_range(1.0..20.0)).collect();
    let pred: Vec<f64> = targets
        .iter()
        .map(|t| t + rng.random_range(0.1..3.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    mask[0] = true;
    let tg = VectorGrid::from_vec(2, h, w, targets).unwrap();
    let pg = VectorGrid::from_vec(2, h, w, pred.clone()).unwrap();
    let (_, grad) = dims_loss(&pg, &tg, &mask).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..2 * n {
        let num = central(
            |x| {
                let mut p = pred.clone();
                p[i] = x;
                dims_loss(&VectorGrid::from_vec(2, h, w, p).unwrap(), &tg, &mask).unwrap().0
            },
            pred[i],
            STEP,
        );
        worst = worst.max(rel_err(grad.as_slice()[i], num));
    }
    worst
}

struct Problem {
    model: Model,
    image: VectorGrid,
    heatmaps: Vec<ScalarGrid>,
    dims_targets: VectorGrid,
    mask: Vec<bool>,
    reg_weight: f64,
    dims_weight: f64,
    lambda: f64,
}

impl Problem {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = ModelConfig {
            in_channels: rng.random_range(1..3),
            stages: vec![
                StageSpec::new(rng.random_range(2..4), 2, 1),
                StageSpec::new(rng.random_range(2..4), 1, rng.random_range(1..3)),
            ],
            hyperspace_dim: rng.random_range(2..5),
            num_classes: rng.random_range(1..4),
        };
        let sigma = rng.random_range(0.2..0.5);
        let mut model = Model::new(config.clone(), 0.25, sigma, 0.9, FeatureFlags::all(), seed).unwrap();
        // Zero-initialized biases put pre-activations exactly on the ReLU
        // kink wherever a conv only sees padding, so jitter every parameter.
        model.for_each_param_mut(|_, t| t.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05)));
        let (hh, ww) = (rng.random_range(8..13), rng.random_range(8..13));
        let px = (0..config.in_channels * hh * ww).map(|_| rng.random_range(0.0..1.0)).collect();
        let image = VectorGrid::from_vec(config.in_channels, hh, ww, px).unwrap();
        let grid = model.extractor.output_shape(hh, ww);
        let objects: Vec<(BBox, usize)> = (0..2)
            .map(|_| {
                let (bw, bh) = (rng.random_range(2.0..6.0), rng.random_range(2.0..6.0));
                let x = rng.random_range(0.0..ww as f64 - bw);
                let y = rng.random_range(0.0..hh as f64 - bh);
                (BBox::new(x, y, bw, bh), rng.random_range(0..config.num_classes))
            })
            .collect();
        let gt = splat_ground_truth(&objects, config.num_classes, grid, model.stride()).unwrap();
        Problem {
            model,
            image,
            heatmaps: gt.heatmaps,
            dims_targets: gt.dims_targets,
            mask: gt.center_mask,
            reg_weight: rng.random_range(0.01..1.0),
            dims_weight: rng.random_range(0.1..1.0),
            lambda: rng.random_range(1.0..3.0),
        }
    }

    fn loss(&self, model: &Model) -> f64 {
        let out = model.forward(&self.image).unwrap();
        let det = detection_loss(&out.class_heatmaps, &self.heatmaps, 10.0).unwrap().0;
        let reg = regularization_loss(&out.embedding_maps, &model.centroids, &self.heatmaps, self.lambda).unwrap().0;
        let dims = dims_loss(&out.dims_map, &self.dims_targets, &self.mask).unwrap().0;
        det + self.reg_weight * reg + self.dims_weight * dims
    }

    fn analytic(&self) -> Gradients {
        let m = &self.model;
        let tr = m.forward_trace(&self.image).unwrap();
        let out = &tr.outputs;
        let (_, gs) = detection_loss(&out.class_heatmaps, &self.heatmaps, 10.0).unwrap();
        let (_, mut ge) = regularization_loss(&out.embedding_maps, &m.centroids, &self.heatmaps, self.lambda).unwrap();
        for g in &mut ge {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= self.reg_weight);
        }
        let (_, mut gd) = dims_loss(&out.dims_map, &self.dims_targets, &self.mask).unwrap();
        gd.as_mut_slice().iter_mut().for_each(|v| *v *= self.dims_weight);
        let mut grads = Gradients::zeros_like(m);
        m.backward(&tr, &gs, Some(&ge), &gd, &mut grads, false);
        grads
    }
}

/// End-to-end check through the conv backbone, the per-class projection and
/// the RBF kernel, plus the size head. Returns the worst relative error per
/// parameter group over `samples` randomly chosen coordinates per tensor.
pub fn end_to_end_instance(seed: u64, samples: usize) -> Vec<(ParamGroup, f64)> {
    let p = Problem::new(seed);
    let grads = p.analytic();
    let mut analytic: Vec<(ParamGroup, Vec<f64>)> = Vec::new();
    let mut g = grads.clone();
    g.for_each_mut(|group, t| analytic.push((group, t.to_vec())));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut out = Vec::new();
    for (ti, (group, a)) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for _ in 0..samples.min(a.len()) {
            let j = rng.random_range(0..a.len());
            let perturbed = |delta: f64| {
                let mut m = p.model.clone();
                let mut k = 0;
                m.for_each_param_mut(|_, t| {
                    if k == ti {
                        t[j] += delta;
                    }
                    k += 1;
                });
                p.loss(&m)
            };
            let num = (perturbed(STEP) - perturbed(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(a[j], num));
        }
        out.push((*group, worst));
    }
    out
}
