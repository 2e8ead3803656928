//! Forward computation of the uncertainty-aware detector.
//!
//! A small strided convolutional feature extractor feeds two heads: a
//! per-class 1x1 projection into a `D`-dimensional hyperspace, scored against
//! learned class centroids with an RBF kernel, and a linear dimensions head
//! regressing box width and height in input pixels.

mod checkpoint;
mod conv;
pub(crate) mod linalg;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use conv::{ConvStage, StageSpec};

use crate::error::{Error, Result};
use crate::grid::{ScalarGrid, VectorGrid};
use crate::training::FeatureFlags;
use conv::StageCache;
use linalg::gemm;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub stages: Vec<StageSpec>,
    pub hyperspace_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            stages: vec![
                StageSpec::new(8, 2, 1),
                StageSpec::new(16, 2, 1),
                StageSpec::new(32, 1, 2),
                StageSpec::new(32, 1, 4),
            ],
            hyperspace_dim: 16,
            num_classes: 3,
        }
    }
}

impl ModelConfig {
    /// Overall output stride: input pixels per heatmap cell.
    pub fn stride(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    pub fn feature_dim(&self) -> usize {
        self.stages.last().map_or(self.in_channels, |s| s.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument("at least one convolution stage is required".into()));
        }
        if self.stages.iter().any(|s| s.out_channels == 0 || s.stride == 0 || s.dilation == 0) {
            return Err(Error::InvalidArgument("stage widths, strides and dilations must be positive".into()));
        }
        if self.in_channels == 0 || self.hyperspace_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidArgument(
                "in_channels, hyperspace_dim and num_classes must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stack of convolution + ReLU stages (`f_theta`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub stages: Vec<ConvStage>,
}

impl FeatureExtractor {
    pub fn stride(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    pub fn output_shape(&self, height: usize, width: usize) -> (usize, usize) {
        self.stages
            .iter()
            .fold((height, width), |(h, w), s| s.output_shape(h, w))
    }

    pub fn forward(&self, image: &VectorGrid) -> VectorGrid {
        let mut x = image.clone();
        for stage in &self.stages {
            x = stage.forward(&x, false).0;
        }
        x
    }
}

/// Per-class linear maps `W_c` from feature space into the hyperspace,
/// applied identically at every cell (a 1x1 convolution without bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperspaceProjector {
    pub num_classes: usize,
    pub dim: usize,
    pub feature_dim: usize,
    /// `(num_classes * dim) x feature_dim`, row-major; class `c` owns rows
    /// `c * dim .. (c + 1) * dim`.
    pub weights: Vec<f64>,
}

impl HyperspaceProjector {
    pub fn zeros(num_classes: usize, dim: usize, feature_dim: usize) -> Self {
        HyperspaceProjector {
            num_classes,
            dim,
            feature_dim,
            weights: vec![0.0; num_classes * dim * feature_dim],
        }
    }

    /// Identity maps for every class (`dim == feature_dim`).
    pub fn identity(num_classes: usize, dim: usize) -> Self {
        let mut p = Self::zeros(num_classes, dim, dim);
        for c in 0..num_classes {
            for d in 0..dim {
                p.weights[(c * dim + d) * dim + d] = 1.0;
            }
        }
        p
    }

    pub fn class_map(&self, class: usize) -> &[f64] {
        let n = self.dim * self.feature_dim;
        &self.weights[class * n..(class + 1) * n]
    }

    pub fn class_map_mut(&mut self, class: usize) -> &mut [f64] {
        let n = self.dim * self.feature_dim;
        &mut self.weights[class * n..(class + 1) * n]
    }

    fn is_consistent(&self) -> bool {
        self.weights.len() == self.num_classes * self.dim * self.feature_dim
    }
}

/// Per-class hyperspace centroids with the kernel length scale and centroid
/// momentum.
///
/// `running_sums` / `running_counts` carry the count-scaled moving averages
/// used by the unbalanced (DUQ-style) update; the balanced update ignores
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub centroids: Vec<Vec<f64>>,
    pub length_scale: f64,
    pub momentum: f64,
    pub running_sums: Vec<Vec<f64>>,
    pub running_counts: Vec<f64>,
}

impl CentroidSet {
    pub fn new(centroids: Vec<Vec<f64>>, length_scale: f64, momentum: f64) -> Result<Self> {
        if !(length_scale > 0.0) {
            return Err(Error::NonPositiveLengthScale(length_scale));
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidArgument(format!("momentum must lie in (0, 1), got {momentum}")));
        }
        let dim = centroids.first().map_or(0, Vec::len);
        if centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch("centroids differ in dimensionality".into()));
        }
        let running_counts = vec![1.0; centroids.len()];
        Ok(CentroidSet {
            running_sums: centroids.clone(),
            centroids,
            length_scale,
            momentum,
            running_counts,
        })
    }

    /// Standard-normal centroids scaled by `scale`, drawn from `rng`.
    pub fn random<R: Rng>(
        num_classes: usize,
        dim: usize,
        scale: f64,
        length_scale: f64,
        momentum: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let centroids = (0..num_classes)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
                    .collect()
            })
            .collect();
        Self::new(centroids, length_scale, momentum)
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }
}

/// Linear map from shared features to `(w, h)` in input pixels, made
/// non-negative with softplus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimsHead {
    pub feature_dim: usize,
    /// `2 x feature_dim`, row 0 predicts width, row 1 height.
    pub weight: Vec<f64>,
    pub bias: [f64; 2],
}

impl DimsHead {
    fn is_consistent(&self) -> bool {
        self.weight.len() == 2 * self.feature_dim
    }
}

/// Everything the decoder needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub stride: usize,
    /// One objectness map per class, values in `(0, 1]`.
    pub class_heatmaps: Vec<ScalarGrid>,
    /// Two channels: predicted width and height in input pixels.
    pub dims_map: VectorGrid,
    /// `W_c f(x)` per class.
    pub embedding_maps: Vec<VectorGrid>,
}

impl HeadOutputs {
    pub fn num_classes(&self) -> usize {
        self.class_heatmaps.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.dims_map.shape()
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Squared euclidean distance normalized by the dimensionality.
#[inline]
pub(crate) fn normalized_sq_distance(z: &[f64], e: &[f64]) -> f64 {
    let d: f64 = z.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
    d / z.len() as f64
}

/// RBF objectness: `exp(-|z - e|^2 / (2 D sigma^2))`.
pub fn rbf_score(z: &[f64], centroid: &[f64], length_scale: f64) -> Result<f64> {
    if !(length_scale > 0.0) {
        return Err(Error::NonPositiveLengthScale(length_scale));
    }
    if z.len() != centroid.len() || z.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "embedding has {} dims, centroid {}",
            z.len(),
            centroid.len()
        )));
    }
    Ok((-normalized_sq_distance(z, centroid) / (2.0 * length_scale * length_scale)).exp())
}

/// Objectness uncertainty: the complement of the kernel score.
#[inline]
pub fn objectness_uncertainty(score: f64) -> f64 {
    1.0 - score
}

/// Applies class `class`'s hyperspace map to every cell of `features`.
pub fn project_features(
    features: &VectorGrid,
    projector: &HyperspaceProjector,
    class: usize,
) -> Result<VectorGrid> {
    if class >= projector.num_classes {
        return Err(Error::ClassOutOfRange {
            index: class,
            num_classes: projector.num_classes,
        });
    }
    if features.plane_len() == 0 {
        return Err(Error::InvalidArgument("feature grid is empty".into()));
    }
    if features.channels() != projector.feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "features have {} channels, projector expects {}",
            features.channels(),
            projector.feature_dim
        )));
    }
    let n = features.plane_len();
    let mut out = vec![0.0; projector.dim * n];
    gemm(
        projector.dim,
        projector.feature_dim,
        n,
        projector.class_map(class),
        false,
        features.as_slice(),
        false,
        0.0,
        &mut out,
    );
    VectorGrid::from_vec(projector.dim, features.height(), features.width(), out)
}

/// The full detector: parameters, centroid state and the feature-flag set it
/// was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub extractor: FeatureExtractor,
    pub projector: HyperspaceProjector,
    pub dims_head: DimsHead,
    pub centroids: CentroidSet,
    pub flags: FeatureFlags,
}

/// Gradients for every trainable tensor, laid out like [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub stage_weights: Vec<Vec<f64>>,
    pub stage_biases: Vec<Vec<f64>>,
    pub projector: Vec<f64>,
    pub dims_weight: Vec<f64>,
    pub dims_bias: [f64; 2],
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Gradients {
            stage_weights: model.extractor.stages.iter().map(|s| vec![0.0; s.weight.len()]).collect(),
            stage_biases: model.extractor.stages.iter().map(|s| vec![0.0; s.bias.len()]).collect(),
            projector: vec![0.0; model.projector.weights.len()],
            dims_weight: vec![0.0; model.dims_head.weight.len()],
            dims_bias: [0.0; 2],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, g| g.iter_mut().for_each(|v| *v *= factor));
    }

    /// Visits every tensor in a fixed order with its [`ParamGroup`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(ParamGroup, &mut [f64])) {
        for (w, b) in self.stage_weights.iter_mut().zip(&mut self.stage_biases) {
            f(ParamGroup::Backbone, w);
            f(ParamGroup::Backbone, b);
        }
        f(ParamGroup::Projection, &mut self.projector);
        f(ParamGroup::DimsHead, &mut self.dims_weight);
        f(ParamGroup::DimsHead, &mut self.dims_bias);
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in self.stage_weights.iter().zip(&self.stage_biases) {
            out.push(w);
            out.push(b);
        }
        out.push(&self.projector);
        out.push(&self.dims_weight);
        out.push(&self.dims_bias);
        out
    }
}

/// Which sub-network a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Projection,
    DimsHead,
}

/// Intermediate activations of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub outputs: HeadOutputs,
    features: VectorGrid,
    stage_outputs: Vec<VectorGrid>,
    stage_caches: Vec<StageCache>,
    dims_pre: Vec<f64>,
}

impl ForwardTrace {
    pub fn features(&self) -> &VectorGrid {
        &self.features
    }
}

impl Model {
    /// He-initialized weights, small random projections, and centroids drawn
    /// as standard normal times `centroid_scale`, all from `seed`.
    pub fn new(
        config: ModelConfig,
        centroid_scale: f64,
        length_scale: f64,
        momentum: f64,
        flags: FeatureFlags,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::with_capacity(config.stages.len());
        let mut in_ch = config.in_channels;
        for spec in &config.stages {
            let mut stage = ConvStage::zeros(in_ch, *spec);
            let std = (2.0 / stage.fan_in() as f64).sqrt();
            for w in &mut stage.weight {
                *w = rng.sample::<f64, _>(StandardNormal) * std;
            }
            stages.push(stage);
            in_ch = spec.out_channels;
        }
        let feature_dim = config.feature_dim();
        let mut projector = HyperspaceProjector::zeros(config.num_classes, config.hyperspace_dim, feature_dim);
        let proj_std = 1.0 / (feature_dim as f64).sqrt();
        for w in &mut projector.weights {
            *w = rng.sample::<f64, _>(StandardNormal) * proj_std * 0.1;
        }
        let mut dims_weight = vec![0.0; 2 * feature_dim];
        for w in &mut dims_weight {
            *w = rng.sample::<f64, _>(StandardNormal) * proj_std * 0.1;
        }
        // Start the size regression near a typical object extent.
        let b = inverse_softplus(4.0 * config.stride() as f64);
        let centroids = CentroidSet::random(
            config.num_classes,
            config.hyperspace_dim,
            centroid_scale,
            length_scale,
            momentum,
            &mut rng,
        )?;
        Ok(Model {
            extractor: FeatureExtractor { stages },
            projector,
            dims_head: DimsHead {
                feature_dim,
                weight: dims_weight,
                bias: [b, b],
            },
            centroids,
            config,
            flags,
        })
    }

    pub fn stride(&self) -> usize {
        self.extractor.stride()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Checks that every tensor matches the configured architecture.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.extractor.stages.len() != self.config.stages.len() {
            return Err(Error::Uninitialized(format!(
                "expected {} convolution stages, found {}",
                self.config.stages.len(),
                self.extractor.stages.len()
            )));
        }
        let mut in_ch = self.config.in_channels;
        for (i, (stage, spec)) in self.extractor.stages.iter().zip(&self.config.stages).enumerate() {
            if stage.in_channels != in_ch
                || stage.out_channels != spec.out_channels
                || stage.stride != spec.stride
                || stage.dilation != spec.dilation
                || !stage.is_consistent()
            {
                return Err(Error::Uninitialized(format!("convolution stage {i} has mismatched tensors")));
            }
            in_ch = spec.out_channels;
        }
        let f = self.config.feature_dim();
        if !self.projector.is_consistent()
            || self.projector.num_classes != self.config.num_classes
            || self.projector.dim != self.config.hyperspace_dim
            || self.projector.feature_dim != f
        {
            return Err(Error::Uninitialized("hyperspace projection has mismatched tensors".into()));
        }
        if !self.dims_head.is_consistent() || self.dims_head.feature_dim != f {
            return Err(Error::Uninitialized("dimensions head has mismatched tensors".into()));
        }
        if self.centroids.num_classes() != self.config.num_classes
            || self.centroids.dim() != self.config.hyperspace_dim
            || self.centroids.running_sums.len() != self.config.num_classes
            || self.centroids.running_counts.len() != self.config.num_classes
        {
            return Err(Error::Uninitialized("centroid set does not match the class count".into()));
        }
        if !(self.centroids.length_scale > 0.0) {
            return Err(Error::NonPositiveLengthScale(self.centroids.length_scale));
        }
        Ok(())
    }

    fn check_image(&self, image: &VectorGrid) -> Result<()> {
        if image.channels() != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "image has {} channels, model expects {}",
                image.channels(),
                self.config.in_channels
            )));
        }
        if image.plane_len() == 0 {
            return Err(Error::InvalidArgument("image is empty".into()));
        }
        Ok(())
    }

    /// Runs the detector on one image. Pure: the model is not modified.
    pub fn forward(&self, image: &VectorGrid) -> Result<HeadOutputs> {
        self.validate()?;
        self.check_image(image)?;
        let features = self.extractor.forward(image);
        Ok(self.heads(&features).0)
    }

    /// Forward pass that keeps the activations needed by [`Model::backward`].
    pub fn forward_trace(&self, image: &VectorGrid) -> Result<ForwardTrace> {
        self.validate()?;
        self.check_image(image)?;
        let mut x = image.clone();
        let mut stage_outputs = Vec::with_capacity(self.extractor.stages.len());
        let mut stage_caches = Vec::with_capacity(self.extractor.stages.len());
        for stage in &self.extractor.stages {
            let (y, cache) = stage.forward(&x, true);
            stage_caches.push(cache.expect("cache requested"));
            stage_outputs.push(y.clone());
            x = y;
        }
        let (outputs, dims_pre) = self.heads(&x);
        Ok(ForwardTrace {
            outputs,
            features: x,
            stage_outputs,
            stage_caches,
            dims_pre,
        })
    }

    /// Computes both heads from shared features; also returns the dims head's
    /// pre-softplus activations.
    fn heads(&self, features: &VectorGrid) -> (HeadOutputs, Vec<f64>) {
        let (h, w) = features.shape();
        let n = h * w;
        let sigma = self.centroids.length_scale;
        let dim = self.config.hyperspace_dim;
        let denom = 2.0 * dim as f64 * sigma * sigma;
        let mut class_heatmaps = Vec::with_capacity(self.config.num_classes);
        let mut embedding_maps = Vec::with_capacity(self.config.num_classes);
        for c in 0..self.config.num_classes {
            let z = project_features(features, &self.projector, c).expect("validated projector");
            let e = &self.centroids.centroids[c];
            let mut sq = vec![0.0; n];
            for (d, &ed) in e.iter().enumerate() {
                for (acc, &v) in sq.iter_mut().zip(z.plane(d)) {
                    let diff = v - ed;
                    *acc += diff * diff;
                }
            }
            let scores = sq.into_iter().map(|s| (-s / denom).exp()).collect();
            class_heatmaps.push(ScalarGrid::from_vec(h, w, scores).expect("heatmap shape"));
            embedding_maps.push(z);
        }
        let mut pre = vec![0.0; 2 * n];
        for (k, chunk) in pre.chunks_mut(n).enumerate() {
            chunk.fill(self.dims_head.bias[k]);
        }
        gemm(2, self.dims_head.feature_dim, n, &self.dims_head.weight, false, features.as_slice(), false, 1.0, &mut pre);
        let dims = pre.iter().map(|&a| softplus(a)).collect();
        let outputs = HeadOutputs {
            stride: self.stride(),
            class_heatmaps,
            dims_map: VectorGrid::from_vec(2, h, w, dims).expect("dims shape"),
            embedding_maps,
        };
        (outputs, pre)
    }

    /// Backpropagates loss gradients given w.r.t. the heatmap scores, the
    /// embeddings (directly, e.g. from the hyperspace regularizer) and the
    /// predicted dimensions. Accumulates into `grads`.
    ///
    /// Centroids are treated as constants. With `backbone_frozen`, only the
    /// projection gradient is produced.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_scores: &[ScalarGrid],
        grad_embeddings: Option<&[VectorGrid]>,
        grad_dims: &VectorGrid,
        grads: &mut Gradients,
        backbone_frozen: bool,
    ) {
        let features = &trace.features;
        let (h, w) = features.shape();
        let n = h * w;
        let f = self.config.feature_dim();
        let dim = self.config.hyperspace_dim;
        let sigma = self.centroids.length_scale;
        let inv = 1.0 / (dim as f64 * sigma * sigma);
        let mut grad_features = vec![0.0; f * n];

        for c in 0..self.config.num_classes {
            let z = &trace.outputs.embedding_maps[c];
            let s = trace.outputs.class_heatmaps[c].as_slice();
            let gs = grad_scores[c].as_slice();
            let e = &self.centroids.centroids[c];
            // dL/dz = dL/ds * s * -(z - e) / (D sigma^2), plus any direct term.
            let mut gz = match grad_embeddings {
                Some(g) => g[c].as_slice().to_vec(),
                None => vec![0.0; dim * n],
            };
            for d in 0..dim {
                let zp = z.plane(d);
                let gp = &mut gz[d * n..(d + 1) * n];
                for i in 0..n {
                    gp[i] -= gs[i] * s[i] * (zp[i] - e[d]) * inv;
                }
            }
            let gw = &mut grads.projector[c * dim * f..(c + 1) * dim * f];
            gemm(dim, n, f, &gz, false, features.as_slice(), true, 1.0, gw);
            if !backbone_frozen {
                gemm(f, dim, n, self.projector.class_map(c), true, &gz, false, 1.0, &mut grad_features);
            }
        }
        if backbone_frozen {
            return;
        }

        let mut g_pre = vec![0.0; 2 * n];
        for ((g, &a), &gd) in g_pre.iter_mut().zip(&trace.dims_pre).zip(grad_dims.as_slice()) {
            *g = gd * sigmoid(a);
        }
        for k in 0..2 {
            grads.dims_bias[k] += g_pre[k * n..(k + 1) * n].iter().sum::<f64>();
        }
        gemm(2, n, f, &g_pre, false, features.as_slice(), true, 1.0, &mut grads.dims_weight);
        gemm(f, 2, n, &self.dims_head.weight, true, &g_pre, false, 1.0, &mut grad_features);

        let mut grad = grad_features;
        for i in (0..self.extractor.stages.len()).rev() {
            let stage = &self.extractor.stages[i];
            let gin = stage.backward(
                &trace.stage_caches[i],
                &trace.stage_outputs[i],
                &mut grad,
                &mut grads.stage_weights[i],
                &mut grads.stage_biases[i],
                i > 0,
            );
            match gin {
                Some(g) => grad = g.into_vec(),
                None => break,
            }
        }
    }

    /// Visits every trainable tensor in the same order as
    /// [`Gradients::for_each_mut`].
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(ParamGroup, &mut [f64])) {
        for stage in &mut self.extractor.stages {
            f(ParamGroup::Backbone, &mut stage.weight);
            f(ParamGroup::Backbone, &mut stage.bias);
        }
        f(ParamGroup::Projection, &mut self.projector.weights);
        f(ParamGroup::DimsHead, &mut self.dims_head.weight);
        f(ParamGroup::DimsHead, &mut self.dims_head.bias);
    }
}
