//! The minibatch training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::centroids::{anneal_length_scale, schedule_momentum, CentroidAccumulator};
use super::config::{FeatureFlags, TrainConfig};
use super::losses::{detection_loss, dims_loss, regularization_loss_normalized};
use super::optim::Adam;
use super::targets::{splat_ground_truth, GroundTruthHeatmaps};
use crate::error::{Error, Result};
use crate::grid::VectorGrid;
use crate::model::{Gradients, Model, ParamGroup};
use crate::synthdata::Dataset;

/// One line of the training trace, written once per epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: u64,
    pub det_loss: f64,
    pub reg_loss: f64,
    pub dims_loss: f64,
    /// Length scale in effect at the end of the epoch.
    pub sigma: f64,
    pub gamma: f64,
    /// Mean euclidean distance moved by the centroids over the epoch.
    pub centroid_drift: f64,
}

/// Mutable bookkeeping of a training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub sigma: f64,
    pub gamma: f64,
    pub optimizer: Adam,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<TraceRow>,
    pub flags: FeatureFlags,
    /// Positive cells dropped from centroid updates as outliers.
    pub outliers_excluded: usize,
}

/// Writes the trace as CSV with a header row.
pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,step,det_loss,reg_loss,dims_loss,sigma,gamma,centroid_drift\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.epoch, r.step, r.det_loss, r.reg_loss, r.dims_loss, r.sigma, r.gamma, r.centroid_drift
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn sigma_at(config: &TrainConfig, step: u64) -> f64 {
    if config.flags.sigma_annealing {
        anneal_length_scale(step, config.sigma_init, config.sigma_decay, config.sigma_min)
    } else {
        config.sigma_min
    }
}

fn gamma_at(config: &TrainConfig, epoch: usize) -> f64 {
    if config.flags.momentum_schedule {
        schedule_momentum(epoch, &config.momentum_schedule)
    } else {
        config.momentum_schedule[0].1
    }
}

fn finite_or_diverged(value: f64, what: &str, state: &TrainState) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch: state.epoch,
            step: state.step as usize,
            detail: format!("{what} became {value}"),
        })
    }
}

/// Trains a detector on `dataset`. Deterministic for a given seed: the
/// initialization and the per-epoch sample order both derive from it.
///
/// Total loss per step is `det + reg_weight * reg + dims_weight * dims`,
/// each averaged over the minibatch; the centroid moving average is updated
/// after every optimizer step from that step's embeddings.
pub fn train(dataset: &Dataset, config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training dataset is empty".into()));
    }
    if dataset.num_classes() != config.model.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes, model config {}",
            dataset.num_classes(),
            config.model.num_classes
        )));
    }
    let flags = config.flags;
    let sigma0 = sigma_at(config, 0);
    let mut model = Model::new(
        config.model.clone(),
        config.centroid_init_scale,
        sigma0,
        gamma_at(config, 0),
        flags,
        seed,
    )?;
    let stride = model.stride();

    let images: Vec<VectorGrid> = dataset.scenes.iter().map(|s| s.to_image()).collect();
    let targets: Vec<GroundTruthHeatmaps> = dataset
        .scenes
        .iter()
        .zip(&images)
        .map(|(s, img)| {
            let grid = model.extractor.output_shape(img.height(), img.width());
            splat_ground_truth(&s.boxes(), dataset.num_classes(), grid, stride)
        })
        .collect::<Result<_>>()?;

    let mut state = TrainState {
        step: 0,
        epoch: 0,
        sigma: sigma0,
        gamma: gamma_at(config, 0),
        optimizer: Adam::new(&model),
        seed,
    };
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f72_6465_72);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut outliers = 0usize;

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        state.gamma = gamma_at(config, epoch);
        let lr = config.learning_rate_at(epoch);
        let frozen = flags.freeze_final && epoch >= config.epochs - config.freeze_epochs;
        let epoch_start = model.centroids.centroids.clone();
        order.shuffle(&mut order_rng);
        let (mut det_sum, mut reg_sum, mut dims_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);

        for batch in order.chunks(config.batch_size) {
            state.sigma = sigma_at(config, state.step);
            model.centroids.length_scale = state.sigma;
            model.centroids.momentum = state.gamma;
            let inv_b = 1.0 / batch.len() as f64;
            let reg_norm: f64 = if flags.use_reg_loss {
                batch.iter().map(|&i| targets[i].weight_sum(config.lambda)).sum()
            } else {
                0.0
            };
            let mut grads = Gradients::zeros_like(&model);
            let mut acc = CentroidAccumulator::new(
                &model.centroids,
                config.lambda,
                state.sigma,
                flags.outlier_protection,
                flags.balanced_update,
            );
            let (mut det_b, mut reg_b, mut dims_b) = (0.0, 0.0, 0.0);
            for &i in batch {
                let gt = &targets[i];
                let tr = model.forward_trace(&images[i])?;
                let out = &tr.outputs;
                let (det, mut g_scores) = detection_loss(&out.class_heatmaps, &gt.heatmaps, config.positive_weight)?;
                g_scores.iter_mut().for_each(|g| g.as_mut_slice().iter_mut().for_each(|v| *v *= inv_b));
                let g_emb = if flags.use_reg_loss {
                    let (reg, mut g) = regularization_loss_normalized(
                        &out.embedding_maps,
                        &model.centroids,
                        &gt.heatmaps,
                        config.lambda,
                        reg_norm,
                    )?;
                    reg_b += reg;
                    g.iter_mut()
                        .for_each(|m| m.as_mut_slice().iter_mut().for_each(|v| *v *= config.reg_weight));
                    Some(g)
                } else {
                    None
                };
                let (dl, mut g_dims) = dims_loss(&out.dims_map, &gt.dims_targets, &gt.center_mask)?;
                g_dims.as_mut_slice().iter_mut().for_each(|v| *v *= config.dims_weight * inv_b);
                det_b += det * inv_b;
                dims_b += dl * inv_b;
                model.backward(&tr, &g_scores, g_emb.as_deref(), &g_dims, &mut grads, frozen);
                acc.add(&model.centroids, &out.embedding_maps, &gt.heatmaps);
            }
            let total = det_b + config.reg_weight * reg_b + config.dims_weight * dims_b;
            finite_or_diverged(total, "total loss", &state)?;
            if grads.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged {
                    epoch,
                    step: state.step as usize,
                    detail: "non-finite gradient".into(),
                });
            }
            state.optimizer.step(&mut model, &grads, lr, |group| {
                !frozen || group == ParamGroup::Projection
            });
            outliers += acc.excluded();
            model.centroids = acc.finish(&model.centroids, state.gamma, state.sigma);
            state.step += 1;
            det_sum += det_b;
            reg_sum += reg_b;
            dims_sum += dims_b;
            batches += 1;
        }

        // The stored length scale is the one the next step would use.
        state.sigma = sigma_at(config, state.step);
        model.centroids.length_scale = state.sigma;
        let drift = epoch_start
            .iter()
            .zip(&model.centroids.centroids)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .sum::<f64>()
            / epoch_start.len() as f64;
        let nb = batches.max(1) as f64;
        let row = TraceRow {
            epoch,
            step: state.step,
            det_loss: det_sum / nb,
            reg_loss: reg_sum / nb,
            dims_loss: dims_sum / nb,
            sigma: state.sigma,
            gamma: state.gamma,
            centroid_drift: drift,
        };
        log::info!(
            "epoch {epoch}: det {:.5} reg {:.5} dims {:.3} sigma {:.4} gamma {} drift {:.4}{}",
            row.det_loss,
            row.reg_loss,
            row.dims_loss,
            row.sigma,
            row.gamma,
            row.centroid_drift,
            if frozen { " (backbone frozen)" } else { "" }
        );
        trace.push(row);
    }

    Ok(TrainOutcome {
        model,
        trace,
        flags,
        outliers_excluded: outliers,
    })
}
