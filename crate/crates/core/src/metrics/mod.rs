//! Detection and uncertainty evaluation.
//!
//! Every metric is reported as a percentage. Metrics that are undefined for
//! the input (no ground truths, a single correctness class) come back as
//! `None` and are omitted from the written report.

mod boundary;
mod calibration;
mod matching;
mod ranking;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::{BoundarySignal, Detection};
use crate::error::{Error, Result};

pub use boundary::{ubq, BoundaryQuality};
pub use calibration::{calibration_error, ece, reliability_bins, uncertainty_error, ReliabilityBin, Signal};
pub use matching::{iou, match_detections, GroundTruth, MatchResult, MatchedPair};
pub use ranking::{aupr_in, aupr_out, auroc, average_precision_from_hits, pr_curve, roc_curve, PrPoint, RocPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub bins: usize,
    /// `k` used to build inner/outer boxes for UBQ.
    pub boundary_scale: f64,
    pub eleven_point: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            bins: 10,
            boundary_scale: 1.0,
            eleven_point: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidArgument(format!("iou threshold {} outside (0, 1]", self.iou_threshold)));
        }
        if self.bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        if !(self.boundary_scale >= 0.0 && self.boundary_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("boundary scale {} must be finite and >= 0", self.boundary_scale)));
        }
        Ok(())
    }
}

/// Per-class AP (mean over classes that have ground truths).
pub fn average_precision(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    iou_threshold: f64,
    eleven_point: bool,
) -> Option<f64> {
    let m = match_detections(detections, ground_truths, iou_threshold);
    per_class_ap(detections, ground_truths, &m, eleven_point).1
}

fn per_class_ap(
    detections: &[Detection],
    ground_truths: &[GroundTruth],
    m: &MatchResult,
    eleven_point: bool,
) -> (BTreeMap<usize, f64>, Option<f64>) {
    let mut gt_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for g in ground_truths {
        *gt_counts.entry(g.class).or_default() += 1;
    }
    let mut per_class = BTreeMap::new();
    for (&class, &n) in &gt_counts {
        let (scores, hits): (Vec<f64>, Vec<bool>) = detections
            .iter()
            .zip(&m.matched)
            .filter(|(d, _)| d.class == class)
            .map(|(d, &hit)| (d.score, hit))
            .unzip();
        if let Some(ap) = average_precision_from_hits(&scores, &hits, n, eleven_point) {
            per_class.insert(class, ap);
        }
    }
    let mean = if per_class.is_empty() {
        None
    } else {
        Some(per_class.values().sum::<f64>() / per_class.len() as f64)
    };
    (per_class, mean)
}

/// Mean boundary quality over matched pairs, as (UBQ, BR) percentages.
pub fn boundary_quality(pairs: &[(&Detection, &GroundTruth)], signal: BoundarySignal, k: f64) -> Result<Option<(f64, f64)>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let (mut u, mut b) = (0.0, 0.0);
    for (d, g) in pairs {
        let (inner, outer) = d.boundaries(signal, k);
        let q = ubq(&g.bbox, &inner, &outer)?;
        u += q.ubq;
        b += q.br;
    }
    let n = pairs.len() as f64;
    Ok(Some((u / n * 100.0, b / n * 100.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub detections: usize,
    pub ground_truths: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub ap: Option<f64>,
    pub aupr_in: Option<f64>,
    pub aupr_out: Option<f64>,
    pub auroc: Option<f64>,
    pub ece: f64,
    pub ue: f64,
    pub ce_loc: Option<f64>,
    pub ce_dims: Option<f64>,
    pub ubq_loc: Option<f64>,
    pub br_loc: Option<f64>,
    pub ubq_dims: Option<f64>,
    pub br_dims: Option<f64>,
    /// Mean objectness uncertainty over all detections.
    pub mean_u_obj: Option<f64>,
    pub counts: Counts,
    /// Keyed by class index.
    pub per_class_ap: BTreeMap<String, f64>,
    #[serde(skip)]
    pub pr_curve: Vec<PrPoint>,
    #[serde(skip)]
    pub reliability: Vec<ReliabilityBin>,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

/// Mean `u_obj`, `None` for an empty list.
pub fn mean_u_obj(detections: &[Detection]) -> Option<f64> {
    if detections.is_empty() {
        None
    } else {
        Some(detections.iter().map(|d| d.u_obj).sum::<f64>() / detections.len() as f64)
    }
}

/// Matches once, then computes every metric on that matching.
pub fn evaluate(detections: &[Detection], ground_truths: &[GroundTruth], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    let m = match_detections(detections, ground_truths, config.iou_threshold);
    let (per_class, ap) = per_class_ap(detections, ground_truths, &m, config.eleven_point);

    let scores: Vec<f64> = detections.iter().map(|d| d.score).collect();
    let u_obj: Vec<f64> = detections.iter().map(|d| d.u_obj).collect();
    let correct = &m.matched;
    let pairs: Vec<(&Detection, &GroundTruth)> = m
        .pairs
        .iter()
        .map(|p| (&detections[p.detection], &ground_truths[p.ground_truth]))
        .collect();

    let loc = boundary_quality(&pairs, BoundarySignal::Location, config.boundary_scale)?;
    let dims = boundary_quality(&pairs, BoundarySignal::Dimensions, config.boundary_scale)?;

    Ok(EvalReport {
        iou_threshold: config.iou_threshold,
        ap,
        aupr_in: aupr_in(&scores, correct),
        aupr_out: aupr_out(&scores, correct),
        auroc: auroc(&scores, correct),
        ece: ece(&scores, correct, config.bins)?,
        ue: uncertainty_error(&u_obj, correct)?,
        ce_loc: calibration_error(&pairs, Signal::Location),
        ce_dims: calibration_error(&pairs, Signal::Dims),
        ubq_loc: loc.map(|v| v.0),
        br_loc: loc.map(|v| v.1),
        ubq_dims: dims.map(|v| v.0),
        br_dims: dims.map(|v| v.1),
        mean_u_obj: mean_u_obj(detections),
        counts: Counts {
            detections: detections.len(),
            ground_truths: ground_truths.len(),
            true_positives: m.true_positives(),
            false_positives: m.false_positives.len(),
            false_negatives: m.false_negatives.len(),
        },
        per_class_ap: per_class.into_iter().map(|(c, v)| (c.to_string(), v)).collect(),
        pr_curve: pr_curve(&scores, correct, ground_truths.len()),
        reliability: reliability_bins(&scores, correct, config.bins)?,
        roc: roc_curve(&scores, correct),
    })
}

impl EvalReport {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("cannot serialize report: {e}")))
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut s = String::from("recall,precision\n");
        for p in &self.pr_curve {
            let _ = writeln!(s, "{},{}", p.recall, p.precision);
        }
        s
    }

    pub fn reliability_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count,mean_score,accuracy\n");
        for b in &self.reliability {
            let _ = writeln!(s, "{},{},{},{},{}", b.bin_low, b.bin_high, b.count, b.mean_score, b.accuracy);
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for p in &self.roc {
            let _ = writeln!(s, "{},{}", p.fpr, p.tpr);
        }
        s
    }

    /// Writes `report.toml`, `pr_curve.csv`, `reliability.csv` and `roc.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("report.toml", self.to_toml_string()?),
            ("pr_curve.csv", self.pr_curve_csv()),
            ("reliability.csv", self.reliability_csv()),
            ("roc.csv", self.roc_csv()),
        ];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
