use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use certainnet_core::formats::read_detections;
use certainnet_core::metrics::mean_u_obj;
use certainnet_core::synthdata::load_dataset;
use certainnet_core::{evaluate, Detection, EvalConfig, EvalReport, GroundTruth};
use clap::Args;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::manifest::{to_value, RunClock};
use crate::util::{create_dir, read_toml, write_file};

pub const SHIFT_SUMMARY_NAME: &str = "shift_summary.toml";

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections (JSON Lines) to evaluate.
    #[arg(long)]
    pub detections: PathBuf,
    /// Dataset directory holding the ground truth.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Eval config (TOML); individual flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "iou-thresh")]
    pub iou_thresh: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub boundary_scale: Option<f64>,
    /// 11-point interpolated AP instead of all-point.
    #[arg(long)]
    pub eleven_point: bool,
    /// Detections on a shifted split; reports the mean U_obj delta.
    #[arg(long)]
    pub shifted: Option<PathBuf>,
    /// Ground truth for `--shifted`; defaults to `--data`.
    #[arg(long)]
    pub shifted_data: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ShiftSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    in_domain_mean_u_obj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shifted_mean_u_obj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_u_obj_delta: Option<f64>,
    in_domain_detections: usize,
    shifted_detections: usize,
}

fn ground_truths(data: &Path) -> CliResult<(Vec<GroundTruth>, BTreeSet<u64>)> {
    let ds = load_dataset(data)?;
    let ids = ds.scenes.iter().map(|s| s.image_id).collect();
    let gts = ds
        .scenes
        .iter()
        .flat_map(|s| {
            s.objects.iter().map(move |o| GroundTruth {
                image_id: s.image_id,
                class: o.class,
                bbox: o.bbox,
            })
        })
        .collect();
    Ok((gts, ids))
}

fn check_ids(dets: &[Detection], ids: &BTreeSet<u64>, det_path: &Path, data: &Path) -> CliResult<()> {
    let unknown: BTreeSet<u64> = dets.iter().map(|d| d.image_id).filter(|i| !ids.contains(i)).collect();
    if unknown.is_empty() {
        return Ok(());
    }
    let listed: Vec<String> = unknown.iter().take(20).map(u64::to_string).collect();
    Err(CliError::Data(format!(
        "{} references {} image id(s) missing from {}: {}{}",
        det_path.display(),
        unknown.len(),
        data.display(),
        listed.join(", "),
        if unknown.len() > 20 { ", ..." } else { "" }
    )))
}

fn evaluate_file(det_path: &Path, data: &Path, cfg: &EvalConfig) -> CliResult<(EvalReport, Vec<Detection>)> {
    let dets = read_detections(det_path)?;
    let (gts, ids) = ground_truths(data)?;
    check_ids(&dets, &ids, det_path, data)?;
    Ok((evaluate(&dets, &gts, cfg)?, dets))
}

pub fn run(args: &EvalArgs) -> CliResult<()> {
    let mut clock = RunClock::start();
    let mut cfg: EvalConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => EvalConfig::default(),
    };
    if let Some(v) = args.iou_thresh {
        cfg.iou_threshold = v;
    }
    if let Some(v) = args.bins {
        cfg.bins = v;
    }
    if let Some(v) = args.boundary_scale {
        cfg.boundary_scale = v;
    }
    cfg.eleven_point |= args.eleven_point;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let (report, dets) = evaluate_file(&args.detections, &args.data, &cfg)?;
    create_dir(&args.out)?;
    report.write_to_dir(&args.out)?;
    let mut inputs = vec![args.detections.clone(), args.data.clone()];
    let mut outputs = vec![args.out.join("report.toml")];
    log::info!("AP {:?}, {:?}", report.ap, report.counts);

    if let Some(shifted) = &args.shifted {
        let data = args.shifted_data.as_ref().unwrap_or(&args.data);
        let (shift_report, shift_dets) = evaluate_file(shifted, data, &cfg)?;
        let dir = args.out.join("shifted");
        shift_report.write_to_dir(&dir)?;
        let (a, b) = (mean_u_obj(&dets), mean_u_obj(&shift_dets));
        let summary = ShiftSummary {
            in_domain_mean_u_obj: a,
            shifted_mean_u_obj: b,
            mean_u_obj_delta: a.zip(b).map(|(a, b)| b - a),
            in_domain_detections: dets.len(),
            shifted_detections: shift_dets.len(),
        };
        let p = args.out.join(SHIFT_SUMMARY_NAME);
        let body = toml::to_string(&summary).map_err(|e| CliError::Data(e.to_string()))?;
        write_file(&p, &body)?;
        log::info!("mean U_obj delta {:?}", summary.mean_u_obj_delta);
        inputs.push(shifted.clone());
        inputs.push(data.clone());
        outputs.push(dir.join("report.toml"));
        outputs.push(p);
    }
    clock.lap("eval");
    inputs.extend(args.config.clone());
    clock.finish("eval", to_value(&cfg), None, inputs, outputs).write(&args.out)
}
