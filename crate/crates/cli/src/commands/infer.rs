use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use certainnet_core::formats::{read_heatmap_dumps, write_detections, write_heatmap_dumps, HeatmapDump};
use certainnet_core::model::load_checkpoint;
use certainnet_core::synthdata::load_dataset;
use certainnet_core::{decode, decode_maps, DecodeConfig, Detection};
use clap::Args;

use crate::error::{CliError, CliResult};
use crate::manifest::{to_value, RunClock};
use crate::util::{create_dir, read_toml, write_file};

pub const DETECTIONS_NAME: &str = "detections.jsonl";
pub const LATENCY_NAME: &str = "latency.csv";
pub const DUMP_NAME: &str = "heatmaps.jsonl";

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Model checkpoint. Not needed when `--input` is a heatmap dump.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// A dataset directory, or a heatmap dump file for decode-only mode.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Decode config (TOML); individual flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub boundary_scale: Option<f64>,
    #[arg(long)]
    pub peak_threshold: Option<f64>,
    /// Also write the raw heatmaps as a dump that `infer` can read back.
    #[arg(long)]
    pub export_dump: bool,
}

pub fn run(args: &InferArgs) -> CliResult<()> {
    let mut clock = RunClock::start();
    let mut cfg: DecodeConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => DecodeConfig::default(),
    };
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.boundary_scale {
        cfg.boundary_scale = v;
    }
    if let Some(v) = args.peak_threshold {
        cfg.peak_threshold = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut detections: Vec<Detection> = Vec::new();
    let mut latency = String::from("image_id,ms\n");
    let mut dumps = Vec::new();
    let mut inputs = vec![args.input.clone()];
    let post_hoc = args.input.is_file();
    if post_hoc {
        if args.export_dump {
            return Err(CliError::Usage("--export-dump needs a dataset input".into()));
        }
        for d in read_heatmap_dumps(&args.input)? {
            let t = Instant::now();
            let (heatmaps, dims) = d.to_grids()?;
            detections.extend(decode_maps(d.image_id, &heatmaps, &dims, d.stride, &cfg)?);
            let _ = writeln!(latency, "{},{:.3}", d.image_id, t.elapsed().as_secs_f64() * 1e3);
        }
    } else {
        let ckpt = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| CliError::Usage("--checkpoint is required for dataset input".into()))?;
        inputs.push(ckpt.clone());
        let model = load_checkpoint(ckpt)?;
        let data = load_dataset(&args.input)?;
        if data.num_classes() != model.config.num_classes {
            return Err(CliError::Data(format!(
                "checkpoint {} has {} classes but dataset {} has {}",
                ckpt.display(),
                model.config.num_classes,
                args.input.display(),
                data.num_classes()
            )));
        }
        clock.lap("load");
        for scene in &data.scenes {
            let t = Instant::now();
            let out = model.forward(&scene.to_image())?;
            detections.extend(decode(scene.image_id, &out, &cfg)?);
            let _ = writeln!(latency, "{},{:.3}", scene.image_id, t.elapsed().as_secs_f64() * 1e3);
            if args.export_dump {
                dumps.push(HeatmapDump::from_outputs(scene.image_id, &out));
            }
        }
    }
    clock.lap("infer");
    create_dir(&args.out)?;
    let det_path = args.out.join(DETECTIONS_NAME);
    let lat_path = args.out.join(LATENCY_NAME);
    write_detections(&det_path, &detections)?;
    write_file(&lat_path, &latency)?;
    let mut outputs = vec![det_path, lat_path];
    if args.export_dump {
        let p = args.out.join(DUMP_NAME);
        write_heatmap_dumps(&p, &dumps)?;
        outputs.push(p);
    }
    log::info!("{} detections written", detections.len());
    let resolved = serde_json::json!({ "decode": to_value(&cfg), "post_hoc": post_hoc });
    inputs.extend(args.config.clone());
    clock.finish("infer", resolved, None, inputs, outputs).write(&args.out)
}
