use std::path::PathBuf;

use certainnet_core::model::save_checkpoint;
use certainnet_core::synthdata::load_dataset;
use certainnet_core::training::{train, write_trace_csv};
use certainnet_core::{Ablation, TrainConfig};
use clap::Args;

use crate::error::{CliError, CliResult};
use crate::manifest::{to_value, RunClock};
use crate::util::{create_dir, read_toml};

pub const CHECKPOINT_NAME: &str = "model.ckpt";
pub const TRACE_NAME: &str = "trace.csv";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Training config (TOML). Built-in desk defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation level A0..A6; replaces the config's feature flags.
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the checkpoint, trace and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let mut clock = RunClock::start();
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => TrainConfig::default(),
    };
    if let Some(a) = args.ablation {
        cfg.flags = a.flags();
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = load_dataset(&args.data)?;
    clock.lap("load");
    log::info!(
        "training on {} scenes, flags [{}], seed {}",
        data.len(),
        cfg.flags.active_names().join(", "),
        args.seed
    );
    let outcome = train(&data, &cfg, args.seed)?;
    clock.lap("train");
    create_dir(&args.out)?;
    let ckpt = args.out.join(CHECKPOINT_NAME);
    let trace = args.out.join(TRACE_NAME);
    save_checkpoint(&outcome.model, &ckpt)?;
    write_trace_csv(&outcome.trace, &trace)?;
    let mut inputs = vec![args.data.clone()];
    inputs.extend(args.config.clone());
    let resolved = serde_json::json!({
        "train": to_value(&cfg),
        "ablation": args.ablation.map(|a| a.to_string()),
    });
    clock
        .finish("train", resolved, Some(args.seed), inputs, vec![ckpt, trace])
        .write(&args.out)
}
