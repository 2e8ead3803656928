use std::collections::BTreeSet;
use std::path::PathBuf;

use certainnet_core::synthdata::{generate_dataset, save_dataset, shift_dataset};
use certainnet_core::{SceneConfig, ShiftConfig};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{to_value, RunClock};
use crate::util::{create_dir, read_toml};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthesis config (TOML): a `[scene]` table and `[[splits]]` entries.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; one dataset directory is written per split.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `scene.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub name: String,
    /// Index of the first scene; scenes with the same index are identical.
    #[serde(default)]
    pub start: u64,
    pub count: usize,
    /// Applied to the generated scenes when present.
    #[serde(default)]
    pub shift: Option<ShiftConfig>,
    /// Seed for the shift noise; defaults to the scene seed.
    #[serde(default)]
    pub shift_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default)]
    pub scene: SceneConfig,
    pub splits: Vec<SplitSpec>,
}

impl SynthConfig {
    fn validate(&self) -> CliResult<()> {
        if self.splits.is_empty() {
            return Err(CliError::Usage("synth config lists no splits".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.splits {
            let ok = !s.name.is_empty() && s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(CliError::Usage(format!("split name {:?} must be [A-Za-z0-9_-]+", s.name)));
            }
            if !seen.insert(s.name.as_str()) {
                return Err(CliError::Usage(format!("split {:?} listed twice", s.name)));
            }
        }
        Ok(())
    }
}

pub fn run(args: &SynthArgs) -> CliResult<()> {
    let mut clock = RunClock::start();
    let mut cfg: SynthConfig = read_toml(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.scene.seed = seed;
    }
    cfg.validate()?;
    create_dir(&args.out)?;
    let mut outputs = Vec::new();
    for split in &cfg.splits {
        let mut ds = generate_dataset(&cfg.scene, split.start, split.count)?;
        if let Some(shift) = &split.shift {
            ds = shift_dataset(&ds, shift, split.shift_seed.unwrap_or(cfg.scene.seed))?;
        }
        let dir = args.out.join(&split.name);
        save_dataset(&ds, &dir)?;
        log::info!("wrote {} scenes to {}", ds.len(), dir.display());
        outputs.push(dir);
        clock.lap(&split.name);
    }
    clock
        .finish("synth", to_value(&cfg), Some(cfg.scene.seed), vec![args.config.clone()], outputs)
        .write(&args.out)
}
