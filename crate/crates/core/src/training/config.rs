use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Switches for each training-time stabilization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureFlags {
    /// Add the hyperspace regularization loss.
    pub use_reg_loss: bool,
    /// Per-minibatch normalized centroid update instead of count-scaled
    /// running averages.
    pub balanced_update: bool,
    /// Drop embeddings further than 3 sigma from their centroid from the
    /// centroid update.
    pub outlier_protection: bool,
    /// Step the centroid momentum up at scheduled epochs.
    pub momentum_schedule: bool,
    /// Start from a large length scale and decay it per step.
    pub sigma_annealing: bool,
    /// Train only the hyperspace projection during the final epochs.
    pub freeze_final: bool,
}

impl Default for FeatureFlags {
    fn default() -> Self {
        Self::all()
    }
}

impl FeatureFlags {
    pub const fn all() -> Self {
        FeatureFlags {
            use_reg_loss: true,
            balanced_update: true,
            outlier_protection: true,
            momentum_schedule: true,
            sigma_annealing: true,
            freeze_final: true,
        }
    }

    pub const fn none() -> Self {
        FeatureFlags {
            use_reg_loss: false,
            balanced_update: false,
            outlier_protection: false,
            momentum_schedule: false,
            sigma_annealing: false,
            freeze_final: false,
        }
    }

    pub fn active_names(&self) -> Vec<&'static str> {
        [
            (self.use_reg_loss, "use_reg_loss"),
            (self.balanced_update, "balanced_update"),
            (self.outlier_protection, "outlier_protection"),
            (self.momentum_schedule, "momentum_schedule"),
            (self.sigma_annealing, "sigma_annealing"),
            (self.freeze_final, "freeze_final"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect()
    }
}

/// Cumulative ablation presets: A0 is the plain dense adaptation, each later
/// preset switches on one more stabilization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    A0,
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::A0,
        Ablation::A1,
        Ablation::A2,
        Ablation::A3,
        Ablation::A4,
        Ablation::A5,
        Ablation::A6,
    ];

    pub fn flags(self) -> FeatureFlags {
        let level = self as u8;
        FeatureFlags {
            use_reg_loss: level >= 1,
            balanced_update: level >= 2,
            outlier_protection: level >= 3,
            momentum_schedule: level >= 4,
            sigma_annealing: level >= 5,
            freeze_final: level >= 6,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Ablation::A0 => "dense adaptation, no stabilization",
            Ablation::A1 => "A0 + hyperspace regularization",
            Ablation::A2 => "A1 + balanced centroid update",
            Ablation::A3 => "A2 + outlier protection",
            Ablation::A4 => "A3 + momentum scheduling",
            Ablation::A5 => "A4 + length scale annealing",
            Ablation::A6 => "A5 + frozen backbone for the final epochs",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}", *self as u8)
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation {s:?}, expected A0..A6")))
    }
}

/// Training hyperparameters. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub flags: FeatureFlags,
    /// Exponent on ground-truth heatmap values in the centroid update and
    /// the hyperspace regularizer.
    pub lambda: f64,
    /// `(epoch, momentum)` pairs, epochs strictly increasing. With momentum
    /// scheduling off, the first entry is used throughout.
    pub momentum_schedule: Vec<(usize, f64)>,
    pub sigma_init: f64,
    pub sigma_min: f64,
    /// Multiplicative length-scale decay per optimizer step.
    pub sigma_decay: f64,
    /// Standard deviation multiplier for the initial centroids.
    pub centroid_init_scale: f64,
    pub reg_weight: f64,
    pub dims_weight: f64,
    /// Weight on heatmap cells with target >= 0.5 in the detection loss.
    pub positive_weight: f64,
    pub learning_rate: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Number of final epochs during which only the projection trains.
    pub freeze_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Full-scale schedule: 70 epochs plus 10 for the objectness head,
    /// learning rate 1.25e-4 decayed x0.1 after epochs 45 and 60.
    pub fn full() -> Self {
        TrainConfig {
            model: ModelConfig {
                hyperspace_dim: 512,
                ..ModelConfig::default()
            },
            flags: FeatureFlags::all(),
            lambda: 20.0,
            momentum_schedule: vec![(0, 0.9), (5, 0.99), (20, 0.999), (60, 0.9999)],
            sigma_init: 0.25,
            sigma_min: 0.05,
            sigma_decay: 0.999,
            centroid_init_scale: 0.25,
            reg_weight: 1e-2,
            dims_weight: 0.2,
            positive_weight: 10.0,
            learning_rate: 1.25e-4,
            lr_decay_epochs: vec![45, 60],
            lr_decay_factor: 0.1,
            batch_size: 16,
            epochs: 80,
            freeze_epochs: 10,
        }
    }

    /// Desk-scale schedule for the synthetic benchmark: the epoch anchors of
    /// the full schedule compressed to a short run, a smaller hyperspace and
    /// a learning rate suited to the small backbone.
    pub fn desk() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            momentum_schedule: vec![(0, 0.9), (1, 0.99), (4, 0.999), (10, 0.9999)],
            learning_rate: 2e-3,
            lr_decay_epochs: vec![16, 22],
            epochs: 28,
            freeze_epochs: 2,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if !(self.lambda >= 1.0) {
            return bad("lambda must be >= 1");
        }
        if self.momentum_schedule.is_empty() {
            return bad("momentum schedule must not be empty");
        }
        if self.momentum_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("momentum schedule epochs must be strictly increasing");
        }
        if self.momentum_schedule.iter().any(|&(_, g)| !(g > 0.0 && g < 1.0)) {
            return bad("momentum values must lie in (0, 1)");
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_init) {
            return bad("need 0 < sigma_min <= sigma_init");
        }
        if !(self.sigma_decay > 0.0 && self.sigma_decay < 1.0) {
            return bad("sigma_decay must lie in (0, 1)");
        }
        for (name, v) in [
            ("reg_weight", self.reg_weight),
            ("dims_weight", self.dims_weight),
            ("positive_weight", self.positive_weight),
            ("centroid_init_scale", self.centroid_init_scale),
            ("lr_decay_factor", self.lr_decay_factor),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if self.freeze_epochs > self.epochs {
            return bad("freeze_epochs cannot exceed epochs");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    /// Learning rate in effect during `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }
}
