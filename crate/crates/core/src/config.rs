//! Run configuration. Every section has defaults, unknown keys are rejected
//! and [`RunConfig::validate`] runs before any work touches the disk.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::teachers::TeacherKind;

/// Which parts of the selective knowledge transfer are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Experts, top-k gating, fusion and distillation.
    #[default]
    Full,
    /// Gating replaced by uniform dense weights.
    NoSelection,
    /// Distillation losses dropped, fusion kept.
    NoDistillation,
    /// Distillation kept, expert features not fused back.
    NoFusion,
    /// Plain context network.
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoSelection,
        Ablation::NoDistillation,
        Ablation::NoFusion,
        Ablation::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSelection => "no_selection",
            Ablation::NoDistillation => "no_distillation",
            Ablation::NoFusion => "no_fusion",
            Ablation::Baseline => "baseline",
        }
    }

    pub fn has_experts(self) -> bool {
        self != Ablation::Baseline
    }

    pub fn distills(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoSelection | Ablation::NoFusion)
    }

    pub fn fuses(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoSelection | Ablation::NoDistillation)
    }

    /// Learned top-k gates (as opposed to uniform or none).
    pub fn learned_gates(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoDistillation)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Ablation::ALL.iter().map(|a| a.as_str()).collect();
                Error::Config(format!("unknown ablation `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root; manifests are `train.json` and `val.json` inside it.
    pub dir: PathBuf,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Largest layer disparity in full-resolution pixels.
    pub d_max: usize,
    pub density: f64,
    pub n_train: usize,
    pub n_val: usize,
    /// Number of foreground layers per scene, drawn from `1..=max_layers`.
    pub max_layers: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            seed: 0,
            height: 48,
            width: 96,
            d_max: 8,
            density: 0.5,
            n_train: 64,
            n_val: 16,
            max_layers: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature-network stem and second-stage widths.
    pub feature_widths: [usize; 2],
    pub feature_channels: usize,
    /// Context stem width `C_0`.
    pub context_stem: usize,
    /// Context block widths `C_1..C_3`.
    pub context_widths: [usize; 3],
    pub hidden: usize,
    /// Correlation depth at quarter resolution.
    pub max_disp: usize,
    pub radius: usize,
    pub levels: usize,
    pub train_iters: usize,
    pub eval_iters: usize,
    pub top_k: usize,
    pub teachers: Vec<TeacherKind>,
    /// Channel count `C_t` of every teacher map.
    pub teacher_channels: usize,
    pub ablation: Ablation,
    /// Directory of precomputed FTC teacher maps; synthetic teachers otherwise.
    pub teacher_dir: Option<PathBuf>,
    pub teacher_seed: u64,
    pub depth_noise: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_widths: [32, 48],
            feature_channels: 64,
            context_stem: 32,
            context_widths: [32, 48, 64],
            hidden: 64,
            max_disp: 16,
            radius: 4,
            levels: 4,
            train_iters: 8,
            eval_iters: 16,
            top_k: 2,
            teachers: TeacherKind::DEFAULT.to_vec(),
            teacher_channels: crate::teachers::SYNTH_CHANNELS,
            ablation: Ablation::Full,
            teacher_dir: None,
            teacher_seed: 0,
            depth_noise: crate::teachers::DEPTH_NOISE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma_p: f64,
    pub gamma_kd: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma_p: 0.9,
            gamma_kd: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub steps: usize,
    /// Samples accumulated per optimizer step.
    pub batch: usize,
    pub peak_lr: f64,
    pub warm_frac: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Peak learning-rate multiplier of the alignment group.
    pub align_lr_mult: f64,
    /// Half-life of the alignment group's extra decay, as a fraction of training.
    pub align_half_life: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            steps: 500,
            batch: 2,
            peak_lr: 2e-4,
            warm_frac: 0.01,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            align_lr_mult: 3.0,
            align_half_life: 0.1,
            grad_clip: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Validation probe cadence in steps; 0 probes only at the start and end.
    pub probe_every: usize,
    /// Number of validation samples in the fixed probe.
    pub probe_samples: usize,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            probe_every: 100,
            probe_samples: 8,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.density > 0.0 && self.density <= 1.0, || {
            format!("data.density must lie in (0, 1], got {}", self.density)
        })?;
        check(self.d_max <= 64, || format!("data.d_max must be at most 64, got {}", self.d_max))?;
        check(self.height > 0 && self.height.is_multiple_of(4) && self.width > 0 && self.width.is_multiple_of(4), || {
            format!("data size {}x{} must be positive multiples of 4", self.height, self.width)
        })?;
        check(self.d_max < self.width, || "data.d_max must be smaller than the width".into())?;
        check(self.max_layers >= 1, || "data.max_layers must be at least 1".into())?;
        Ok(())
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self
            .feature_widths
            .iter()
            .chain(&self.context_widths)
            .chain([&self.feature_channels, &self.context_stem, &self.hidden, &self.teacher_channels]);
        for &w in widths {
            check(w > 0, || "model widths must be positive".into())?;
        }
        check(self.hidden > 1, || "model.hidden must exceed 1".into())?;
        check(self.max_disp >= 1, || "model.max_disp must be at least 1".into())?;
        check(self.radius >= 1, || "model.radius must be at least 1".into())?;
        check(self.levels >= 1, || "model.levels must be at least 1".into())?;
        check(self.train_iters >= 1 && self.eval_iters >= 1, || "iteration counts must be at least 1".into())?;
        check(!self.teachers.is_empty(), || "model.teachers must not be empty".into())?;
        let mut seen = self.teachers.clone();
        seen.sort();
        seen.dedup();
        check(seen.len() == self.teachers.len(), || "model.teachers contains duplicates".into())?;
        check(self.top_k >= 1 && self.top_k <= self.teachers.len(), || {
            format!("model.top_k must lie in 1..={}, got {}", self.teachers.len(), self.top_k)
        })?;
        if self.teacher_dir.is_none() {
            for t in &self.teachers {
                check(!matches!(t, TeacherKind::Custom(_)), || {
                    format!("teacher `{t}` has no synthetic emulator; set model.teacher_dir")
                })?;
            }
            check(self.teacher_channels == crate::teachers::SYNTH_CHANNELS, || {
                format!(
                    "synthetic teachers produce {} channels but model.teacher_channels is {}",
                    crate::teachers::SYNTH_CHANNELS,
                    self.teacher_channels
                )
            })?;
        }
        check(self.depth_noise >= 0.0 && self.depth_noise.is_finite(), || "model.depth_noise must be >= 0".into())?;
        Ok(())
    }

    /// Digest of everything that determines the parameter layout and the
    /// forward computation.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model config serialises");
        hex(&Sha256::digest(&json))
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("gamma_p", self.gamma_p), ("gamma_kd", self.gamma_kd)] {
            check(g > 0.0 && g < 1.0, || format!("loss.{name} must lie in (0, 1), got {g}"))?;
        }
        Ok(())
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.batch >= 1, || "optim.batch must be at least 1".into())?;
        check(self.peak_lr > 0.0, || "optim.peak_lr must be positive".into())?;
        check((0.0..1.0).contains(&self.warm_frac), || "optim.warm_frac must lie in [0, 1)".into())?;
        check(self.weight_decay >= 0.0, || "optim.weight_decay must be >= 0".into())?;
        check((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), || {
            "optim betas must lie in [0, 1)".into()
        })?;
        check(self.eps > 0.0, || "optim.eps must be positive".into())?;
        check(self.align_lr_mult > 1.0, || "optim.align_lr_mult must exceed 1".into())?;
        check(self.grad_clip >= 0.0 && self.grad_clip.is_finite(), || "optim.grad_clip must be finite and >= 0".into())?;
        check(self.align_half_life > 0.0, || "optim.align_half_life must be positive".into())?;
        Ok(())
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        check(
            self.model.max_disp <= self.data.width / 4,
            || format!("model.max_disp {} exceeds width/4 = {}", self.model.max_disp, self.data.width / 4),
        )?;
        check(self.train.probe_samples >= 1, || "train.probe_samples must be at least 1".into())?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
