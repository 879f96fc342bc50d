//! Experiment configuration and the flat `key = value` config file format.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use oclsim::intensity::ShiftConfig;
use oclsim::stream::{Generator, TrainVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Er,
    Derpp,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "er" => Ok(Method::Er),
            "derpp" => Ok(Method::Derpp),
            other => bail!("unknown method '{other}' (expected er|derpp)"),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Er => "er",
            Method::Derpp => "derpp",
        }
    }
}

/// How the feature-dropping path runs: fully adaptive, disabled, or one of
/// the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropMode {
    /// Fused attention, adaptive intensity, hard masks.
    On,
    /// No dropping at all; the baseline method.
    Off,
    /// Hard masks at the fixed initial intensity (no adaptive shifting).
    Fixed,
    /// Uniformly random cells, same total count (no attention).
    Random,
    /// Adaptive intensity with the soft rank-scaled mask.
    Soft,
    /// Adaptive, but attention from the last feature map alone (no fusion).
    NoFusion,
}

impl DropMode {
    pub fn parse(s: &str) -> Result<DropMode> {
        match s {
            "on" => Ok(DropMode::On),
            "off" => Ok(DropMode::Off),
            "fixed" => Ok(DropMode::Fixed),
            "random" => Ok(DropMode::Random),
            "soft" => Ok(DropMode::Soft),
            "no_fusion" => Ok(DropMode::NoFusion),
            other => bail!("unknown droptop mode '{other}' (expected on|off|fixed|random|soft|no_fusion)"),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DropMode::On => "on",
            DropMode::Off => "off",
            DropMode::Fixed => "fixed",
            DropMode::Random => "random",
            DropMode::Soft => "soft",
            DropMode::NoFusion => "no_fusion",
        }
    }

    /// Whether the per-class intensity controller runs.
    pub fn adaptive(self) -> bool {
        matches!(self, DropMode::On | DropMode::Soft | DropMode::NoFusion)
    }

    /// Whether any masking happens at all.
    pub fn masking(self) -> bool {
        self != DropMode::Off
    }
}

/// Stream settings without the per-run seed (that derives from the run seed).
#[derive(Debug, Clone)]
pub struct StreamSettings {
    pub generator: Generator,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub bias_ratio: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone)]
pub struct BackboneSettings {
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub method: Method,
    pub droptop: DropMode,
    pub stream: StreamSettings,
    pub shift: ShiftConfig,
    pub backbone: BackboneSettings,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub lr: f64,
    pub derpp_distill_coef: f64,
    pub derpp_mem_ce_coef: f64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Mid-task evaluation cadence in iterations; 0 disables it.
    pub eval_every: usize,
    pub dump_masks: bool,
    pub train_variant: TrainVariant,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Er,
            droptop: DropMode::On,
            stream: StreamSettings {
                generator: Generator::ColorShortcut,
                num_tasks: 2,
                classes_per_task: 2,
                samples_per_class: 250,
                image_size: 32,
                bias_ratio: 0.95,
                noise_std: 0.02,
            },
            shift: ShiftConfig::default(),
            backbone: BackboneSettings { stem_channels: 16, block_channels: vec![32, 64] },
            batch_size: 32,
            memory_capacity: 500,
            lr: 0.1,
            derpp_distill_coef: 0.2,
            derpp_mem_ce_coef: 0.5,
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs/out"),
            eval_every: 0,
            dump_masks: false,
            train_variant: TrainVariant::Full,
        }
    }
}

impl ExperimentConfig {
    pub fn total_classes(&self) -> usize {
        self.stream.num_tasks * self.stream.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!("batch_size must be at least 1");
        }
        if self.lr <= 0.0 {
            bail!("lr must be positive");
        }
        if self.derpp_distill_coef < 0.0 || self.derpp_mem_ce_coef < 0.0 {
            bail!("loss coefficients must be nonnegative");
        }
        self.shift.validate().map_err(|e| anyhow::anyhow!("{e}"))?;
        if self.train_variant != TrainVariant::Full
            && self.stream.generator != Generator::PatchBackground
        {
            bail!("train_variant requires the patch_background generator");
        }
        Ok(())
    }

    /// Loads a flat `key = value` file; `#` starts a comment, unknown keys
    /// are rejected.
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected 'key = value'", lineno + 1))?;
            config
                .apply(key.trim(), value.trim())
                .with_context(|| format!("line {}: '{}'", lineno + 1, raw.trim()))?;
        }
        Ok(config)
    }

    /// Applies one key/value pair (also used by CLI overrides).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "method" => self.method = Method::parse(value)?,
            "droptop" => self.droptop = DropMode::parse(value)?,
            "generator" => {
                self.stream.generator = match value {
                    "color_shortcut" => Generator::ColorShortcut,
                    "patch_background" => Generator::PatchBackground,
                    other => bail!("unknown generator '{other}'"),
                }
            }
            "num_tasks" => self.stream.num_tasks = value.parse()?,
            "classes_per_task" => self.stream.classes_per_task = value.parse()?,
            "samples_per_class" => self.stream.samples_per_class = value.parse()?,
            "image_size" => self.stream.image_size = value.parse()?,
            "bias_ratio" => self.stream.bias_ratio = value.parse()?,
            "noise_std" => self.stream.noise_std = value.parse()?,
            "stem_channels" => self.backbone.stem_channels = value.parse()?,
            "block_channels" => {
                self.backbone.block_channels = parse_list(value)?;
                if self.backbone.block_channels.is_empty() {
                    bail!("block_channels must not be empty");
                }
            }
            "batch_size" => self.batch_size = value.parse()?,
            "memory_capacity" => self.memory_capacity = value.parse()?,
            "lr" => self.lr = value.parse()?,
            "derpp_distill_coef" => self.derpp_distill_coef = value.parse()?,
            "derpp_mem_ce_coef" => self.derpp_mem_ce_coef = value.parse()?,
            "kappa0" => self.shift.kappa0 = value.parse()?,
            "gamma" => self.shift.gamma = value.parse()?,
            "alpha" => self.shift.alpha = value.parse()?,
            "period" => self.shift.period = value.parse()?,
            "history_len" => self.shift.history_len = value.parse()?,
            "significance" => self.shift.significance = value.parse()?,
            "seeds" => self.seeds = parse_list(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "eval_every" => self.eval_every = value.parse()?,
            "dump_masks" => self.dump_masks = value.parse()?,
            "train_variant" => {
                self.train_variant = match value {
                    "full" => TrainVariant::Full,
                    "only_fg" => TrainVariant::OnlyForeground,
                    "only_bg" => TrainVariant::OnlyBackground,
                    other => bail!("unknown train_variant '{other}'"),
                }
            }
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    value
        .split(',')
        .map(|part| part.trim().parse::<T>().map_err(Into::into))
        .collect::<Result<Vec<T>>>()
}
