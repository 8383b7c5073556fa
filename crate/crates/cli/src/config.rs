//! Experiment configuration, read from TOML. Every section and field is
//! optional; see `docs/config.md` for the schema.

use std::fmt;
use std::path::{Path, PathBuf};

use scaleprune_core::pipeline::{DEFAULT_SIDES, LAST_FOUR_RATIOS};
use scaleprune_core::{
    CacheMode, ModelConfig, PruneParams, PruneSpec, RecoveryKind, RecoveryStrategy, ScaleSchedule,
    Strategy,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config error at `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self::Invalid {
            field: field.into(),
            message: message.to_string(),
        }
    }

    /// Dotted path of the offending field, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Invalid { field, .. } => Some(field),
            Self::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub prune: PruneConfig,
    pub seeds: SeedConfig,
    pub timing: TimingConfig,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
    pub ablate: AblateConfig,
    pub sensitivity: SensitivityConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Square scales by side length. Ignored when `scales` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sides: Option<Vec<usize>>,
    /// Explicit `[height, width]` pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<[usize; 2]>>,
    pub cache_mode: CacheMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub strategy: Strategy,
    pub recovery: RecoveryKind,
    pub anchor_stride: usize,
    pub w_str: f64,
    pub power_iters: usize,
    pub rng_seed: u64,
    /// One ratio per scale.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
    /// Ratios for the last scales; earlier scales run dense. When neither
    /// list is given, `[0.4, 0.5, 1.0, 1.0]` is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last_ratios: Option<Vec<f64>>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        let p = PruneParams::default();
        Self {
            strategy: Strategy::StructureTexture,
            recovery: RecoveryKind::NearestNeighbor,
            anchor_stride: RecoveryStrategy::default().anchor_stride,
            w_str: p.w_str,
            power_iters: p.power_iters,
            rng_seed: p.rng_seed,
            ratios: None,
            last_ratios: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    /// Input seeds; each one is a separate batch-1 run.
    pub inputs: Vec<u64>,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            inputs: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub warmup: usize,
    /// Timed repetitions; 0 disables timing and all wall-clock fields are 0.
    pub repeats: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            warmup: 2,
            repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub masks: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            masks: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    /// How many trailing scales get the swept ratio.
    pub stages: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.0, 0.3, 0.5, 0.7, 0.9],
            stages: vec![2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub strategies: Vec<Strategy>,
    pub recoveries: Vec<RecoveryKind>,
    pub ratio: f64,
    pub stages: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::PRUNING.to_vec(),
            recoveries: RecoveryKind::ALL.to_vec(),
            ratio: 0.7,
            stages: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    pub sigmas: Vec<f64>,
    pub noise_seed: u64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.1],
            noise_seed: 1000,
        }
    }
}

fn check_ratio(field: String, r: f64, allow_skip: bool) -> Result<(), ConfigError> {
    let hi_ok = if allow_skip { r <= 1.0 } else { r < 1.0 };
    if !(r.is_finite() && r >= 0.0 && hi_ok) {
        let range = if allow_skip { "[0, 1]" } else { "[0, 1)" };
        return Err(ConfigError::invalid(
            field,
            format!("ratio {r} outside {range}"),
        ));
    }
    Ok(())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let message = e.inner().message().trim().to_string();
            ConfigError::invalid(field, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model
            .validate()
            .map_err(|e| ConfigError::invalid("model", e))?;
        let scales = self.scales();
        let n = scales.len();
        let field = if self.schedule.scales.is_some() {
            "schedule.scales"
        } else {
            "schedule.sides"
        };
        ScaleSchedule::new(scales).map_err(|e| ConfigError::invalid(field, e))?;

        let p = &self.prune;
        if p.ratios.is_some() && p.last_ratios.is_some() {
            return Err(ConfigError::invalid(
                "prune.ratios",
                "set either `ratios` or `last_ratios`, not both",
            ));
        }
        let (name, list) = match (&p.ratios, &p.last_ratios) {
            (Some(r), _) => ("prune.ratios", r.as_slice()),
            (_, Some(r)) => ("prune.last_ratios", r.as_slice()),
            _ => ("prune.last_ratios", &LAST_FOUR_RATIOS[..]),
        };
        if p.ratios.is_some() && list.len() != n {
            return Err(ConfigError::invalid(
                name,
                format!("{} ratios for {n} scales", list.len()),
            ));
        }
        if list.len() > n {
            return Err(ConfigError::invalid(
                name,
                format!("{} ratios for {n} scales", list.len()),
            ));
        }
        for (i, &r) in list.iter().enumerate() {
            check_ratio(format!("{name}[{i}]"), r, true)?;
        }
        if p.strategy == Strategy::None && list.iter().any(|&r| r != 0.0) {
            return Err(ConfigError::invalid(
                "prune.strategy",
                "strategy `none` only allows ratio 0",
            ));
        }
        if p.anchor_stride == 0 {
            return Err(ConfigError::invalid(
                "prune.anchor_stride",
                "must be at least 1",
            ));
        }
        if p.power_iters == 0 {
            return Err(ConfigError::invalid(
                "prune.power_iters",
                "must be at least 1",
            ));
        }
        if !p.w_str.is_finite() {
            return Err(ConfigError::invalid("prune.w_str", "must be finite"));
        }
        self.schedule()?;

        if self.seeds.inputs.is_empty() {
            return Err(ConfigError::invalid(
                "seeds.inputs",
                "at least one seed is required",
            ));
        }
        for (i, &r) in self.sweep.ratios.iter().enumerate() {
            check_ratio(format!("sweep.ratios[{i}]"), r, false)?;
        }
        for (i, &s) in self.sweep.stages.iter().enumerate() {
            if s == 0 || s > n {
                return Err(ConfigError::invalid(
                    format!("sweep.stages[{i}]"),
                    format!("must be in 1..={n}"),
                ));
            }
        }
        if let Some(i) = self
            .ablate
            .strategies
            .iter()
            .position(|&s| s == Strategy::None)
        {
            return Err(ConfigError::invalid(
                format!("ablate.strategies[{i}]"),
                "`none` is not a pruning strategy",
            ));
        }
        check_ratio("ablate.ratio".into(), self.ablate.ratio, false)?;
        if self.ablate.stages == 0 || self.ablate.stages > n {
            return Err(ConfigError::invalid(
                "ablate.stages",
                format!("must be in 1..={n}"),
            ));
        }
        for (i, &s) in self.sensitivity.sigmas.iter().enumerate() {
            if !(s.is_finite() && s >= 0.0) {
                return Err(ConfigError::invalid(
                    format!("sensitivity.sigmas[{i}]"),
                    format!("sigma {s} must be finite and non-negative"),
                ));
            }
        }
        Ok(())
    }

    pub fn scales(&self) -> Vec<(usize, usize)> {
        match (&self.schedule.scales, &self.schedule.sides) {
            (Some(s), _) => s.iter().map(|&[h, w]| (h, w)).collect(),
            (None, Some(sides)) => sides.iter().map(|&s| (s, s)).collect(),
            (None, None) => DEFAULT_SIDES.iter().map(|&s| (s, s)).collect(),
        }
    }

    /// Dense schedule with the configured cache mode.
    pub fn dense_schedule(&self) -> ScaleSchedule {
        let mut s = ScaleSchedule::new(self.scales()).expect("validated scales");
        s.cache_mode = self.schedule.cache_mode;
        s
    }

    /// Prune spec with the configured strategy and parameters at `ratio`.
    pub fn template(&self, strategy: Strategy, recovery: RecoveryKind, ratio: f64) -> PruneSpec {
        let p = &self.prune;
        PruneSpec {
            strategy,
            recovery: RecoveryStrategy {
                kind: recovery,
                anchor_stride: p.anchor_stride,
            },
            params: PruneParams {
                ratio,
                w_str: p.w_str,
                power_iters: p.power_iters,
                rng_seed: p.rng_seed,
            },
        }
    }

    /// The configured pruned schedule.
    pub fn schedule(&self) -> Result<ScaleSchedule, ConfigError> {
        let p = &self.prune;
        let template = self.template(p.strategy, p.recovery, 0.0);
        let base = self.dense_schedule();
        match &p.ratios {
            Some(all) => {
                let mut s = base;
                for (i, (spec, &r)) in s.prune.iter_mut().zip(all).enumerate() {
                    // ratio 0 under a real strategy still runs selection, keeping every token
                    *spec = PruneSpec {
                        params: PruneParams {
                            ratio: r,
                            ..template.params
                        },
                        ..template
                    };
                    spec.validate()
                        .map_err(|e| ConfigError::invalid(format!("prune.ratios[{i}]"), e))?;
                }
                s.validate()
                    .map_err(|e| ConfigError::invalid("prune.ratios", e))?;
                Ok(s)
            }
            None => {
                let last = p.last_ratios.as_deref().unwrap_or(&LAST_FOUR_RATIOS);
                base.with_last_ratios(last, template)
                    .map_err(|e| ConfigError::invalid("prune.last_ratios", e))
            }
        }
    }

    /// Dense schedule with the last `stages` scales pruned at `ratio`.
    pub fn staged_schedule(
        &self,
        strategy: Strategy,
        recovery: RecoveryKind,
        ratio: f64,
        stages: usize,
    ) -> scaleprune_core::Result<ScaleSchedule> {
        self.dense_schedule()
            .with_last_ratios(&vec![ratio; stages], self.template(strategy, recovery, 0.0))
    }
}
