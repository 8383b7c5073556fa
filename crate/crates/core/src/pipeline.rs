//! Coarse-to-fine toy pipeline.
//!
//! Scale `s` takes the previous scale's dense output, nearest-upsamples it to
//! `h_s x w_s`, adds the conditioning field for that resolution, and runs the
//! transformer over it while attending to the cached keys/values of earlier
//! scales. A pruned scale runs the transformer over the selected tokens only
//! and rebuilds the dense map afterwards; a skipped scale (ratio 1) just
//! forwards the upsampled previous output.

use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::scale_flops;
use crate::grid::{FeatureGrid, SparseTokens};
use crate::model::{seed_token, KvCache, ToyModel};
use crate::recovery::{
    anchor_copy, anchor_grid, cache_upsample, force_include, nearest_assignment, nn_propagate,
    scatter_onto, RecoveryKind, RecoveryStrategy,
};
use crate::scene::Scene;
use crate::scoring::{select_with, PruneParams, Strategy};

/// Per-scale strength of the conditioning field.
pub const CONDITION_AMPLITUDE: f64 = 0.5;

/// Side lengths of the default schedule (1 to 1024 tokens).
pub const DEFAULT_SIDES: [usize; 8] = [1, 2, 4, 8, 12, 16, 24, 32];

/// Pruning ratios applied to the last four scales in the standard
/// aggressive configuration; the last two scales are skipped.
pub const LAST_FOUR_RATIOS: [f64; 4] = [0.4, 0.5, 1.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSpec {
    pub strategy: Strategy,
    pub recovery: RecoveryStrategy,
    /// `params.ratio` is the scale's pruning ratio; 1.0 skips the scale.
    pub params: PruneParams,
}

impl Default for PruneSpec {
    fn default() -> Self {
        Self::dense()
    }
}

impl PruneSpec {
    pub fn dense() -> Self {
        Self {
            strategy: Strategy::None,
            recovery: RecoveryStrategy::default(),
            params: PruneParams::default(),
        }
    }

    pub fn new(strategy: Strategy, ratio: f64) -> Self {
        Self {
            strategy,
            recovery: RecoveryStrategy::default(),
            params: PruneParams::with_ratio(ratio),
        }
    }

    pub fn with_recovery(mut self, kind: RecoveryKind) -> Self {
        self.recovery.kind = kind;
        self
    }

    pub fn ratio(&self) -> f64 {
        self.params.ratio
    }

    pub fn is_skip(&self) -> bool {
        self.params.ratio >= 1.0
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.recovery.validate()?;
        if self.strategy == Strategy::None && self.params.ratio != 0.0 {
            return Err(Error::Param(format!(
                "strategy none requires ratio 0, got {}",
                self.params.ratio
            )));
        }
        Ok(())
    }
}

/// Which tokens of a pruned scale enter the attention cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Only the processed (kept) tokens.
    #[default]
    KeptOnly,
    /// Every position, with pruned ones taking the keys/values of their
    /// nearest kept token.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub scales: Vec<(usize, usize)>,
    pub prune: Vec<PruneSpec>,
    pub cache_mode: CacheMode,
}

impl ScaleSchedule {
    /// Square scales with the given side lengths, all dense.
    pub fn from_sides(sides: &[usize]) -> Result<Self> {
        Self::new(sides.iter().map(|&s| (s, s)).collect())
    }

    pub fn new(scales: Vec<(usize, usize)>) -> Result<Self> {
        let s = Self {
            prune: vec![PruneSpec::dense(); scales.len()],
            scales,
            cache_mode: CacheMode::KeptOnly,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn default_toy() -> Self {
        Self::from_sides(&DEFAULT_SIDES).expect("default schedule is valid")
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    /// Applies `template` with the given ratios to the last `ratios.len()`
    /// scales.
    pub fn with_last_ratios(mut self, ratios: &[f64], template: PruneSpec) -> Result<Self> {
        if ratios.len() > self.len() {
            return Err(Error::Param(format!(
                "{} ratios for {} scales",
                ratios.len(),
                self.len()
            )));
        }
        let start = self.len() - ratios.len();
        for (spec, &r) in self.prune[start..].iter_mut().zip(ratios) {
            *spec = PruneSpec {
                params: PruneParams {
                    ratio: r,
                    ..template.params
                },
                ..template
            };
        }
        self.validate()?;
        Ok(self)
    }

    pub fn dense(&self) -> Self {
        Self {
            prune: vec![PruneSpec::dense(); self.len()],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Empty("scale schedule"));
        }
        if self.prune.len() != self.scales.len() {
            return Err(Error::Param(format!(
                "{} prune specs for {} scales",
                self.prune.len(),
                self.scales.len()
            )));
        }
        for (i, &(h, w)) in self.scales.iter().enumerate() {
            if h == 0 || w == 0 {
                return Err(Error::Shape(format!(
                    "scale {} has empty shape {h}x{w}",
                    i + 1
                )));
            }
            if i > 0 {
                let (ph, pw) = self.scales[i - 1];
                if h < ph || w < pw {
                    return Err(Error::Shape(format!(
                        "scale {} ({h}x{w}) is smaller than scale {} ({ph}x{pw})",
                        i + 1,
                        i
                    )));
                }
            }
        }
        for (i, spec) in self.prune.iter().enumerate() {
            spec.validate().map_err(|e| e.at_scale(i + 1))?;
        }
        if self.prune[0].is_skip() {
            return Err(Error::Param("the first scale cannot be skipped".into()).at_scale(1));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInjection {
    /// 1-based scale whose output is perturbed.
    pub scale: usize,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub input_seed: u64,
    pub batch: usize,
    pub noise: Option<NoiseInjection>,
    /// Ignore every prune spec.
    pub force_dense: bool,
}

impl RunOptions {
    pub fn new(input_seed: u64) -> Self {
        Self {
            input_seed,
            batch: 1,
            noise: None,
            force_dense: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTrace {
    pub scale: usize,
    pub height: usize,
    pub width: usize,
    pub tokens: usize,
    /// Tokens processed by the transformer (0 for skipped scales).
    pub kept: usize,
    pub skipped: bool,
    pub cache_len: usize,
    pub flops: u64,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    /// Dense output of every scale.
    pub outputs: Vec<FeatureGrid>,
    pub trace: Vec<ScaleTrace>,
    /// Kept token indices of every pruned scale (empty for dense or skipped).
    pub selections: Vec<Vec<Vec<usize>>>,
}

impl PipelineRun {
    pub fn final_output(&self) -> &FeatureGrid {
        self.outputs.last().expect("schedules are non-empty")
    }

    pub fn total_flops(&self) -> u64 {
        self.trace.iter().map(|t| t.flops).sum()
    }

    pub fn total_wall_ns(&self) -> u64 {
        self.trace.iter().map(|t| t.wall_ns).sum()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Selection seed for one scale of one run.
pub fn scale_seed(rng_seed: u64, input_seed: u64, scale: usize) -> u64 {
    splitmix(rng_seed ^ splitmix(input_seed) ^ splitmix(scale as u64).rotate_left(17))
}

fn add_rows(base: &FeatureGrid, rows: &[Array2<f64>]) -> Result<FeatureGrid> {
    let mut data = base.data().clone();
    for (b, r) in rows.iter().enumerate() {
        let mut dst = data.index_axis_mut(Axis(0), b);
        dst += r;
    }
    FeatureGrid::new(data, base.height(), base.width())
}

struct Runner<'a> {
    model: &'a ToyModel,
    schedule: &'a ScaleSchedule,
    opts: RunOptions,
    scenes: Vec<Scene>,
    caches: Vec<KvCache>,
    cache_len: usize,
}

impl Runner<'_> {
    fn scale_input(&self, prev: Option<&FeatureGrid>, h: usize, w: usize) -> Result<FeatureGrid> {
        let c = self.model.channels();
        let base = match prev {
            Some(p) => cache_upsample(p, (h, w))?,
            None => {
                let rows: Vec<Array2<f64>> = (0..self.opts.batch)
                    .map(|b| {
                        let t = seed_token(self.opts.input_seed, b, c);
                        t.broadcast((h * w, c)).expect("broadcast token").to_owned()
                    })
                    .collect();
                FeatureGrid::stack(&rows, h, w)?
            }
        };
        let cond: Vec<Array2<f64>> = self.scenes.iter().map(|s| s.render(h, w)).collect();
        add_rows(&base, &cond)
    }

    fn dense_step(&mut self, x: &FeatureGrid) -> Result<FeatureGrid> {
        let mut rows = Vec::with_capacity(x.batch());
        for b in 0..x.batch() {
            let (y, kv) = self.model.forward(x.row(b), &self.caches[b])?;
            self.caches[b].append(&kv);
            rows.push(y);
        }
        FeatureGrid::stack(&rows, x.height(), x.width())
    }

    fn pruned_step(
        &mut self,
        scale: usize,
        spec: &PruneSpec,
        x: &FeatureGrid,
        prev: Option<&FeatureGrid>,
    ) -> Result<(FeatureGrid, Vec<Vec<usize>>)> {
        let (h, w) = (x.height(), x.width());
        let params = PruneParams {
            rng_seed: scale_seed(spec.params.rng_seed, self.opts.input_seed, scale),
            ..spec.params
        };
        let (mut sparse, scores) = select_with(spec.strategy, x, &params)?;
        let anchors = if spec.recovery.kind == RecoveryKind::AnchorCopy {
            let a = anchor_grid(h, w, spec.recovery.anchor_stride)?;
            sparse = force_include(x, &sparse, &scores, &a)?;
            a
        } else {
            Vec::new()
        };

        let (k, c) = (sparse.kept_count(), x.channels());
        let mut processed = Array3::zeros((x.batch(), k, c));
        for b in 0..x.batch() {
            let (y, kv) = self.model.forward(sparse.row(b), &self.caches[b])?;
            let kv = match self.schedule.cache_mode {
                CacheMode::KeptOnly => kv,
                CacheMode::Dense => {
                    kv.select(&nearest_assignment(h, w, &sparse.kept_indices()[b])?)
                }
            };
            self.caches[b].append(&kv);
            processed.index_axis_mut(Axis(0), b).assign(&y);
        }
        let processed: SparseTokens = sparse.with_data(processed)?;

        let dense = match spec.recovery.kind {
            RecoveryKind::NearestNeighbor => nn_propagate(&processed)?,
            RecoveryKind::CacheUpsample => {
                let base = match prev {
                    Some(p) => cache_upsample(p, (h, w))?,
                    None => x.clone(),
                };
                scatter_onto(&base, &processed)?
            }
            RecoveryKind::AnchorCopy => anchor_copy(&processed, &anchors)?,
        };
        Ok((dense, processed.kept_indices().to_vec()))
    }

    fn run(mut self) -> Result<PipelineRun> {
        let mut outputs: Vec<FeatureGrid> = Vec::with_capacity(self.schedule.len());
        let mut trace = Vec::with_capacity(self.schedule.len());
        let mut selections = Vec::with_capacity(self.schedule.len());
        let cfg = *self.model.config();
        for (i, (&(h, w), spec)) in self
            .schedule
            .scales
            .iter()
            .zip(&self.schedule.prune)
            .enumerate()
        {
            let scale = i + 1;
            let spec = if self.opts.force_dense {
                PruneSpec::dense()
            } else {
                *spec
            };
            let cache_before = self.cache_len;
            let start = Instant::now();
            let prev = outputs.last();
            let (out, kept, sel) = if spec.is_skip() {
                let p = prev.expect("validated: first scale is never skipped");
                (
                    cache_upsample(p, (h, w)).map_err(|e| e.at_scale(scale))?,
                    0,
                    Vec::new(),
                )
            } else {
                let x = self
                    .scale_input(prev, h, w)
                    .map_err(|e| e.at_scale(scale))?;
                if spec.strategy == Strategy::None {
                    let y = self.dense_step(&x).map_err(|e| e.at_scale(scale))?;
                    (y, h * w, Vec::new())
                } else {
                    let (y, sel) = self
                        .pruned_step(scale, &spec, &x, prev)
                        .map_err(|e| e.at_scale(scale))?;
                    (y, sel[0].len(), sel)
                }
            };
            let wall_ns = start.elapsed().as_nanos() as u64;
            self.cache_len += match (kept, self.schedule.cache_mode) {
                (0, _) => 0,
                (k, CacheMode::KeptOnly) => k,
                (_, CacheMode::Dense) => h * w,
            };

            let out = match self.opts.noise {
                Some(n) if n.scale == scale && n.sigma > 0.0 => add_noise(&out, n)?,
                _ => out,
            };
            trace.push(ScaleTrace {
                scale,
                height: h,
                width: w,
                tokens: h * w,
                kept,
                skipped: spec.is_skip(),
                cache_len: cache_before,
                flops: scale_flops(&cfg, kept as u64, cache_before as u64, 0),
                wall_ns,
            });
            outputs.push(out);
            selections.push(sel);
        }
        Ok(PipelineRun {
            outputs,
            trace,
            selections,
        })
    }
}

fn add_noise(x: &FeatureGrid, noise: NoiseInjection) -> Result<FeatureGrid> {
    let dist = Normal::new(0.0, noise.sigma)
        .map_err(|e| Error::Param(format!("noise sigma {}: {e}", noise.sigma)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut data = x.data().clone();
    data.iter_mut().for_each(|v| *v += dist.sample(&mut rng));
    FeatureGrid::new(data, x.height(), x.width())
}

/// Runs the schedule with the given options.
pub fn run(model: &ToyModel, schedule: &ScaleSchedule, opts: RunOptions) -> Result<PipelineRun> {
    schedule.validate()?;
    if opts.batch == 0 {
        return Err(Error::Param("batch must be at least 1".into()));
    }
    if let Some(n) = opts.noise {
        if n.scale == 0 || n.scale > schedule.len() {
            return Err(Error::Param(format!(
                "noise scale {} outside 1..={}",
                n.scale,
                schedule.len()
            )));
        }
        if !(n.sigma.is_finite() && n.sigma >= 0.0) {
            return Err(Error::Param(format!(
                "noise sigma must be >= 0, got {}",
                n.sigma
            )));
        }
    }
    let c = model.channels();
    Runner {
        model,
        schedule,
        scenes: (0..opts.batch)
            .map(|b| Scene::generate(opts.input_seed, b, c, CONDITION_AMPLITUDE))
            .collect(),
        caches: (0..opts.batch).map(|_| model.empty_cache()).collect(),
        cache_len: 0,
        opts,
    }
    .run()
}

/// Dense reference run; prune specs in `schedule` are ignored.
pub fn run_dense(
    model: &ToyModel,
    schedule: &ScaleSchedule,
    input_seed: u64,
) -> Result<Vec<FeatureGrid>> {
    let opts = RunOptions {
        force_dense: true,
        ..RunOptions::new(input_seed)
    };
    Ok(run(model, schedule, opts)?.outputs)
}

/// Run honoring every prune spec.
pub fn run_pruned(
    model: &ToyModel,
    schedule: &ScaleSchedule,
    input_seed: u64,
) -> Result<PipelineRun> {
    run(model, schedule, RunOptions::new(input_seed))
}

/// Dense run with Gaussian noise added to one scale's output; returns the
/// final-scale output.
pub fn inject_noise(
    model: &ToyModel,
    schedule: &ScaleSchedule,
    input_seed: u64,
    noise: NoiseInjection,
) -> Result<FeatureGrid> {
    let opts = RunOptions {
        force_dense: true,
        noise: Some(noise),
        ..RunOptions::new(input_seed)
    };
    Ok(run(model, schedule, opts)?
        .outputs
        .pop()
        .expect("non-empty schedule"))
}
