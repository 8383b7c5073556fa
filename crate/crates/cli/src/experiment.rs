//! Experiment drivers behind the CLI subcommands.
//!
//! Fidelity work (independent seeds and strategy cells) runs on the rayon
//! pool. Timed runs are always sequential so they do not compete for cores.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scaleprune_core::flops::flop_count;
use scaleprune_core::pipeline::run;
use scaleprune_core::timing::median;
use scaleprune_core::{
    inject_noise, psnr, run_dense, run_pruned, ssim, Error as CoreError, FeatureGrid,
    NoiseInjection, RunOptions, ScaleSchedule, ToyModel,
};

use crate::config::{Config, ConfigError};
use crate::mask::{export_mask, MaskError};
use crate::report::*;

/// One exported selection.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEntry {
    pub label: String,
    pub seed: u64,
    pub scale: usize,
    pub shape: (usize, usize),
    pub kept: Vec<usize>,
}

impl MaskEntry {
    pub fn file_stem(&self) -> String {
        format!("{}seed{}_scale{}", self.label, self.seed, self.scale)
    }
}

pub struct RunOutput {
    pub report: RunReport,
    pub masks: Vec<MaskEntry>,
}

pub struct Experiment {
    config: Config,
    model: ToyModel,
}

fn masks_of(
    label: &str,
    seed: u64,
    schedule: &ScaleSchedule,
    sel: &[Vec<Vec<usize>>],
) -> Vec<MaskEntry> {
    sel.iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(i, rows)| MaskEntry {
            label: label.to_string(),
            seed,
            scale: i + 1,
            shape: schedule.scales[i],
            kept: rows[0].clone(),
        })
        .collect()
}

/// Label prefix for a swept ratio, e.g. `r070_`.
pub fn ratio_label(r: f64) -> String {
    format!("r{:03}_", (r * 100.0).round() as u32)
}

pub fn write_masks(dir: &Path, masks: &[MaskEntry]) -> Result<Vec<PathBuf>, MaskError> {
    let mut written = Vec::with_capacity(2 * masks.len());
    for m in masks {
        let (pgm, csv) = export_mask(&m.kept, m.shape, &dir.join("masks").join(m.file_stem()))?;
        written.push(pgm);
        written.push(csv);
    }
    Ok(written)
}

impl Experiment {
    pub fn new(config: Config) -> Result<Self, ConfigError> {
        config.validate()?;
        let model = ToyModel::new(config.model).expect("validated model config");
        Ok(Self { config, model })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn model(&self) -> &ToyModel {
        &self.model
    }

    fn seeds(&self) -> &[u64] {
        &self.config.seeds.inputs
    }

    /// Per-scale wall time: for every repetition the seeds' times are summed,
    /// and each scale reports the median over repetitions. All zero when
    /// timing is disabled.
    pub fn time_scales(
        &self,
        schedule: &ScaleSchedule,
        force_dense: bool,
    ) -> Result<Vec<u64>, CoreError> {
        let n = schedule.len();
        let t = self.config.timing;
        if t.repeats == 0 {
            return Ok(vec![0; n]);
        }
        let mut samples = vec![Vec::with_capacity(t.repeats); n];
        for rep in 0..t.warmup + t.repeats {
            let mut per = vec![0u64; n];
            for &seed in self.seeds() {
                let opts = RunOptions {
                    force_dense,
                    ..RunOptions::new(seed)
                };
                for tr in run(&self.model, schedule, opts)?.trace {
                    per[tr.scale - 1] += tr.wall_ns;
                }
            }
            if rep >= t.warmup {
                for (s, v) in samples.iter_mut().zip(per) {
                    s.push(v);
                }
            }
        }
        Ok(samples.iter_mut().map(|s| median(s)).collect())
    }

    /// Final dense output for every seed.
    pub fn dense_references(&self) -> Result<Vec<FeatureGrid>, CoreError> {
        let schedule = self.config.dense_schedule();
        self.seeds()
            .par_iter()
            .map(|&s| run_dense(&self.model, &schedule, s).map(|mut o| o.pop().expect("non-empty")))
            .collect()
    }

    /// Pruned runs for every seed, scored against `refs`.
    fn fidelity(
        &self,
        schedule: &ScaleSchedule,
        refs: &[FeatureGrid],
        label: &str,
    ) -> Result<(Fidelity, Vec<MaskEntry>), ErrorRecord> {
        let per: Vec<Result<(SeedFidelity, Vec<MaskEntry>), ErrorRecord>> = self
            .seeds()
            .par_iter()
            .zip(refs)
            .map(|(&seed, reference)| {
                let wrap = |e: CoreError| ErrorRecord::new(Some(seed), &e);
                let out = run_pruned(&self.model, schedule, seed).map_err(wrap)?;
                let fid = SeedFidelity {
                    seed,
                    psnr_db: psnr(reference, out.final_output()).map_err(wrap)?,
                    ssim: ssim(reference, out.final_output()).map_err(wrap)?,
                };
                Ok((fid, masks_of(label, seed, schedule, &out.selections)))
            })
            .collect();
        let mut seeds = Vec::with_capacity(per.len());
        let mut masks = Vec::new();
        for r in per {
            let (f, m) = r?;
            seeds.push(f);
            masks.extend(m);
        }
        Ok((Fidelity::from_seeds(seeds), masks))
    }

    /// Dense reference plus the configured pruned schedule. Runtime failures
    /// are recorded in the report instead of aborting it.
    pub fn run(&self) -> RunOutput {
        let cfg = &self.config;
        let dense = cfg.dense_schedule();
        let pruned = cfg.schedule().expect("validated schedule");
        let fd = flop_count(&dense, &cfg.model).expect("validated schedule");
        let fp = flop_count(&pruned, &cfg.model).expect("validated schedule");

        let mut error = None;
        let mut fidelity = None;
        let mut masks = Vec::new();
        match self.dense_references() {
            Err(e) => error = Some(ErrorRecord::new(None, &e)),
            Ok(refs) => match self.fidelity(&pruned, &refs, "") {
                Ok((f, m)) => {
                    fidelity = Some(f);
                    masks = m;
                }
                Err(e) => error = Some(e),
            },
        }

        let n = pruned.len();
        let (mut wall, mut dense_wall) = (vec![0; n], vec![0; n]);
        if error.is_none() {
            let timed = self
                .time_scales(&dense, true)
                .and_then(|d| Ok((d, self.time_scales(&pruned, false)?)));
            match timed {
                Ok((d, p)) => {
                    dense_wall = d;
                    wall = p;
                }
                Err(e) => error = Some(ErrorRecord::new(None, &e)),
            }
        }

        let scales: Vec<ScaleRecord> = (0..n)
            .map(|i| {
                let (p, d) = (&fp.scales[i], &fd.scales[i]);
                ScaleRecord {
                    scale: i + 1,
                    height: pruned.scales[i].0,
                    width: pruned.scales[i].1,
                    tokens: p.tokens,
                    kept: p.processed,
                    skipped: pruned.prune[i].is_skip(),
                    cache_len: p.cache_len,
                    flops: p.flops,
                    dense_flops: d.flops,
                    wall_ns: wall[i],
                    dense_wall_ns: dense_wall[i],
                }
            })
            .collect();
        let report = RunReport {
            config: cfg.clone(),
            seeds: self.seeds().to_vec(),
            totals: Totals::from_scales(&scales),
            scales,
            fidelity,
            error,
        };
        RunOutput { report, masks }
    }

    /// Ratio x stage grid with the configured strategy and recovery.
    pub fn sweep(&self) -> Result<SweepReport, ErrorRecord> {
        let cfg = &self.config;
        let dense = cfg.dense_schedule();
        let dense_flops = flop_count(&dense, &cfg.model).expect("validated").total;
        let refs = self
            .dense_references()
            .map_err(|e| ErrorRecord::new(None, &e))?;
        let dense_wall: u64 = self
            .time_scales(&dense, true)
            .map_err(|e| ErrorRecord::new(None, &e))?
            .iter()
            .sum();
        let mut rows = Vec::new();
        for &stages in &cfg.sweep.stages {
            for &ratio in &cfg.sweep.ratios {
                let wrap = |e: CoreError| ErrorRecord::new(None, &e);
                let s = cfg
                    .staged_schedule(cfg.prune.strategy, cfg.prune.recovery, ratio, stages)
                    .map_err(wrap)?;
                let f = flop_count(&s, &cfg.model).map_err(wrap)?;
                let (fid, _) = self.fidelity(&s, &refs, "")?;
                let wall: u64 = self.time_scales(&s, false).map_err(wrap)?.iter().sum();
                rows.push(SweepRow {
                    stages,
                    ratio,
                    processed_tokens: f.scales.iter().map(|s| s.processed).sum(),
                    flops: f.total,
                    analytic_speedup: dense_flops as f64 / f.total as f64,
                    wall_ns: wall,
                    wall_speedup: ratio_opt(dense_wall, wall),
                    psnr_db: fid.psnr_db,
                    ssim: fid.ssim,
                });
            }
        }
        Ok(self.table("sweep", rows))
    }

    /// Strategy x recovery matrix at a fixed ratio.
    pub fn ablate(&self) -> Result<AblateReport, ErrorRecord> {
        let cfg = &self.config;
        let a = &cfg.ablate;
        let dense_flops = flop_count(&cfg.dense_schedule(), &cfg.model)
            .expect("validated")
            .total;
        let refs = self
            .dense_references()
            .map_err(|e| ErrorRecord::new(None, &e))?;
        let cells: Vec<_> = a
            .strategies
            .iter()
            .flat_map(|&s| a.recoveries.iter().map(move |&r| (s, r)))
            .collect();
        let rows: Vec<Result<AblateRow, ErrorRecord>> = cells
            .par_iter()
            .map(|&(strategy, recovery)| {
                let wrap = |e: CoreError| ErrorRecord::new(None, &e);
                let s = cfg
                    .staged_schedule(strategy, recovery, a.ratio, a.stages)
                    .map_err(wrap)?;
                let flops = flop_count(&s, &cfg.model).map_err(wrap)?.total;
                let (fid, _) = self.fidelity(&s, &refs, "")?;
                Ok(AblateRow {
                    strategy,
                    recovery,
                    ratio: a.ratio,
                    stages: a.stages,
                    flops,
                    analytic_speedup: dense_flops as f64 / flops as f64,
                    psnr_db: fid.psnr_db,
                    ssim: fid.ssim,
                })
            })
            .collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(self.table("ablate", rows))
    }

    /// Dense per-scale cost breakdown.
    pub fn profile(&self) -> Result<ProfileReport, ErrorRecord> {
        let cfg = &self.config;
        let dense = cfg.dense_schedule();
        let f = flop_count(&dense, &cfg.model).expect("validated");
        let wall = self
            .time_scales(&dense, true)
            .map_err(|e| ErrorRecord::new(None, &e))?;
        let wall_total: u64 = wall.iter().sum();
        let rows = f
            .scales
            .iter()
            .zip(&wall)
            .map(|(s, &w)| ProfileRow {
                scale: s.scale,
                height: dense.scales[s.scale - 1].0,
                width: dense.scales[s.scale - 1].1,
                tokens: s.tokens,
                cache_len: s.cache_len,
                flops: s.flops,
                flop_share: s.flops as f64 / f.total as f64,
                wall_ns: w,
                wall_share: ratio_opt(w, wall_total),
            })
            .collect();
        Ok(self.table("profile", rows))
    }

    /// Noise injected at one scale at a time, scored on the final output.
    pub fn sensitivity(&self) -> Result<SensitivityReport, ErrorRecord> {
        let cfg = &self.config;
        let dense = cfg.dense_schedule();
        let refs = self
            .dense_references()
            .map_err(|e| ErrorRecord::new(None, &e))?;
        let mut rows = Vec::new();
        for &sigma in &cfg.sensitivity.sigmas {
            for scale in 1..=dense.len() {
                let per: Vec<Result<(f64, f64), ErrorRecord>> = self
                    .seeds()
                    .par_iter()
                    .zip(&refs)
                    .map(|(&seed, reference)| {
                        let wrap = |e: CoreError| ErrorRecord::new(Some(seed), &e);
                        let noise = NoiseInjection {
                            scale,
                            sigma,
                            seed: cfg.sensitivity.noise_seed.wrapping_add(seed),
                        };
                        let out = inject_noise(&self.model, &dense, seed, noise).map_err(wrap)?;
                        Ok((
                            psnr(reference, &out).map_err(wrap)?,
                            ssim(reference, &out).map_err(wrap)?,
                        ))
                    })
                    .collect();
                let per = per.into_iter().collect::<Result<Vec<_>, _>>()?;
                let n = per.len() as f64;
                rows.push(SensitivityRow {
                    scale,
                    sigma,
                    psnr_db: per.iter().map(|p| p.0).sum::<f64>() / n,
                    ssim: per.iter().map(|p| p.1).sum::<f64>() / n,
                });
            }
        }
        Ok(self.table("sensitivity", rows))
    }

    /// Selections of the configured schedule, or of the last `stages` scales
    /// pruned at each of `ratios` when given.
    pub fn masks(&self, ratios: &[f64], stages: usize) -> Result<Vec<MaskEntry>, ErrorRecord> {
        let cfg = &self.config;
        let wrap = |e: CoreError| ErrorRecord::new(None, &e);
        let schedules: Vec<(String, ScaleSchedule)> = if ratios.is_empty() {
            vec![(String::new(), cfg.schedule().expect("validated"))]
        } else {
            ratios
                .iter()
                .map(|&r| {
                    cfg.staged_schedule(cfg.prune.strategy, cfg.prune.recovery, r, stages)
                        .map(|s| (ratio_label(r), s))
                        .map_err(wrap)
                })
                .collect::<Result<_, _>>()?
        };
        let mut out = Vec::new();
        for (label, schedule) in &schedules {
            for &seed in self.seeds() {
                let r = run_pruned(&self.model, schedule, seed)
                    .map_err(|e| ErrorRecord::new(Some(seed), &e))?;
                out.extend(masks_of(label, seed, schedule, &r.selections));
            }
        }
        Ok(out)
    }

    fn table<R>(&self, kind: &str, rows: Vec<R>) -> TableReport<R> {
        TableReport {
            kind: kind.into(),
            config: self.config.clone(),
            seeds: self.seeds().to_vec(),
            rows,
        }
    }
}

fn ratio_opt(num: u64, den: u64) -> Option<f64> {
    crate::report::ratio(num, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Config {
        Config::from_toml(
            r#"
[model]
depth = 1
channels = 8
heads = 2
ffn_mult = 2
[schedule]
sides = [1, 2, 4, 6]
[prune]
last_ratios = [0.5]
[seeds]
inputs = [0, 1]
[timing]
warmup = 0
repeats = 1
"#,
        )
        .unwrap()
    }

    #[test]
    fn run_report_is_consistent() {
        let out = Experiment::new(tiny()).unwrap().run();
        let r = &out.report;
        assert!(r.error.is_none());
        let kept: Vec<usize> = r.scales.iter().map(|s| s.kept).collect();
        assert_eq!(kept, vec![1, 4, 16, 18]);
        assert_eq!(r.totals, Totals::from_scales(&r.scales));
        assert!(r.fidelity.is_some());
        // one pruned scale per seed
        assert_eq!(out.masks.len(), 2);
        assert_eq!(out.masks[0].file_stem(), "seed0_scale4");
    }

    #[test]
    fn masks_for_ratios() {
        let e = Experiment::new(tiny()).unwrap();
        let m = e.masks(&[0.0, 0.5], 1).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m[0].kept.len(), 36);
        assert_eq!(m[2].kept.len(), 18);
        assert_eq!(m[2].file_stem(), "r050_seed0_scale4");
    }

    #[test]
    fn runtime_failure_gives_partial_report() {
        // stride-1 anchors force every token, more than the kept budget
        let mut cfg = tiny();
        cfg.prune.recovery = scaleprune_core::RecoveryKind::AnchorCopy;
        cfg.prune.anchor_stride = 1;
        let r = Experiment::new(cfg).unwrap().run().report;
        let err = r.error.unwrap();
        assert_eq!(err.scale, Some(4));
        assert!(r.fidelity.is_none());
        assert_eq!(r.scales.len(), 4);
    }
}
