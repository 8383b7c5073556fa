//! Closed-form transformer cost model, counted in multiply-accumulates.
//!
//! Per layer, for `n` processed tokens attending to `n + cache` keys:
//!
//! ```text
//! attention    2 * n * (n + cache) * C      (scores and weighted values)
//! projections  4 * n * C^2                  (q, k, v, out)
//! ffn          2 * n * C * (ffn_mult * C)   (up and down)
//! ```
//!
//! An optional fixed-length conditioning sequence of `m` tokens adds
//! cross-attention: `2 * n * m * C + 2 * n * C^2 + 2 * m * C^2`. It is zero
//! unless requested; the toy pipeline has no cross-attention.
//! Skipped scales cost nothing and contribute nothing to the cache.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ModelConfig;
use crate::pipeline::{CacheMode, ScaleSchedule};
use crate::scoring::keep_count;

/// Cost of one layer processing `n` tokens with `cache` cached tokens.
pub fn layer_flops(cfg: &ModelConfig, n: u64, cache: u64, cond_len: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let c = cfg.channels as u64;
    let attention = 2 * n * (n + cache) * c;
    let projections = 4 * n * c * c;
    let ffn = 2 * n * c * (cfg.ffn_mult as u64 * c);
    let cross = if cond_len > 0 {
        2 * n * cond_len * c + 2 * n * c * c + 2 * cond_len * c * c
    } else {
        0
    };
    attention + projections + ffn + cross
}

/// All layers of the model for one scale.
pub fn scale_flops(cfg: &ModelConfig, n: u64, cache: u64, cond_len: u64) -> u64 {
    cfg.depth as u64 * layer_flops(cfg, n, cache, cond_len)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleFlops {
    pub scale: usize,
    pub tokens: usize,
    /// Tokens that actually go through the layers (0 when skipped).
    pub processed: usize,
    /// Cache length seen by this scale.
    pub cache_len: usize,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub scales: Vec<ScaleFlops>,
    pub total: u64,
}

impl FlopBreakdown {
    /// Fraction of the total spent in the last `n` scales.
    pub fn tail_share(&self, n: usize) -> f64 {
        let tail: u64 = self.scales.iter().rev().take(n).map(|s| s.flops).sum();
        tail as f64 / self.total as f64
    }
}

/// Processed-token count for a scale of `tokens` under `ratio`.
pub fn processed_tokens(ratio: f64, tokens: usize) -> Result<usize> {
    if ratio >= 1.0 {
        crate::scoring::validate_ratio(ratio)?;
        Ok(0)
    } else {
        keep_count(ratio, tokens)
    }
}

pub fn flop_count(schedule: &ScaleSchedule, cfg: &ModelConfig) -> Result<FlopBreakdown> {
    flop_count_with_conditioning(schedule, cfg, 0)
}

pub fn flop_count_with_conditioning(
    schedule: &ScaleSchedule,
    cfg: &ModelConfig,
    cond_len: usize,
) -> Result<FlopBreakdown> {
    schedule.validate()?;
    let mut cache = 0usize;
    let mut scales = Vec::with_capacity(schedule.len());
    for (i, (&(h, w), spec)) in schedule.scales.iter().zip(&schedule.prune).enumerate() {
        let tokens = h * w;
        let processed = processed_tokens(spec.ratio(), tokens).map_err(|e| e.at_scale(i + 1))?;
        let flops = scale_flops(cfg, processed as u64, cache as u64, cond_len as u64);
        scales.push(ScaleFlops {
            scale: i + 1,
            tokens,
            processed,
            cache_len: cache,
            flops,
        });
        cache += match schedule.cache_mode {
            CacheMode::KeptOnly => processed,
            CacheMode::Dense if processed > 0 => tokens,
            CacheMode::Dense => 0,
        };
    }
    let total = scales.iter().map(|s| s.flops).sum();
    Ok(FlopBreakdown { scales, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::ScaleSchedule;

    #[test]
    fn single_token_by_hand() {
        let cfg = ModelConfig {
            depth: 1,
            channels: 4,
            heads: 1,
            ffn_mult: 2,
            weight_seed: 0,
        };
        // 2*1*1*4 + 4*1*16 + 2*1*4*8 = 8 + 64 + 64
        assert_eq!(layer_flops(&cfg, 1, 0, 0), 136);
        let s = ScaleSchedule::from_sides(&[1]).unwrap();
        assert_eq!(flop_count(&s, &cfg).unwrap().total, 136);
        assert_eq!(layer_flops(&cfg, 0, 10, 3), 0);
    }

    #[test]
    fn attention_term_is_quadratic() {
        let cfg = ModelConfig::default();
        let c = cfg.channels as u64;
        let linear = |n: u64| 4 * n * c * c + 2 * n * c * cfg.ffn_mult as u64 * c;
        let attn = |n: u64| layer_flops(&cfg, n, 0, 0) - linear(n);
        assert_eq!(attn(128), 4 * attn(64));
    }

    #[test]
    fn conditioning_hook() {
        let cfg = ModelConfig::default();
        let c = 64u64;
        assert_eq!(
            layer_flops(&cfg, 10, 5, 7) - layer_flops(&cfg, 10, 5, 0),
            2 * 10 * 7 * c + 2 * 10 * c * c + 2 * 7 * c * c
        );
    }
}
