//! Random-weight pre-norm transformer used as a stand-in backbone.
//!
//! Each layer is `x + attn(ln(x))` followed by `x + ffn(ln(x))`. Attention
//! queries come from the tokens currently being processed; keys and values
//! cover those tokens plus everything cached from earlier scales.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub channels: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub weight_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            channels: 64,
            heads: 4,
            ffn_mult: 4,
            weight_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.channels == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return Err(Error::Param(format!(
                "model dims must be positive: {self:?}"
            )));
        }
        if !self.channels.is_multiple_of(self.heads) {
            return Err(Error::Param(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

/// Weights of one layer. Projections act on row vectors: `y = x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub w_up: Array2<f64>,
    pub w_down: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    layers: Vec<Layer>,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || n.sample(rng))
}

impl ToyModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let hidden = c * config.ffn_mult;
        let mut rng = ChaCha8Rng::seed_from_u64(config.weight_seed);
        let proj = 1.0 / (c as f64).sqrt();
        let layers = (0..config.depth)
            .map(|_| Layer {
                wq: gaussian(&mut rng, c, c, proj),
                wk: gaussian(&mut rng, c, c, proj),
                wv: gaussian(&mut rng, c, c, proj),
                wo: gaussian(&mut rng, c, c, proj),
                w_up: gaussian(&mut rng, c, hidden, proj),
                w_down: gaussian(&mut rng, hidden, c, 1.0 / (hidden as f64).sqrt()),
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    pub fn empty_cache(&self) -> KvCache {
        KvCache {
            layers: (0..self.config.depth)
                .map(|_| LayerCache {
                    keys: Array2::zeros((0, self.config.channels)),
                    values: Array2::zeros((0, self.config.channels)),
                })
                .collect(),
        }
    }

    /// Runs all layers over `tokens` (`n x C`), attending to `cache` plus the
    /// tokens themselves. Returns the output tokens and the per-layer keys and
    /// values they produced, which the caller may append to the cache.
    pub fn forward(
        &self,
        tokens: ArrayView2<'_, f64>,
        cache: &KvCache,
    ) -> Result<(Array2<f64>, StepKv)> {
        let c = self.config.channels;
        if tokens.ncols() != c {
            return Err(Error::Shape(format!(
                "tokens have {} channels, model expects {c}",
                tokens.ncols()
            )));
        }
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Shape("cache depth does not match model".into()));
        }
        let mut x = tokens.to_owned();
        let mut step = StepKv {
            layers: Vec::with_capacity(self.layers.len()),
        };
        for (layer, past) in self.layers.iter().zip(&cache.layers) {
            let h = layer_norm(x.view());
            let q = h.dot(&layer.wq);
            let k = h.dot(&layer.wk);
            let v = h.dot(&layer.wv);
            let keys =
                concatenate(Axis(0), &[past.keys.view(), k.view()]).expect("channel counts agree");
            let values = concatenate(Axis(0), &[past.values.view(), v.view()])
                .expect("channel counts agree");
            let attn =
                multi_head_attention(q.view(), keys.view(), values.view(), self.config.heads);
            x += &attn.dot(&layer.wo);

            let h = layer_norm(x.view());
            let mut up = h.dot(&layer.w_up);
            up.mapv_inplace(gelu);
            x += &up.dot(&layer.w_down);
            step.layers.push(LayerCache { keys: k, values: v });
        }
        Ok((x, step))
    }
}

/// Keys and values of one layer, `n x C` each.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

impl LayerCache {
    pub fn len(&self) -> usize {
        self.keys.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.nrows() == 0
    }
}

/// Keys and values produced by one forward call.
#[derive(Debug, Clone, PartialEq)]
pub struct StepKv {
    pub layers: Vec<LayerCache>,
}

impl StepKv {
    /// Rows `rows` of every layer, in the given order.
    pub fn select(&self, rows: &[usize]) -> StepKv {
        StepKv {
            layers: self
                .layers
                .iter()
                .map(|l| LayerCache {
                    keys: l.keys.select(Axis(0), rows),
                    values: l.values.select(Axis(0), rows),
                })
                .collect(),
        }
    }
}

/// Per-layer attention cache across completed scales.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    layers: Vec<LayerCache>,
}

impl KvCache {
    pub fn append(&mut self, step: &StepKv) {
        for (dst, src) in self.layers.iter_mut().zip(&step.layers) {
            dst.keys = concatenate(Axis(0), &[dst.keys.view(), src.keys.view()])
                .expect("channel counts agree");
            dst.values = concatenate(Axis(0), &[dst.values.view(), src.values.view()])
                .expect("channel counts agree");
        }
    }

    /// Cached token count (identical across layers).
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, LayerCache::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layers(&self) -> &[LayerCache] {
        &self.layers
    }
}

/// Per-token layer norm without affine parameters.
pub fn layer_norm(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let mean = row.mean().unwrap_or(0.0);
        row -= mean;
        let var = row.dot(&row) / row.len() as f64;
        row /= (var + LN_EPS).sqrt();
    }
    out
}

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044_715 * x * x * x)).tanh())
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row /= sum;
    }
}

/// Scaled dot-product attention split over `heads` equal channel groups.
pub fn multi_head_attention(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    heads: usize,
) -> Array2<f64> {
    let c = q.ncols();
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Array2::zeros((q.nrows(), c));
    for h in 0..heads {
        let cols = s![.., h * d..(h + 1) * d];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        scores *= scale;
        softmax_rows(&mut scores);
        out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
    }
    out
}

/// Unit-variance seeded token used to start a run.
pub fn seed_token(seed: u64, row: usize, channels: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Array1::from_shape_simple_fn(channels, || n.sample(&mut rng))
}
