//! Token importance scoring and top-k selection.
//!
//! The main selector fuses two signals per token:
//!
//! * a structural score, the magnitude of the token's centered feature
//!   projected onto the leading principal direction (estimated by a few power
//!   iterations on the token covariance), and
//! * a textural score, the channel-summed energy of the token minus its 3x3
//!   neighborhood mean.
//!
//! `total = w_str * structural + textural`, and the top `k = floor((1 - r) L)`
//! tokens survive. Random and L2-distance baselines share the same selector.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{center_tokens, gather_tokens, FeatureGrid, SparseTokens};

/// Below this norm the covariance image of `v` is treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneParams {
    pub ratio: f64,
    pub w_str: f64,
    pub power_iters: usize,
    pub rng_seed: u64,
}

impl Default for PruneParams {
    fn default() -> Self {
        Self {
            ratio: 0.0,
            w_str: 0.5,
            power_iters: 3,
            rng_seed: 0,
        }
    }
}

impl PruneParams {
    pub fn with_ratio(ratio: f64) -> Self {
        Self {
            ratio,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_ratio(self.ratio)?;
        if !(self.w_str.is_finite() && self.w_str >= 0.0) {
            return Err(Error::Param(format!(
                "w_str must be finite and nonnegative, got {}",
                self.w_str
            )));
        }
        if self.power_iters == 0 {
            return Err(Error::Param("power_iters must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn validate_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Param(format!(
            "ratio must lie in [0, 1], got {ratio}"
        )));
    }
    Ok(())
}

/// Per-token scores, `B x L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    values: Array2<f64>,
}

impl ScoreVector {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Param(format!("non-finite score {v}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, b: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(b)
    }

    pub fn batch(&self) -> usize {
        self.values.nrows()
    }

    pub fn tokens(&self) -> usize {
        self.values.ncols()
    }

    /// `self * weight + other`.
    pub fn fuse(&self, weight: f64, other: &ScoreVector) -> Result<ScoreVector> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::Shape("score vectors differ in shape".into()));
        }
        ScoreVector::new(&self.values * weight + &other.values)
    }
}

/// How tokens are ranked before selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Weighted structural + textural fusion.
    StructureTexture,
    /// Textural (high-pass) score alone.
    HfOnly,
    /// L2 distance to the mean token.
    L2norm,
    /// Seeded uniform scores.
    Random,
    /// No pruning.
    None,
}

impl Strategy {
    pub const PRUNING: [Strategy; 4] = [
        Strategy::StructureTexture,
        Strategy::HfOnly,
        Strategy::L2norm,
        Strategy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::StructureTexture => "structure_texture",
            Strategy::HfOnly => "hf_only",
            Strategy::L2norm => "l2norm",
            Strategy::Random => "random",
            Strategy::None => "none",
        }
    }

    /// Scores `x` for selection. `None` yields all-zero scores, which the
    /// tie rule turns into "keep the first k".
    pub fn score(self, x: &FeatureGrid, params: &PruneParams) -> Result<ScoreVector> {
        match self {
            Strategy::StructureTexture => {
                let s = structural_score(x, params)?;
                s.fuse(params.w_str, &textural_score(x))
            }
            Strategy::HfOnly => Ok(textural_score(x)),
            Strategy::L2norm => Ok(l2norm_score(x)),
            Strategy::Random => Ok(random_score(x.batch(), x.tokens(), params.rng_seed)),
            Strategy::None => ScoreVector::new(Array2::zeros((x.batch(), x.tokens()))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Seeded unit vector in `R^channels`; row `b` draws from its own stream.
pub fn init_direction(seed: u64, row: usize, channels: usize) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    let mut v: Array1<f64> = (0..channels).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    } else {
        v[0] = 1.0;
    }
    v
}

/// Power iteration on `X^T X` for one centered `L x C` row.
#[derive(Debug, Clone)]
pub struct PowerIteration<'a> {
    x: ArrayView2<'a, f64>,
    init: Array1<f64>,
    v: Array1<f64>,
    degenerate: bool,
}

impl<'a> PowerIteration<'a> {
    pub fn new(x_centered: ArrayView2<'a, f64>, init: Array1<f64>) -> Self {
        Self {
            x: x_centered,
            v: init.clone(),
            init,
            degenerate: false,
        }
    }

    /// `v <- normalize(X^T (X v))`. Returns `false` once the iterate collapses,
    /// after which `direction()` is the initial vector.
    pub fn step(&mut self) -> bool {
        if self.degenerate {
            return false;
        }
        let w = self.x.t().dot(&self.x.dot(&self.v));
        let n = w.dot(&w).sqrt();
        if n.is_nan() || n < DEGENERATE_NORM {
            self.degenerate = true;
            self.v = self.init.clone();
            return false;
        }
        self.v = w / n;
        true
    }

    /// `v^T X^T X v` for the current iterate.
    pub fn rayleigh(&self) -> f64 {
        let u = self.x.dot(&self.v);
        u.dot(&u)
    }

    pub fn direction(&self) -> &Array1<f64> {
        &self.v
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalDirections {
    /// `B x C`, unit rows.
    pub directions: Array2<f64>,
    /// Rows whose covariance image vanished; their direction is the seed vector.
    pub degenerate: Vec<bool>,
}

pub fn first_principal_direction(
    x_centered: &FeatureGrid,
    iters: usize,
    seed: u64,
) -> Result<PrincipalDirections> {
    if iters == 0 {
        return Err(Error::Param("power_iters must be at least 1".into()));
    }
    let (b, c) = (x_centered.batch(), x_centered.channels());
    let mut directions = Array2::zeros((b, c));
    let mut degenerate = vec![false; b];
    for row in 0..b {
        let mut pi = PowerIteration::new(x_centered.row(row), init_direction(seed, row, c));
        for _ in 0..iters {
            if !pi.step() {
                break;
            }
        }
        degenerate[row] = pi.is_degenerate();
        directions.row_mut(row).assign(pi.direction());
    }
    Ok(PrincipalDirections {
        directions,
        degenerate,
    })
}

/// `|X_centered . v|` per token; zero for degenerate rows.
pub fn structural_score(x: &FeatureGrid, params: &PruneParams) -> Result<ScoreVector> {
    let xc = center_tokens(x);
    let pd = first_principal_direction(&xc, params.power_iters, params.rng_seed)?;
    let mut out = Array2::zeros((x.batch(), x.tokens()));
    for b in 0..x.batch() {
        if pd.degenerate[b] {
            continue;
        }
        let proj = xc.row(b).dot(&pd.directions.row(b));
        out.row_mut(b).assign(&proj.mapv(f64::abs));
    }
    ScoreVector::new(out)
}

/// Channel-summed squared high-pass residual `x - avgpool3x3(x)`.
///
/// The residual is accumulated as the mean of `x_i - x_j` over the in-bounds
/// 3x3 neighborhood, which equals `x_i - mean_j x_j` and is unchanged by any
/// exactly representable shift of the input.
pub fn textural_score(x: &FeatureGrid) -> ScoreVector {
    let (batch, h, w, c) = x.shape();
    let mut out = Array2::zeros((batch, h * w));
    let mut high = Array1::<f64>::zeros(c);
    for b in 0..batch {
        let src = x.row(b);
        for r in 0..h {
            let r0 = r.saturating_sub(1);
            let r1 = (r + 1).min(h - 1);
            for col in 0..w {
                let c0 = col.saturating_sub(1);
                let c1 = (col + 1).min(w - 1);
                let count = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
                let center = src.row(r * w + col);
                high.fill(0.0);
                for nr in r0..=r1 {
                    for nc in c0..=c1 {
                        for (acc, (&ci, &nj)) in high
                            .iter_mut()
                            .zip(center.iter().zip(src.row(nr * w + nc).iter()))
                        {
                            *acc += ci - nj;
                        }
                    }
                }
                out[[b, r * w + col]] = high.iter().map(|d| (d / count).powi(2)).sum();
            }
        }
    }
    ScoreVector::new(out).expect("finite input gives finite scores")
}

/// `||x_i - mean||_2` per token.
pub fn l2norm_score(x: &FeatureGrid) -> ScoreVector {
    let xc = center_tokens(x);
    let values = xc.data().map_axis(Axis(2), |tok| tok.dot(&tok).sqrt());
    ScoreVector::new(values).expect("finite input gives finite scores")
}

/// Seeded uniform `[0, 1)` scores, one stream per batch row.
pub fn random_score(batch: usize, tokens: usize, seed: u64) -> ScoreVector {
    let mut values = Array2::zeros((batch, tokens));
    for (b, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        row.iter_mut().for_each(|v| *v = rng.gen::<f64>());
    }
    ScoreVector::new(values).expect("uniform samples are finite")
}

/// `max(1, floor((1 - r) * L))` for `r < 1`.
///
/// A `1e-9` guard absorbs representation error in decimal ratios, so that
/// e.g. `r = 0.8, L = 5` keeps 1 token rather than 0.
pub fn keep_count(ratio: f64, tokens: usize) -> Result<usize> {
    validate_ratio(ratio)?;
    if ratio >= 1.0 {
        return Err(Error::FullPrune);
    }
    let k = ((1.0 - ratio) * tokens as f64 + 1e-9).floor() as usize;
    Ok(k.clamp(1, tokens.max(1)))
}

/// Indices of the `k` highest scores, returned in ascending index order.
/// Equal scores are broken toward the lower index.
pub fn top_k(scores: ndarray::ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let n = scores.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < n {
        idx.select_nth_unstable_by(k - 1, rank);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// Keeps the top `keep_count(ratio, L)` tokens of every row by `scores`.
pub fn select_by_scores(x: &FeatureGrid, scores: &ScoreVector, ratio: f64) -> Result<SparseTokens> {
    if scores.batch() != x.batch() || scores.tokens() != x.tokens() {
        return Err(Error::Shape(format!(
            "scores {:?} do not match grid of {}x{}",
            scores.values().dim(),
            x.batch(),
            x.tokens()
        )));
    }
    let k = keep_count(ratio, x.tokens())?;
    let idx: Vec<Vec<usize>> = (0..x.batch()).map(|b| top_k(scores.row(b), k)).collect();
    gather_tokens(x, &idx)
}

/// Full structure-texture selection: returns the kept tokens and the fused
/// scores they were ranked by.
pub fn joint_select(x: &FeatureGrid, params: &PruneParams) -> Result<(SparseTokens, ScoreVector)> {
    select_with(Strategy::StructureTexture, x, params)
}

/// Selection under any strategy.
pub fn select_with(
    strategy: Strategy,
    x: &FeatureGrid,
    params: &PruneParams,
) -> Result<(SparseTokens, ScoreVector)> {
    params.validate()?;
    if params.ratio >= 1.0 {
        return Err(Error::FullPrune);
    }
    let scores = strategy.score(x, params)?;
    let sparse = select_by_scores(x, &scores, params.ratio)?;
    Ok((sparse, scores))
}
