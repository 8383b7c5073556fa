//! Dense-map reconstruction from processed sparse tokens.
//!
//! The default path fills each pruned position with the processed feature of
//! the spatially nearest kept token. Distances are squared Euclidean on raw
//! integer `(row, col)` coordinates; ties go to the earliest kept-list entry,
//! which (kept lists being ascending) is the lowest token index.
//!
//! `cache_upsample` and `anchor_copy` are the two comparison strategies.

use std::collections::HashSet;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_coord_grid, validate_indices, FeatureGrid, SparseTokens};
use crate::scoring::{top_k, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    NearestNeighbor,
    CacheUpsample,
    AnchorCopy,
}

impl RecoveryKind {
    pub const ALL: [RecoveryKind; 3] = [
        RecoveryKind::NearestNeighbor,
        RecoveryKind::CacheUpsample,
        RecoveryKind::AnchorCopy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RecoveryKind::NearestNeighbor => "nearest_neighbor",
            RecoveryKind::CacheUpsample => "cache_upsample",
            RecoveryKind::AnchorCopy => "anchor_copy",
        }
    }
}

impl std::fmt::Display for RecoveryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryStrategy {
    pub kind: RecoveryKind,
    /// Anchor grid spacing, used by `AnchorCopy` only.
    pub anchor_stride: usize,
}

impl Default for RecoveryStrategy {
    fn default() -> Self {
        Self {
            kind: RecoveryKind::NearestNeighbor,
            anchor_stride: 3,
        }
    }
}

impl RecoveryStrategy {
    pub fn new(kind: RecoveryKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchor_stride == 0 {
            return Err(Error::Param("anchor_stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[inline]
fn dist2(a: (usize, usize), b: (usize, usize)) -> usize {
    let dr = a.0.abs_diff(b.0);
    let dc = a.1.abs_diff(b.1);
    dr * dr + dc * dc
}

/// For every grid position, the position in `sources` (token indices, any
/// order) of the nearest source; ties keep the earliest entry.
pub fn nearest_assignment(height: usize, width: usize, sources: &[usize]) -> Result<Vec<usize>> {
    if sources.is_empty() {
        return Err(Error::Empty("source set"));
    }
    let grid = make_coord_grid(height, width)?;
    let src: Vec<(usize, usize)> = grid.gather(sources);
    Ok(grid
        .coords()
        .iter()
        .map(|&p| {
            let mut best = 0;
            let mut best_d = usize::MAX;
            for (j, &q) in src.iter().enumerate() {
                let d = dist2(p, q);
                if d < best_d {
                    best_d = d;
                    best = j;
                    if d == 0 {
                        break;
                    }
                }
            }
            best
        })
        .collect())
}

/// Nearest-neighbor feature propagation.
pub fn nn_propagate(sparse: &SparseTokens) -> Result<FeatureGrid> {
    if sparse.kept_count() == 0 {
        return Err(Error::Empty("kept set"));
    }
    let (h, w) = sparse.source_shape();
    let mut out = Array3::zeros((sparse.batch(), h * w, sparse.channels()));
    for b in 0..sparse.batch() {
        let assign = nearest_assignment(h, w, &sparse.kept_indices()[b])?;
        let src = sparse.row(b);
        out.index_axis_mut(Axis(0), b)
            .assign(&src.select(Axis(0), &assign));
    }
    FeatureGrid::new(out, h, w)
}

/// Nearest-neighbor upsampling: output `(r, c)` reads source
/// `(r * h / H, c * w / W)`.
pub fn cache_upsample(prev: &FeatureGrid, target: (usize, usize)) -> Result<FeatureGrid> {
    let (th, tw) = target;
    let (b, h, w, c) = prev.shape();
    if th < h || tw < w {
        return Err(Error::Shape(format!(
            "cannot upsample {h}x{w} down to {th}x{tw}"
        )));
    }
    let map: Vec<usize> = (0..th * tw)
        .map(|i| {
            let (r, col) = (i / tw, i % tw);
            (r * h / th) * w + col * w / tw
        })
        .collect();
    let mut out = Array3::zeros((b, th * tw, c));
    for bi in 0..b {
        out.index_axis_mut(Axis(0), bi)
            .assign(&prev.row(bi).select(Axis(0), &map));
    }
    FeatureGrid::new(out, th, tw)
}

/// Writes the sparse features over `base` at their kept positions.
pub fn scatter_onto(base: &FeatureGrid, sparse: &SparseTokens) -> Result<FeatureGrid> {
    let (b, h, w, c) = base.shape();
    if sparse.batch() != b || sparse.source_shape() != (h, w) || sparse.channels() != c {
        return Err(Error::Shape(
            "sparse tokens do not belong to the base grid".into(),
        ));
    }
    let mut data = base.data().clone();
    for bi in 0..b {
        for (j, &i) in sparse.kept_indices()[bi].iter().enumerate() {
            data.slice_mut(ndarray::s![bi, i, ..])
                .assign(&sparse.data().slice(ndarray::s![bi, j, ..]));
        }
    }
    FeatureGrid::new(data, h, w)
}

/// Token indices of a `stride`-spaced grid starting at `(0, 0)`.
pub fn anchor_grid(height: usize, width: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Param("anchor_stride must be at least 1".into()));
    }
    Ok((0..height)
        .step_by(stride)
        .flat_map(|r| (0..width).step_by(stride).map(move |c| r * width + c))
        .collect())
}

/// Kept positions hold their own features; every pruned position copies the
/// nearest anchor. `anchors` must be ascending and contained in every kept row.
pub fn anchor_copy(sparse: &SparseTokens, anchors: &[usize]) -> Result<FeatureGrid> {
    if anchors.is_empty() {
        return Err(Error::Empty("anchor set"));
    }
    let (h, w) = sparse.source_shape();
    validate_indices(anchors, h * w)?;
    let assign = nearest_assignment(h, w, anchors)?;
    let mut out = Array3::zeros((sparse.batch(), h * w, sparse.channels()));
    for b in 0..sparse.batch() {
        let kept = &sparse.kept_indices()[b];
        let mut slot = vec![usize::MAX; h * w];
        for (j, &i) in kept.iter().enumerate() {
            slot[i] = j;
        }
        let anchor_slots = anchors
            .iter()
            .map(|&a| match slot[a] {
                usize::MAX => Err(Error::Index(format!("anchor {a} was not kept"))),
                j => Ok(j),
            })
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<usize> = (0..h * w)
            .map(|i| match slot[i] {
                usize::MAX => anchor_slots[assign[i]],
                j => j,
            })
            .collect();
        out.index_axis_mut(Axis(0), b)
            .assign(&sparse.row(b).select(Axis(0), &rows));
    }
    FeatureGrid::new(out, h, w)
}

/// Re-selects so that `must_keep` is always kept while the kept count stays
/// the same; free slots go to the best-scoring remaining tokens.
pub fn force_include(
    x: &FeatureGrid,
    selection: &SparseTokens,
    scores: &ScoreVector,
    must_keep: &[usize],
) -> Result<SparseTokens> {
    let k = selection.kept_count();
    let must: HashSet<usize> = must_keep.iter().copied().collect();
    if must.len() > k {
        return Err(Error::Param(format!(
            "{} forced tokens exceed the kept budget of {k}",
            must.len()
        )));
    }
    if let Some(&bad) = must.iter().find(|&&i| i >= x.tokens()) {
        return Err(Error::Index(format!(
            "{bad} out of range for {} tokens",
            x.tokens()
        )));
    }
    if scores.batch() != x.batch() || scores.tokens() != x.tokens() {
        return Err(Error::Shape("scores do not match grid".into()));
    }
    let idx: Vec<Vec<usize>> = (0..x.batch())
        .map(|b| {
            let row = scores.row(b);
            let free: Vec<usize> = (0..x.tokens()).filter(|i| !must.contains(i)).collect();
            let free_scores = ndarray::Array1::from_iter(free.iter().map(|&i| row[i]));
            let mut kept: Vec<usize> = top_k(free_scores.view(), k - must.len())
                .into_iter()
                .map(|j| free[j])
                .chain(must.iter().copied())
                .collect();
            kept.sort_unstable();
            kept
        })
        .collect();
    crate::grid::gather_tokens(x, &idx)
}
