//! Dense token grids and the primitives shared by scoring, recovery and the
//! pipeline: centering, 3x3 pooling, index gathers and coordinate grids.
//!
//! Tokens are stored row-major over `(height, width)`, so token `l` sits at
//! `(l / width, l % width)` and the `L <-> (H, W)` reshape is free.

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};

/// A batch of token feature maps, `B x L x C` with `L = H * W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    data: Array3<f64>,
    height: usize,
    width: usize,
}

impl FeatureGrid {
    pub fn new(data: Array3<f64>, height: usize, width: usize) -> Result<Self> {
        let (b, l, c) = data.dim();
        if b == 0 || c == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "grid dims must be positive, got B={b} H={height} W={width} C={c}"
            )));
        }
        if l != height * width {
            return Err(Error::Shape(format!(
                "token count {l} does not match {height}x{width}"
            )));
        }
        for ((bi, li, ci), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    batch: bi,
                    token: li,
                    channel: ci,
                });
            }
        }
        Ok(Self {
            data,
            height,
            width,
        })
    }

    /// Builds a single-row grid from an `L x C` matrix.
    pub fn from_tokens(tokens: Array2<f64>, height: usize, width: usize) -> Result<Self> {
        Self::new(tokens.insert_axis(Axis(0)), height, width)
    }

    /// Stacks equally shaped rows into one batch.
    pub fn stack(rows: &[Array2<f64>], height: usize, width: usize) -> Result<Self> {
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        let data = ndarray::stack(Axis(0), &views)
            .map_err(|e| Error::Shape(format!("cannot stack rows: {e}")))?;
        Self::new(data, height, width)
    }

    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Self::new(
            Array3::zeros((batch, height * width, channels)),
            height,
            width,
        )
        .expect("zero grid with positive dims is valid")
    }

    pub fn from_fn(
        batch: usize,
        height: usize,
        width: usize,
        channels: usize,
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Result<Self> {
        Self::new(
            Array3::from_shape_fn((batch, height * width, channels), f),
            height,
            width,
        )
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn tokens(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(B, H, W, C)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch(), self.height, self.width, self.channels())
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn row(&self, b: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), b)
    }

    pub fn token(&self, b: usize, l: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![b, l, ..])
    }

    pub fn get(&self, b: usize, row: usize, col: usize, c: usize) -> f64 {
        self.data[[b, row * self.width + col, c]]
    }

    /// Applies `f` to every element, re-checking finiteness afterwards.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.data.mapv(f), self.height, self.width)
    }

    pub(crate) fn row_mut(&mut self, b: usize) -> ArrayViewMut2<'_, f64> {
        self.data.index_axis_mut(Axis(0), b)
    }

    pub fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.shape() == other.shape()
    }
}

/// Kept tokens of a grid plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTokens {
    data: Array3<f64>,
    kept: Vec<Vec<usize>>,
    height: usize,
    width: usize,
}

impl SparseTokens {
    /// `kept[b]` must be strictly ascending and inside `0..height*width`,
    /// with the same length for every row.
    pub fn new(
        data: Array3<f64>,
        kept: Vec<Vec<usize>>,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let (b, k, _) = data.dim();
        if kept.len() != b {
            return Err(Error::Shape(format!(
                "{} index rows for batch of {b}",
                kept.len()
            )));
        }
        let tokens = height * width;
        for row in &kept {
            if row.len() != k {
                return Err(Error::Shape(format!(
                    "index row has {} entries, features have {k}",
                    row.len()
                )));
            }
            validate_indices(row, tokens)?;
        }
        Ok(Self {
            data,
            kept,
            height,
            width,
        })
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn kept_count(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn source_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn source_tokens(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn kept_indices(&self) -> &[Vec<usize>] {
        &self.kept
    }

    pub fn row(&self, b: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), b)
    }

    /// Same kept set with replaced (processed) features.
    pub fn with_data(&self, data: Array3<f64>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return Err(Error::Shape(format!(
                "replacement features {:?} differ from {:?}",
                data.dim(),
                self.data.dim()
            )));
        }
        Ok(Self {
            data,
            kept: self.kept.clone(),
            height: self.height,
            width: self.width,
        })
    }
}

pub(crate) fn validate_indices(idx: &[usize], tokens: usize) -> Result<()> {
    for (pos, &i) in idx.iter().enumerate() {
        if i >= tokens {
            return Err(Error::Index(format!(
                "{i} out of range for {tokens} tokens"
            )));
        }
        if pos > 0 && idx[pos - 1] >= i {
            return Err(Error::Index(format!(
                "indices must be strictly ascending, found {} then {i}",
                idx[pos - 1]
            )));
        }
    }
    Ok(())
}

/// Row-major `(row, col)` coordinates of an `H x W` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoordGrid {
    height: usize,
    width: usize,
    coords: Vec<(usize, usize)>,
}

impl CoordGrid {
    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> Vec<(usize, usize)> {
        idx.iter().map(|&i| self.coords[i]).collect()
    }
}

pub fn make_coord_grid(height: usize, width: usize) -> Result<CoordGrid> {
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "coordinate grid needs positive dims, got {height}x{width}"
        )));
    }
    let coords = (0..height * width)
        .map(|i| (i / width, i % width))
        .collect();
    Ok(CoordGrid {
        height,
        width,
        coords,
    })
}

/// Subtracts the per-batch, per-channel token mean.
pub fn center_tokens(x: &FeatureGrid) -> FeatureGrid {
    let mut out = x.clone();
    for b in 0..x.batch() {
        let mut row = out.row_mut(b);
        center_rows(&mut row);
    }
    out
}

// Tokens are first taken relative to token 0, then the mean of those offsets
// is removed. Same result as `x - mean(x)`, but a shift of the whole row by a
// representable constant leaves the output bit-identical.
pub(crate) fn center_rows(row: &mut ArrayViewMut2<'_, f64>) {
    let reference = row.row(0).to_owned();
    *row -= &reference;
    let mean = row.mean_axis(Axis(0)).expect("rows are non-empty");
    *row -= &mean;
}

/// 3x3 mean filter, stride 1, same-size output. Border windows are divided by
/// the number of in-bounds cells, so constant maps stay exactly constant.
pub fn avg_pool_3x3(x: &FeatureGrid) -> FeatureGrid {
    let (batch, h, w, c) = x.shape();
    let mut out = Array3::<f64>::zeros((batch, h * w, c));
    for b in 0..batch {
        let src = x.row(b);
        let mut dst = out.index_axis_mut(Axis(0), b);
        for r in 0..h {
            let r0 = r.saturating_sub(1);
            let r1 = (r + 1).min(h - 1);
            for col in 0..w {
                let c0 = col.saturating_sub(1);
                let c1 = (col + 1).min(w - 1);
                let count = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
                let mut acc = dst.row_mut(r * w + col);
                for nr in r0..=r1 {
                    for nc in c0..=c1 {
                        acc += &src.row(nr * w + nc);
                    }
                }
                acc /= count;
            }
        }
    }
    FeatureGrid::new(out, h, w).expect("pooling preserves finiteness and shape")
}

/// Gathers `idx[b]` from row `b`. Every row must select the same number of
/// tokens, in strictly ascending order.
pub fn gather_tokens(x: &FeatureGrid, idx: &[Vec<usize>]) -> Result<SparseTokens> {
    if idx.len() != x.batch() {
        return Err(Error::Shape(format!(
            "{} index rows for batch of {}",
            idx.len(),
            x.batch()
        )));
    }
    let k = idx.first().map_or(0, Vec::len);
    let mut data = Array3::<f64>::zeros((x.batch(), k, x.channels()));
    for (b, row_idx) in idx.iter().enumerate() {
        if row_idx.len() != k {
            return Err(Error::Shape("index rows differ in length".into()));
        }
        validate_indices(row_idx, x.tokens())?;
        let src = x.row(b);
        let sel = src.select(Axis(0), row_idx);
        data.index_axis_mut(Axis(0), b).assign(&sel);
    }
    SparseTokens::new(data, idx.to_vec(), x.height(), x.width())
}
