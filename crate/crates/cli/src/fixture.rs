//! Fixture dumps shared with external callers: a flat little-endian `f32`
//! buffer (`<stem>.bin`, row-major `B x L x C` or `B x k x C`) and a JSON
//! sidecar (`<stem>.json`) with the shape, grid size, seed and, for sparse
//! fixtures, the kept indices.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scaleprune_core::{joint_select, nn_propagate, FeatureGrid, PruneParams, SparseTokens};
use serde::{Deserialize, Serialize};

pub const DTYPE: &str = "f32";

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad sidecar {path}: {source}")]
    Sidecar {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("fixture field `{field}`: {message}")]
    Field {
        field: &'static str,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] scaleprune_core::Error),
}

fn field(field: &'static str, message: impl Into<String>) -> FixtureError {
    FixtureError::Field {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub dtype: String,
    /// `[B, L, C]` for dense fixtures, `[B, k, C]` for sparse ones.
    pub shape: [usize; 3],
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub sidecar: Sidecar,
    pub data: Vec<f32>,
}

/// `foo`, `foo.bin` and `foo.json` all name the same fixture.
pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("json") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let mut bin = base.clone().into_os_string();
    bin.push(".bin");
    let mut json = base.into_os_string();
    json.push(".json");
    (bin.into(), json.into())
}

impl Fixture {
    /// Uniform values in `[-1, 1)`.
    pub fn random(batch: usize, height: usize, width: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = batch * height * width * channels;
        Self {
            sidecar: Sidecar {
                dtype: DTYPE.into(),
                shape: [batch, height * width, channels],
                height,
                width,
                seed,
                kept: None,
            },
            data: (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        }
    }

    pub fn from_grid(x: &FeatureGrid, seed: u64) -> Self {
        Self {
            sidecar: Sidecar {
                dtype: DTYPE.into(),
                shape: [x.batch(), x.tokens(), x.channels()],
                height: x.height(),
                width: x.width(),
                seed,
                kept: None,
            },
            data: x.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_sparse(s: &SparseTokens, seed: u64) -> Self {
        let (height, width) = s.source_shape();
        Self {
            sidecar: Sidecar {
                dtype: DTYPE.into(),
                shape: [s.batch(), s.kept_count(), s.channels()],
                height,
                width,
                seed,
                kept: Some(s.kept_indices().to_vec()),
            },
            data: s.data().iter().map(|&v| v as f32).collect(),
        }
    }

    fn check(&self) -> Result<(), FixtureError> {
        let sc = &self.sidecar;
        if sc.dtype != DTYPE {
            return Err(field(
                "dtype",
                format!("expected {DTYPE:?}, found {:?}", sc.dtype),
            ));
        }
        let [b, n, c] = sc.shape;
        if self.data.len() != b * n * c {
            return Err(field(
                "shape",
                format!(
                    "{:?} needs {} values, buffer has {}",
                    sc.shape,
                    b * n * c,
                    self.data.len()
                ),
            ));
        }
        match &sc.kept {
            None if n != sc.height * sc.width => Err(field(
                "shape",
                format!("{n} tokens for a {}x{} grid", sc.height, sc.width),
            )),
            Some(k) if k.len() != b => {
                Err(field("kept", format!("{} rows for batch {b}", k.len())))
            }
            _ => Ok(()),
        }
    }

    fn array(&self) -> Array3<f64> {
        let [b, n, c] = self.sidecar.shape;
        Array3::from_shape_vec((b, n, c), self.data.iter().map(|&v| v as f64).collect())
            .expect("checked length")
    }

    pub fn is_sparse(&self) -> bool {
        self.sidecar.kept.is_some()
    }

    pub fn to_grid(&self) -> Result<FeatureGrid, FixtureError> {
        self.check()?;
        if self.is_sparse() {
            return Err(field("kept", "expected a dense fixture"));
        }
        Ok(FeatureGrid::new(
            self.array(),
            self.sidecar.height,
            self.sidecar.width,
        )?)
    }

    pub fn to_sparse(&self) -> Result<SparseTokens, FixtureError> {
        self.check()?;
        let kept = self
            .sidecar
            .kept
            .clone()
            .ok_or_else(|| field("kept", "expected a sparse fixture"))?;
        Ok(SparseTokens::new(
            self.array(),
            kept,
            self.sidecar.height,
            self.sidecar.width,
        )?)
    }

    pub fn write(&self, stem: &Path) -> Result<(PathBuf, PathBuf), FixtureError> {
        self.check()?;
        let (bin, json) = paths(stem);
        if let Some(dir) = bin.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| FixtureError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bin, bytes).map_err(|source| FixtureError::Io {
            path: bin.clone(),
            source,
        })?;
        let mut text = serde_json::to_string_pretty(&self.sidecar).expect("serializable");
        text.push('\n');
        fs::write(&json, text).map_err(|source| FixtureError::Io {
            path: json.clone(),
            source,
        })?;
        Ok((bin, json))
    }

    pub fn read(stem: &Path) -> Result<Self, FixtureError> {
        let (bin, json) = paths(stem);
        let text = fs::read_to_string(&json).map_err(|source| FixtureError::Io {
            path: json.clone(),
            source,
        })?;
        let sidecar: Sidecar =
            serde_json::from_str(&text).map_err(|source| FixtureError::Sidecar {
                path: json.clone(),
                source,
            })?;
        let bytes = fs::read(&bin).map_err(|source| FixtureError::Io {
            path: bin.clone(),
            source,
        })?;
        if bytes.len() % 4 != 0 {
            return Err(field(
                "data",
                format!("{} bytes is not a whole number of f32", bytes.len()),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let fx = Self { sidecar, data };
        fx.check()?;
        Ok(fx)
    }
}

/// Joint selection on a dense fixture; returns the sparse fixture.
pub fn select_fixture(input: &Fixture, params: &PruneParams) -> Result<Fixture, FixtureError> {
    let x = input.to_grid()?;
    let (sparse, _) = joint_select(&x, params)?;
    Ok(Fixture::from_sparse(&sparse, input.sidecar.seed))
}

/// Nearest-neighbor propagation of a sparse fixture back to its grid.
pub fn propagate_fixture(input: &Fixture) -> Result<Fixture, FixtureError> {
    let sparse = input.to_sparse()?;
    Ok(Fixture::from_grid(
        &nn_propagate(&sparse)?,
        input.sidecar.seed,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_variants_agree() {
        let expect = (PathBuf::from("d/x.bin"), PathBuf::from("d/x.json"));
        assert_eq!(paths(Path::new("d/x")), expect);
        assert_eq!(paths(Path::new("d/x.bin")), expect);
        assert_eq!(paths(Path::new("d/x.json")), expect);
        assert_eq!(paths(Path::new("d/x.v1")).0, PathBuf::from("d/x.v1.bin"));
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let fx = Fixture::random(1, 4, 4, 3, 1);
        let s = select_fixture(&fx, &PruneParams::default()).unwrap();
        assert_eq!(s.sidecar.kept, Some(vec![(0..16).collect()]));
        assert_eq!(s.data, fx.data);
        assert_eq!(propagate_fixture(&s).unwrap().data, fx.data);
    }

    #[test]
    fn single_kept_fills_constant() {
        let fx = Fixture::random(1, 1, 16, 4, 2);
        let s = select_fixture(&fx, &PruneParams::with_ratio(0.95)).unwrap();
        assert_eq!(s.sidecar.shape, [1, 1, 4]);
        let d = propagate_fixture(&s).unwrap();
        for tok in d.data.chunks(4) {
            assert_eq!(tok, &s.data[..]);
        }
    }

    #[test]
    fn inconsistent_sidecar_names_field() {
        let mut fx = Fixture::random(1, 2, 2, 1, 0);
        fx.sidecar.dtype = "f64".into();
        assert!(matches!(
            fx.to_grid(),
            Err(FixtureError::Field { field: "dtype", .. })
        ));
        let mut fx = Fixture::random(1, 2, 2, 1, 0);
        fx.data.pop();
        assert!(matches!(
            fx.to_grid(),
            Err(FixtureError::Field { field: "shape", .. })
        ));
        let fx = Fixture::random(1, 2, 2, 1, 0);
        assert!(matches!(
            fx.to_sparse(),
            Err(FixtureError::Field { field: "kept", .. })
        ));
    }
}
