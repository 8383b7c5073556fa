//! Binary PGM masks of a selection (kept = 255, pruned = 0) plus a CSV of
//! the kept indices.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum MaskError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid selection: {0}")]
    Selection(String),
    #[error("malformed PGM {path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> MaskError + '_ {
    move |source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_selection(kept: &[usize], tokens: usize) -> Result<(), MaskError> {
    if let Some(w) = kept.windows(2).find(|w| w[0] >= w[1]) {
        return Err(MaskError::Selection(format!(
            "indices must be strictly ascending, found {} then {}",
            w[0], w[1]
        )));
    }
    if let Some(&last) = kept.last() {
        if last >= tokens {
            return Err(MaskError::Selection(format!(
                "index {last} out of range for {tokens} tokens"
            )));
        }
    }
    Ok(())
}

/// Encodes a mask as P5 bytes.
pub fn encode_pgm(height: usize, width: usize, kept: &[usize]) -> Result<Vec<u8>, MaskError> {
    check_selection(kept, height * width)?;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let start = out.len();
    out.resize(start + height * width, 0);
    for &i in kept {
        out[start + i] = 255;
    }
    Ok(out)
}

/// Parses a P5 mask; pixels of 255 are kept.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<usize>), String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(format!("expected magic P5, found {}", fields[0]));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad header number {s:?}"))
    };
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(format!("expected maxval 255, found {maxval}"));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != width * height {
        return Err(format!(
            "expected {} pixels, found {}",
            width * height,
            raster.len()
        ));
    }
    let kept = raster
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 255)
        .map(|(i, _)| i)
        .collect();
    Ok((height, width, kept))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<usize>), MaskError> {
    let bytes = fs::read(path).map_err(io(path))?;
    decode_pgm(&bytes).map_err(|message| MaskError::Format {
        path: path.to_path_buf(),
        message,
    })
}

#[derive(Serialize)]
struct IndexRow {
    index: usize,
    row: usize,
    col: usize,
}

pub fn encode_indices_csv(width: usize, kept: &[usize]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for &index in kept {
        w.serialize(IndexRow {
            index,
            row: index / width,
            col: index % width,
        })
        .expect("writing to memory");
    }
    // an empty selection still gets a header
    if kept.is_empty() {
        return "index,row,col\n".into();
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8")
}

/// Writes `<stem>.pgm` and `<stem>.csv`; returns both paths.
pub fn export_mask(
    kept: &[usize],
    (height, width): (usize, usize),
    stem: &Path,
) -> Result<(PathBuf, PathBuf), MaskError> {
    let pgm = stem.with_extension("pgm");
    let csv = stem.with_extension("csv");
    let bytes = encode_pgm(height, width, kept)?;
    if let Some(dir) = pgm.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(&pgm, bytes).map_err(io(&pgm))?;
    fs::write(&csv, encode_indices_csv(width, kept)).map_err(io(&csv))?;
    Ok((pgm, csv))
}
