//! Independent reference implementations used by the integration tests.
//! Nothing here calls the code paths it is used to check.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scaleprune_core::FeatureGrid;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_grid(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, c: usize) -> FeatureGrid {
    FeatureGrid::from_fn(b, h, w, c, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

/// Leading eigenvector and the two largest eigenvalues of `X^T X`.
pub fn leading_eigen(x: &Array2<f64>) -> (Vec<f64>, f64, f64) {
    let (l, c) = x.dim();
    let m = DMatrix::from_fn(l, c, |i, j| x[[i, j]]);
    let cov = m.transpose() * &m;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let v = eig.eigenvectors.column(order[0]).iter().copied().collect();
    (v, eig.eigenvalues[order[0]], eig.eigenvalues[order[1]])
}

pub fn explicit_center(x: &Array2<f64>) -> Array2<f64> {
    let (l, c) = x.dim();
    let mut out = x.clone();
    for j in 0..c {
        let mean: f64 = (0..l).map(|i| x[[i, j]]).sum::<f64>() / l as f64;
        for i in 0..l {
            out[[i, j]] -= mean;
        }
    }
    out
}

/// Sliding-window high-pass energy with valid-count borders.
pub fn highpass_energy(x: &FeatureGrid) -> Vec<Vec<f64>> {
    let (b, h, w, c) = x.shape();
    (0..b)
        .map(|bi| {
            let mut out = vec![0.0; h * w];
            for r in 0..h as isize {
                for col in 0..w as isize {
                    let mut e = 0.0;
                    for ch in 0..c {
                        let (mut sum, mut n) = (0.0, 0.0);
                        for dr in -1..=1 {
                            for dc in -1..=1 {
                                let (rr, cc) = (r + dr, col + dc);
                                if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize {
                                    sum += x.get(bi, rr as usize, cc as usize, ch);
                                    n += 1.0;
                                }
                            }
                        }
                        let hi = x.get(bi, r as usize, col as usize, ch) - sum / n;
                        e += hi * hi;
                    }
                    out[r as usize * w + col as usize] = e;
                }
            }
            out
        })
        .collect()
}

/// Full sort by (score desc, index asc), first k, ascending.
pub fn sort_select(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut kept = idx[..k].to_vec();
    kept.sort();
    kept
}

/// Brute-force nearest kept position for every cell; ties keep the earliest.
pub fn brute_voronoi(h: usize, w: usize, kept: &[usize]) -> Vec<usize> {
    (0..h * w)
        .map(|i| {
            let (pr, pc) = ((i / w) as i64, (i % w) as i64);
            let d: Vec<i64> = kept
                .iter()
                .map(|&j| {
                    let (qr, qc) = ((j / w) as i64, (j % w) as i64);
                    (pr - qr).pow(2) + (pc - qc).pow(2)
                })
                .collect();
            let min = *d.iter().min().unwrap();
            d.iter().position(|&v| v == min).unwrap()
        })
        .collect()
}

/// Random sorted subset of `0..n` with `k` elements.
pub fn random_subset(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        all.swap(i, j);
    }
    let mut s = all[..k].to_vec();
    s.sort();
    s
}
