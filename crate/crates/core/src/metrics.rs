//! Fidelity of a feature grid against a reference grid.
//!
//! Features are unbounded, so the peak value used by both metrics is the
//! dynamic range (max - min) of the reference; a constant reference falls back
//! to a range of 1.
//!
//! SSIM follows the usual Gaussian-window form (11x11, sigma 1.5, K1 = 0.01,
//! K2 = 0.03, valid windows only) on the channel-averaged map of each batch
//! row. Maps smaller than 11 in either dimension use a window of
//! `min(H, W)` with sigma scaled by `size / 11`.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;

/// Reported PSNR when the two grids are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &FeatureGrid, b: &FeatureGrid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "cannot compare {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn dynamic_range<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let range = hi - lo;
    if range > 0.0 {
        range
    } else {
        1.0
    }
}

pub fn mse(a: &FeatureGrid, b: &FeatureGrid) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n)
}

/// PSNR of `test` against `reference`, in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &FeatureGrid, test: &FeatureGrid) -> Result<f64> {
    let err = mse(reference, test)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let range = dynamic_range(reference.data().iter());
    Ok((10.0 * (range * range / err).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian of `size` taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Array1<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let k = Array1::from_shape_fn(size, |i| {
        let d = i as f64 - mid;
        (-d * d / (2.0 * sigma * sigma)).exp()
    });
    let s = k.sum();
    k / s
}

/// Window size and sigma used for an `h x w` map.
pub fn ssim_window(h: usize, w: usize) -> (usize, f64) {
    let size = SSIM_WINDOW.min(h).min(w);
    (size, SSIM_SIGMA * size as f64 / SSIM_WINDOW as f64)
}

/// Per-row channel means, each `H x W`.
pub fn channel_mean_maps(x: &FeatureGrid) -> Vec<Array2<f64>> {
    (0..x.batch())
        .map(|b| {
            x.row(b)
                .mean_axis(Axis(1))
                .expect("channels are non-empty")
                .into_shape_with_order((x.height(), x.width()))
                .expect("L = H * W")
        })
        .collect()
}

// Valid-mode separable filtering.
fn filter_valid(img: &Array2<f64>, k: &Array1<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = Array2::<f64>::zeros((h, ow));
    for r in 0..h {
        for c in 0..ow {
            tmp[[r, c]] = (0..n).map(|j| k[j] * img[[r, c + j]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for r in 0..oh {
        for c in 0..ow {
            out[[r, c]] = (0..n).map(|i| k[i] * tmp[[r + i, c]]).sum();
        }
    }
    out
}

/// Mean SSIM of `test` against `reference` over all windows and batch rows.
pub fn ssim(reference: &FeatureGrid, test: &FeatureGrid) -> Result<f64> {
    check_shapes(reference, test)?;
    let ref_maps = channel_mean_maps(reference);
    let test_maps = channel_mean_maps(test);
    let range = dynamic_range(ref_maps.iter().flat_map(|m| m.iter()));
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let (size, sigma) = ssim_window(reference.height(), reference.width());
    let k = gaussian_kernel(size, sigma);

    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in ref_maps.iter().zip(&test_maps) {
        let mu_a = filter_valid(a, &k);
        let mu_b = filter_valid(b, &k);
        let e_aa = filter_valid(&(a * a), &k);
        let e_bb = filter_valid(&(b * b), &k);
        let e_ab = filter_valid(&(a * b), &k);
        for (((((&ma, &mb), &aa), &bb), &ab), _) in mu_a
            .iter()
            .zip(mu_b.iter())
            .zip(e_aa.iter())
            .zip(e_bb.iter())
            .zip(e_ab.iter())
            .zip(0..)
        {
            let var_a = aa - ma * ma;
            let var_b = bb - mb * mb;
            let cov = ab - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
            total += if den == 0.0 { 1.0 } else { num / den };
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(b: usize, h: usize, w: usize, c: usize, seed: u64) -> FeatureGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureGrid::from_fn(b, h, w, c, |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn psnr_identical_is_capped() {
        let a = grid(1, 4, 4, 3, 0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_unit_offset_unit_range() {
        let a =
            FeatureGrid::from_fn(1, 2, 2, 1, |(_, l, _)| if l == 0 { 1.0 } else { 0.0 }).unwrap();
        let b = a.map(|v| v + 1.0).unwrap();
        assert_eq!(mse(&a, &b).unwrap(), 1.0);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn psnr_recomputation() {
        let a = grid(2, 5, 5, 4, 1);
        let b = grid(2, 5, 5, 4, 2);
        let (mut lo, mut hi, mut se) = (f64::MAX, f64::MIN, 0.0);
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            lo = lo.min(*x);
            hi = hi.max(*x);
            se += (x - y) * (x - y);
        }
        let expect = 10.0 * ((hi - lo).powi(2) / (se / 200.0)).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = grid(1, 4, 4, 3, 0);
        let b = grid(1, 4, 4, 2, 0);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_identical_is_exactly_one() {
        for (h, w) in [(16, 16), (12, 20), (5, 7), (1, 1)] {
            let a = grid(2, h, w, 3, 4);
            assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn ssim_anticorrelated_is_negative() {
        // locally zero-mean: luminance term ~ 1, structure term ~ -1
        let a = FeatureGrid::from_fn(1, 16, 16, 2, |(_, l, _)| {
            if (l / 16 + l % 16) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .unwrap();
        let neg = a.map(|v| -v).unwrap();
        assert!(ssim(&a, &neg).unwrap() < -0.99);
    }

    #[test]
    fn ssim_small_maps_use_reduced_window() {
        assert_eq!(ssim_window(32, 32), (11, 1.5));
        let (s, sig) = ssim_window(4, 8);
        assert_eq!(s, 4);
        assert!((sig - 1.5 * 4.0 / 11.0).abs() < 1e-15);
        let k = gaussian_kernel(5, 1.0);
        assert!((k.sum() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[4]);
    }
}
