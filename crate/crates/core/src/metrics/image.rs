//! Full-reference image quality: NRMSE and SSIM.

use crate::error::{Error, Result};
use crate::numcore::RealImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(test: &RealImage, reference: &RealImage) -> Result<()> {
    if test.dims() != reference.dims() {
        return Err(Error::shape("test image", reference.dims(), test.dims()));
    }
    Ok(())
}

/// `||test - ref||_2 / ||ref||_2`.
pub fn nrmse(test: &RealImage, reference: &RealImage) -> Result<f64> {
    check_shapes(test, reference)?;
    let den = reference.l2_norm();
    if den == 0.0 {
        return Err(Error::Degenerate("reference image has zero norm".into()));
    }
    let num = test
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// SSIM with the dynamic range taken from the reference.
pub fn ssim(test: &RealImage, reference: &RealImage) -> Result<f64> {
    let range = reference.max() - reference.min();
    if range <= 0.0 {
        return Err(Error::Degenerate("reference image has zero dynamic range".into()));
    }
    ssim_with_range(test, reference, range)
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable window average over every fully contained window position.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|j| k[j] * data[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|j| k[j] * rows[(r + j) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5) with
/// `C1 = (0.01 L)^2` and `C2 = (0.03 L)^2`.
pub fn ssim_with_range(a: &RealImage, b: &RealImage, range: f64) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::Degenerate(format!("invalid dynamic range {range}")));
    }
    let k = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(x, h, w, &k);
    let my = filter_valid(y, h, w, &k);
    let exx = filter_valid(&xx, h, w, &k);
    let eyy = filter_valid(&yy, h, w, &k);
    let exy = filter_valid(&xy, h, w, &k);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cov = exy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use rand_pcg::Pcg64;

    use super::*;

    fn pattern(h: usize, w: usize) -> RealImage {
        RealImage::from_fn(h, w, |r, c| {
            ((r as f64) * 0.4).sin() * ((c as f64) * 0.3).cos() + 0.1 * r as f64 / h as f64
        })
    }

    #[test]
    fn nrmse_examples() {
        let r = pattern(8, 9);
        assert_eq!(nrmse(&r, &r).unwrap(), 0.0);
        for (h, w) in [(1, 1), (3, 7), (16, 16)] {
            let ones = RealImage::from_fn(h, w, |_, _| 1.0);
            let twos = RealImage::from_fn(h, w, |_, _| 2.0);
            assert!((nrmse(&twos, &ones).unwrap() - 1.0).abs() < 1e-15);
        }
        let t = r.map(|v| v + 0.3);
        let base = nrmse(&t, &r).unwrap();
        for c in [0.01, 3.0, 1e5] {
            assert!((nrmse(&t.scale(c), &r.scale(c)).unwrap() - base).abs() < 1e-12);
        }
        assert!(base <= (t.l2_norm() + r.l2_norm()) / r.l2_norm());
        assert!(nrmse(&r, &RealImage::zeros(8, 9)).is_err());
        assert!(nrmse(&r, &RealImage::zeros(9, 8)).is_err());
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let r = pattern(24, 20);
        assert_eq!(ssim(&r, &r).unwrap(), 1.0);
    }

    #[test]
    fn ssim_negated_checkerboard_is_negative() {
        let board = RealImage::from_fn(16, 16, |r, c| if (r + c) % 2 == 0 { 1.0 } else { -1.0 });
        let s = ssim(&board.scale(-1.0), &board).unwrap();
        assert!(s < 0.0, "{s}");
        assert!(s >= -1.0);
    }

    #[test]
    fn ssim_decreases_with_noise() {
        let r = pattern(32, 32);
        let mut rng = Pcg64::seed_from_u64(4);
        let noise: Vec<f64> = (0..32 * 32).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let noisy = |s: f64| RealImage::new(32, 32, r.data().iter().zip(&noise).map(|(a, n)| a + s * n).collect()).unwrap();
        let mut prev = 1.0;
        for sigma in [0.01, 0.05, 0.1, 0.3, 1.0] {
            let v = ssim(&noisy(sigma), &r).unwrap();
            assert!(v < prev, "sigma {sigma}: {v} !< {prev}");
            prev = v;
        }
    }

    #[test]
    fn ssim_symmetric_with_fixed_range() {
        let a = pattern(20, 20);
        let b = a.map(|v| 0.7 * v + 0.05 * v * v);
        let ab = ssim_with_range(&a, &b, 2.0).unwrap();
        let ba = ssim_with_range(&b, &a, 2.0).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_direct_window_sum() {
        // Direct per-window evaluation with an explicit 2D Gaussian.
        let a = pattern(13, 12);
        let b = a.map(|v| v * 0.8 + 0.1);
        let range = a.max() - a.min();
        let k1 = gaussian_window();
        let mut acc = 0.0;
        let mut count = 0.0;
        for r0 in 0..3 {
            for c0 in 0..2 {
                let (mut ux, mut uy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = k1[i] * k1[j];
                        let (x, y) = (a.get(r0 + i, c0 + j), b.get(r0 + i, c0 + j));
                        ux += wgt * x;
                        uy += wgt * y;
                        sxx += wgt * x * x;
                        syy += wgt * y * y;
                        sxy += wgt * x * y;
                    }
                }
                let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
                let (vx, vy, cv) = (sxx - ux * ux, syy - uy * uy, sxy - ux * uy);
                acc += (2.0 * ux * uy + c1) * (2.0 * cv + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        assert!((ssim(&b, &a).unwrap() - acc / count).abs() < 1e-12);
    }

    #[test]
    fn ssim_errors() {
        let small = RealImage::zeros(10, 20);
        assert!(ssim_with_range(&small, &small, 1.0).is_err());
        let flat = RealImage::from_fn(16, 16, |_, _| 2.0);
        assert!(ssim(&flat, &flat).is_err());
        assert!(ssim(&pattern(16, 16), &pattern(16, 17)).is_err());
    }
}
