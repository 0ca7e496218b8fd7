//! Intensity normalization shared by a low/high resolution pair.

use crate::error::{Error, Result};
use crate::numcore::stats::percentile;
use crate::numcore::RealImage;

pub const NORMALIZATION_PERCENTILE: f64 = 95.0;

/// Divide both images by the 95th percentile of `lr`. One shared scale keeps
/// the k-space of the normalized LR image consistent with the normalized
/// reference data.
pub fn normalize_pair(lr: &RealImage, hr: &RealImage) -> Result<(RealImage, RealImage, f64)> {
    if lr.dims() != hr.dims() {
        return Err(Error::shape("hr", lr.dims(), hr.dims()));
    }
    if lr.data().iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("low-resolution image is identically zero".into()));
    }
    let scale = percentile(lr.data(), NORMALIZATION_PERCENTILE);
    if scale <= 0.0 {
        return Err(Error::Degenerate(format!(
            "95th percentile of the low-resolution image is {scale}, cannot normalize"
        )));
    }
    Ok((lr.scale(1.0 / scale), hr.scale(1.0 / scale), scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::reference_kspace;
    use crate::kspace::central_mask;

    #[test]
    fn halves_when_percentile_is_two() {
        // 20 values 0..19 scaled so the 95th percentile is exactly 2.
        let base: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let p = percentile(&base, 95.0);
        let lr = RealImage::new(4, 5, base.iter().map(|v| 2.0 * v / p).collect()).unwrap();
        let hr = RealImage::from_fn(4, 5, |r, c| (r + c) as f64);
        let (l, h, s) = normalize_pair(&lr, &hr).unwrap();
        assert!((s - 2.0).abs() < 1e-15);
        assert_eq!(h.data(), hr.scale(0.5).data());
        assert_eq!(l.data(), lr.scale(0.5).data());
    }

    #[test]
    fn constant_one_is_unchanged() {
        let one = RealImage::from_fn(3, 3, |_, _| 1.0);
        let (l, h, s) = normalize_pair(&one, &one).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(l, one);
        assert_eq!(h, one);
    }

    #[test]
    fn degenerate_inputs_error() {
        let zero = RealImage::zeros(4, 4);
        assert!(normalize_pair(&zero, &zero).is_err());
        let sparse = RealImage::from_fn(10, 10, |r, c| if r == 0 && c == 0 { 1.0 } else { 0.0 });
        assert!(normalize_pair(&sparse, &sparse).is_err());
        assert!(normalize_pair(&RealImage::zeros(4, 4), &RealImage::zeros(4, 5)).is_err());
    }

    #[test]
    fn shared_scale_keeps_reference_kspace_consistent() {
        let lr = RealImage::from_fn(16, 16, |r, c| 1.0 + ((r * 3 + c * 5) % 7) as f64);
        let mask = central_mask(16, 16, 4).unwrap();
        let (l, _, s) = normalize_pair(&lr, &lr).unwrap();
        let s0 = reference_kspace(&lr, &mask).unwrap();
        let s0n = reference_kspace(&l, &mask).unwrap();
        for (a, b) in s0.data().iter().zip(s0n.data()) {
            assert!((a / s - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }
    }
}
