//! Cartesian phase-encode sampling, the magnitude low-resolution degradation,
//! and diagnostics for how well the k-space of a magnitude image stands in
//! for the acquired k-space.
//!
//! Phase-encode lines are columns of the centered k-space grid. A low
//! resolution acquisition keeps a contiguous block of columns around the
//! zero-frequency column and zero-fills the rest, so every image in the
//! pipeline lives on the full `H x W` grid.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numcore::stats::percentile_sorted;
use crate::numcore::{
    fft2_centered, ifft2_centered, magnitude, ComplexImage, KSpaceGrid, RealImage,
};

/// The set of retained phase-encode columns on an `H x W` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    grid_height: usize,
    grid_width: usize,
    retained: Vec<usize>,
    column_flags: Vec<bool>,
}

impl SamplingMask {
    /// Mask from an arbitrary set of column indices. Duplicates are merged.
    pub fn new(grid_height: usize, grid_width: usize, mut lines: Vec<usize>) -> Result<Self> {
        if grid_height == 0 || grid_width == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask grid must be non-empty, got {grid_height}x{grid_width}"
            )));
        }
        lines.sort_unstable();
        lines.dedup();
        if lines.is_empty() {
            return Err(Error::InvalidArgument("mask retains no lines".into()));
        }
        if let Some(&bad) = lines.iter().find(|&&j| j >= grid_width) {
            return Err(Error::InvalidArgument(format!(
                "retained line {bad} outside grid width {grid_width}"
            )));
        }
        let mut column_flags = vec![false; grid_width];
        for &j in &lines {
            column_flags[j] = true;
        }
        Ok(Self {
            grid_height,
            grid_width,
            retained: lines,
            column_flags,
        })
    }

    /// Every column retained.
    pub fn full(grid_height: usize, grid_width: usize) -> Result<Self> {
        Self::new(grid_height, grid_width, (0..grid_width).collect())
    }

    /// Columns `c - half_width ..= c + half_width` around the center column
    /// `c = W / 2`. Symmetric under `j -> 2c - j` whenever it fits the grid.
    pub fn symmetric_central(grid_height: usize, grid_width: usize, half_width: usize) -> Result<Self> {
        let c = grid_width / 2;
        if half_width > c || c + half_width >= grid_width {
            return Err(Error::InvalidArgument(format!(
                "half width {half_width} does not fit a grid of width {grid_width}"
            )));
        }
        Self::new(grid_height, grid_width, (c - half_width..=c + half_width).collect())
    }

    pub fn grid_height(&self) -> usize {
        self.grid_height
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.grid_height, self.grid_width)
    }

    pub fn retained_lines(&self) -> &[usize] {
        &self.retained
    }

    pub fn contains_column(&self, col: usize) -> bool {
        self.column_flags.get(col).copied().unwrap_or(false)
    }

    /// Whether the flat row-major index of a grid sample is in the mask.
    pub fn contains_index(&self, idx: usize) -> bool {
        self.column_flags[idx % self.grid_width]
    }

    /// Closed under reflection through the center column, `j -> 2c - j mod W`.
    pub fn is_center_symmetric(&self) -> bool {
        let (w, c) = (self.grid_width, self.grid_width / 2);
        self.retained
            .iter()
            .all(|&j| self.column_flags[(2 * c + w - j) % w])
    }

    fn check_dims(&self, operand: &'static str, dims: (usize, usize)) -> Result<()> {
        if dims != self.dims() {
            return Err(Error::shape(operand, self.dims(), dims));
        }
        Ok(())
    }
}

/// Keep `m = round(W / factor)` contiguous columns starting at
/// `W/2 - m/2`, clamped to the grid.
pub fn central_mask(grid_height: usize, grid_width: usize, factor: usize) -> Result<SamplingMask> {
    if factor == 0 {
        return Err(Error::InvalidArgument("undersampling factor must be >= 1".into()));
    }
    if factor > grid_width {
        return Err(Error::InvalidArgument(format!(
            "undersampling factor {factor} exceeds grid width {grid_width}"
        )));
    }
    let m = ((grid_width as f64 / factor as f64).round() as usize).clamp(1, grid_width);
    let c = grid_width / 2;
    let start = c.saturating_sub(m / 2).min(grid_width - m);
    SamplingMask::new(grid_height, grid_width, (start..start + m).collect())
}

/// Zero every column outside the mask.
pub fn apply_mask(k: &KSpaceGrid, mask: &SamplingMask) -> Result<KSpaceGrid> {
    mask.check_dims("apply_mask k-space", k.dims())?;
    let mut out = k.clone();
    for (idx, v) in out.data_mut().iter_mut().enumerate() {
        if !mask.contains_index(idx) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    Ok(out)
}

/// Magnitude low-resolution image `|F^-1 M F x|` on the full grid.
pub fn degrade(x_hr: &ComplexImage, mask: &SamplingMask) -> Result<RealImage> {
    mask.check_dims("degrade input", x_hr.dims())?;
    let k = apply_mask(&fft2_centered(x_hr), mask)?;
    Ok(magnitude(&ifft2_centered(&k)))
}

fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Spread of the image phase in degrees.
///
/// Over the support `|x| > 0.1 max|x|`, phases are recentered on the
/// circular mean, recentered again on the median of the recentered values,
/// and the 2.5-97.5 percentile span of the result is returned.
pub fn phase_variation_deg(x: &ComplexImage) -> Result<f64> {
    let max_mag = x.data().iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max_mag <= 0.0 {
        return Err(Error::Degenerate("image is identically zero".into()));
    }
    let threshold = 0.1 * max_mag;
    let phases: Vec<f64> = x
        .data()
        .iter()
        .filter(|c| c.norm() > threshold)
        .map(|c| c.arg())
        .collect();
    if phases.is_empty() {
        return Err(Error::Degenerate("empty phase support".into()));
    }

    let (s, c) = phases
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    let mean_dir = if s.hypot(c) > 1e-12 * phases.len() as f64 {
        s.atan2(c)
    } else {
        0.0
    };
    let mut centered: Vec<f64> = phases.iter().map(|a| wrap_angle(a - mean_dir)).collect();
    centered.sort_by(f64::total_cmp);
    let median = percentile_sorted(&centered, 50.0);
    let mut recentered: Vec<f64> = centered.iter().map(|a| wrap_angle(a - median)).collect();
    recentered.sort_by(f64::total_cmp);

    let span = percentile_sorted(&recentered, 97.5) - percentile_sorted(&recentered, 2.5);
    Ok(span.to_degrees())
}

/// Relative discrepancy on the retained frequencies between the k-space of
/// the magnitude low-resolution image and the true masked k-space.
pub fn magnitude_kspace_gap(x_hr: &ComplexImage, mask: &SamplingMask) -> Result<f64> {
    let true_k = apply_mask(&fft2_centered(x_hr), mask)?;
    let lr = degrade(x_hr, mask)?;
    let substitute = apply_mask(&fft2_centered(&lr.to_complex()), mask)?;
    let den = true_k.l2_norm();
    if den == 0.0 {
        return Err(Error::Degenerate(
            "masked k-space of the reference image is zero".into(),
        ));
    }
    let num = true_k
        .data()
        .iter()
        .zip(substitute.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64;

    use super::*;

    fn random_grid(rng: &mut Pcg64, h: usize, w: usize) -> KSpaceGrid {
        KSpaceGrid::from_centered(
            h,
            w,
            (0..h * w)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    /// Gaussian bump on a small pedestal: real, positive, and band-limited
    /// well inside a 17-column central window on a 64x64 grid.
    fn gaussian_bump(n: usize) -> ComplexImage {
        let c = (n / 2) as f64;
        ComplexImage::from_fn(n, n, |i, j| {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            Complex64::new(0.05 + (-(di * di + dj * dj) / (2.0 * 8.0 * 8.0)).exp(), 0.0)
        })
    }

    #[test]
    fn central_mask_examples() {
        assert_eq!(central_mask(8, 8, 4).unwrap().retained_lines(), &[3, 4]);
        assert_eq!(
            central_mask(8, 8, 1).unwrap().retained_lines(),
            &(0..8).collect::<Vec<_>>()[..]
        );
        assert_eq!(
            central_mask(64, 64, 4).unwrap().retained_lines(),
            &(24..40).collect::<Vec<_>>()[..]
        );
        assert!(central_mask(8, 8, 9).is_err());
        assert!(central_mask(8, 8, 0).is_err());
    }

    #[test]
    fn mask_symmetry_detection() {
        assert!(!central_mask(64, 64, 4).unwrap().is_center_symmetric());
        assert!(central_mask(64, 64, 1).unwrap().is_center_symmetric());
        assert!(SamplingMask::symmetric_central(64, 64, 8).unwrap().is_center_symmetric());
        // odd retained count on an even grid is centered exactly
        assert!(central_mask(10, 10, 2).unwrap().is_center_symmetric());
    }

    #[test]
    fn apply_mask_examples() {
        let mut rng = Pcg64::seed_from_u64(5);
        let k = random_grid(&mut rng, 6, 8);
        let full = SamplingMask::full(6, 8).unwrap();
        assert_eq!(apply_mask(&k, &full).unwrap(), k);

        let single = SamplingMask::new(6, 8, vec![3]).unwrap();
        let masked = apply_mask(&k, &single).unwrap();
        for (idx, v) in masked.data().iter().enumerate() {
            if idx % 8 == 3 {
                assert_eq!(*v, k.data()[idx]);
            } else {
                assert_eq!(v.norm(), 0.0);
            }
        }
        assert_eq!(apply_mask(&masked, &single).unwrap(), masked);
        assert!(apply_mask(&KSpaceGrid::zeros(6, 7), &single).is_err());
    }

    #[test]
    fn degrade_limiting_cases() {
        let x = RealImage::from_fn(6, 6, |i, j| (i + 2 * j) as f64 * 0.1);
        let full = SamplingMask::full(6, 6).unwrap();
        let out = degrade(&x.to_complex(), &full).unwrap();
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = degrade(&ComplexImage::zeros(6, 6), &central_mask(6, 6, 2).unwrap()).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn phase_variation_examples() {
        let real = RealImage::from_fn(16, 16, |i, j| 1.0 + ((i * j) % 5) as f64).to_complex();
        assert!(phase_variation_deg(&real).unwrap().abs() < 1e-9);

        let phi = 1.1f64;
        let constant = ComplexImage::from_fn(16, 16, |i, j| {
            Complex64::from_polar(1.0 + ((i + j) % 3) as f64, phi)
        });
        assert!(phase_variation_deg(&constant).unwrap().abs() < 1e-9);

        // uniform ramp over 40 degrees: the central 95% spans 38 degrees
        let n = 64;
        let ramp = ComplexImage::from_fn(n, n, |_, j| {
            let t = j as f64 / (n - 1) as f64;
            Complex64::from_polar(1.0, (t * 40.0 - 20.0).to_radians())
        });
        let span = phase_variation_deg(&ramp).unwrap();
        assert!((span - 38.0).abs() <= 1.0, "span {span}");

        assert!(phase_variation_deg(&ComplexImage::zeros(4, 4)).is_err());
    }

    #[test]
    fn phase_variation_handles_wraparound() {
        // phases clustered around +-180 degrees
        let img = ComplexImage::from_fn(64, 64, |_, j| {
            let t = j as f64 / 63.0;
            Complex64::from_polar(1.0, (180.0 - 20.0 + 40.0 * t).to_radians())
        });
        let span = phase_variation_deg(&img).unwrap();
        assert!((span - 38.0).abs() <= 1.0, "span {span}");
    }

    #[test]
    fn gap_vanishes_for_band_limited_positive_image() {
        let x = gaussian_bump(64);
        let mask = SamplingMask::symmetric_central(64, 64, 8).unwrap();
        let gap = magnitude_kspace_gap(&x, &mask).unwrap();
        assert!(gap < 1e-10, "gap {gap}");
    }

    #[test]
    fn gap_with_full_mask_detects_complex_input() {
        let full = SamplingMask::full(16, 16).unwrap();
        let real = RealImage::from_fn(16, 16, |i, j| 0.5 + ((i + j) % 4) as f64).to_complex();
        assert!(magnitude_kspace_gap(&real, &full).unwrap() < 1e-12);
        let signed = RealImage::from_fn(16, 16, |i, _| if i < 8 { 1.0 } else { -1.0 }).to_complex();
        assert!(magnitude_kspace_gap(&signed, &full).unwrap() > 0.1);
        assert!(magnitude_kspace_gap(&ComplexImage::zeros(16, 16), &full).is_err());
    }
}
