//! Synthetic complex phantoms with a controlled phase spread.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kspace::phase_variation_deg;
use crate::numcore::{ComplexImage, RealImage};
use crate::rng::stream_rng;

const MIN_SIZE: usize = 16;
const SMOOTH_SIGMA: f64 = 0.7;
const SPAN_TOLERANCE_DEG: f64 = 5.0;
const SCALE_ITERATIONS: usize = 30;

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    intensity: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn random_ellipses<R: Rng>(rng: &mut R) -> Vec<Ellipse> {
    let count = rng.random_range(3..=8);
    let mut out = Vec::with_capacity(count);
    // A large body first, then smaller structures painted over it.
    out.push(Ellipse {
        cy: rng.random_range(-0.08..0.08),
        cx: rng.random_range(-0.08..0.08),
        ry: rng.random_range(0.6..0.85),
        rx: rng.random_range(0.5..0.8),
        angle: rng.random_range(0.0..PI),
        intensity: rng.random_range(0.3..0.6),
    });
    for _ in 1..count {
        out.push(Ellipse {
            cy: rng.random_range(-0.45..0.45),
            cx: rng.random_range(-0.4..0.4),
            ry: rng.random_range(0.05..0.3),
            rx: rng.random_range(0.03..0.25),
            angle: rng.random_range(0.0..PI),
            intensity: rng.random_range(0.0..=1.0),
        });
    }
    out
}

/// Coordinates in [-1, 1] with the centre pixel at 0.
fn coord(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) / (n as f64 / 2.0)
}

fn gaussian_smooth(img: &RealImage, sigma: f64) -> RealImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (h, w) = img.dims();
    let pass = |src: &RealImage, along_rows: bool| {
        RealImage::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let d = j as isize - radius;
                let (rr, cc) = if along_rows {
                    (r as isize, c as isize + d)
                } else {
                    (r as isize + d, c as isize)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += k * src.get(rr as usize, cc as usize);
                }
            }
            acc
        })
    };
    pass(&pass(img, true), false)
}

/// Seeded piecewise-constant ellipse magnitude in [0, 1], lightly smoothed.
pub fn phantom_magnitude(seed: u64, height: usize, width: usize) -> Result<RealImage> {
    check_dims(height, width)?;
    let mut rng = stream_rng(seed, 0);
    let ellipses = random_ellipses(&mut rng);
    let raw = RealImage::from_fn(height, width, |r, c| {
        let (y, x) = (coord(r, height), coord(c, width));
        ellipses
            .iter()
            .rev()
            .find(|e| e.contains(y, x))
            .map_or(0.0, |e| e.intensity)
    });
    Ok(gaussian_smooth(&raw, SMOOTH_SIGMA))
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height < MIN_SIZE || width < MIN_SIZE {
        return Err(Error::InvalidArgument(format!(
            "phantom dimensions must be at least {MIN_SIZE}, got {height}x{width}"
        )));
    }
    Ok(())
}

fn with_phase(mag: &RealImage, phase: &[f64], scale: f64, offset: f64) -> ComplexImage {
    let (h, w) = mag.dims();
    ComplexImage::from_fn(h, w, |r, c| {
        Complex64::from_polar(mag.get(r, c), offset + scale * phase[r * w + c])
    })
}

/// Complex phantom whose `phase_variation_deg` is within 5 degrees of the
/// requested span. A span of zero gives an exactly real image.
pub fn phantom_generate(
    seed: u64,
    height: usize,
    width: usize,
    phase_span_deg: f64,
) -> Result<ComplexImage> {
    if !(0.0..360.0).contains(&phase_span_deg) {
        return Err(Error::InvalidArgument(format!(
            "phase span must lie in [0, 360), got {phase_span_deg}"
        )));
    }
    let mag = phantom_magnitude(seed, height, width)?;
    if phase_span_deg == 0.0 {
        return Ok(mag.to_complex());
    }

    let mut rng = stream_rng(seed, 1);
    let mut coef = [0.0f64; 5];
    for c in &mut coef {
        *c = StandardNormal.sample(&mut rng);
    }
    // Keep the linear part dominant so the surface stays smooth.
    for c in &mut coef[2..] {
        *c *= 0.5;
    }
    let offset = rng.random_range(-PI..PI);
    let phase: Vec<f64> = (0..height * width)
        .map(|i| {
            let (y, x) = (coord(i / width, height), coord(i % width, width));
            coef[0] * x + coef[1] * y + coef[2] * x * x + coef[3] * x * y + coef[4] * y * y
        })
        .collect();

    let mut scale = 1.0;
    let mut measured = phase_variation_deg(&with_phase(&mag, &phase, scale, offset))?;
    for _ in 0..SCALE_ITERATIONS {
        if (measured - phase_span_deg).abs() <= 0.25 || measured <= 0.0 {
            break;
        }
        scale *= phase_span_deg / measured;
        measured = phase_variation_deg(&with_phase(&mag, &phase, scale, offset))?;
    }
    if (measured - phase_span_deg).abs() > SPAN_TOLERANCE_DEG {
        return Err(Error::Degenerate(format!(
            "phase span {phase_span_deg} deg unreachable for seed {seed} (got {measured:.2} deg)"
        )));
    }
    Ok(with_phase(&mag, &phase, scale, offset))
}
