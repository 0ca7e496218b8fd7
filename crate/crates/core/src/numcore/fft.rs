//! Orthonormal centered 2D DFT.
//!
//! `fft2_centered` is `fftshift(DFT(ifftshift(x))) / sqrt(H*W)`: the spatial
//! origin and the zero frequency both sit at index `(H/2, W/2)`. Scaling is
//! `1/sqrt(N)` in each direction so the transform is unitary and its adjoint
//! is its inverse.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::image::{ComplexImage, KSpaceGrid};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalized in-place 2D DFT of a row-major buffer.
fn dft2_in_place(buf: &mut [Complex64], height: usize, width: usize, direction: FftDirection) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(width, direction);
        let col_fft = planner.plan_fft(height, direction);

        let mut scratch =
            vec![Complex64::default(); row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];
        for row in buf.chunks_exact_mut(width) {
            row_fft.process_with_scratch(row, &mut scratch);
        }

        let mut column = vec![Complex64::default(); height];
        for j in 0..width {
            for i in 0..height {
                column[i] = buf[i * width + j];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for i in 0..height {
                buf[i * width + j] = column[i];
            }
        }
    });
}

/// Circularly move the sample at `(h/2, w/2)` to `(0, 0)`.
pub(crate) fn ifftshift(data: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let (ch, cw) = (height / 2, width / 2);
    let mut out = vec![Complex64::default(); data.len()];
    for i in 0..height {
        let di = (i + height - ch) % height;
        for j in 0..width {
            let dj = (j + width - cw) % width;
            out[di * width + dj] = data[i * width + j];
        }
    }
    out
}

/// Circularly move the sample at `(0, 0)` to `(h/2, w/2)`.
pub(crate) fn fftshift(data: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let (ch, cw) = (height / 2, width / 2);
    let mut out = vec![Complex64::default(); data.len()];
    for i in 0..height {
        let di = (i + ch) % height;
        for j in 0..width {
            let dj = (j + cw) % width;
            out[di * width + dj] = data[i * width + j];
        }
    }
    out
}

fn centered_transform(
    data: &[Complex64],
    height: usize,
    width: usize,
    direction: FftDirection,
) -> Vec<Complex64> {
    let mut buf = ifftshift(data, height, width);
    dft2_in_place(&mut buf, height, width, direction);
    let scale = 1.0 / ((height * width) as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
    fftshift(&buf, height, width)
}

/// Raw centered forward transform on a row-major buffer.
pub(crate) fn fft2c_raw(data: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    centered_transform(data, height, width, FftDirection::Forward)
}

/// Raw centered inverse transform on a row-major buffer.
pub(crate) fn ifft2c_raw(data: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    centered_transform(data, height, width, FftDirection::Inverse)
}

pub fn fft2_centered(img: &ComplexImage) -> KSpaceGrid {
    let (h, w) = img.dims();
    KSpaceGrid::from_centered(h, w, fft2c_raw(img.data(), h, w))
        .expect("transform preserves dimensions")
}

pub fn ifft2_centered(k: &KSpaceGrid) -> ComplexImage {
    let (h, w) = k.dims();
    ComplexImage::new(h, w, ifft2c_raw(k.data(), h, w)).expect("transform preserves dimensions")
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64;

    use super::*;

    /// Direct O(N^2) centered DFT: sum over (m, n) of
    /// x(m, n) exp(sign*2*pi*i*((k-ch)(m-ch)/H + (l-cw)(n-cw)/W)) / sqrt(HW).
    fn direct_centered_dft(data: &[Complex64], h: usize, w: usize, sign: f64) -> Vec<Complex64> {
        let (ch, cw) = ((h / 2) as f64, (w / 2) as f64);
        let norm = 1.0 / ((h * w) as f64).sqrt();
        let mut out = vec![Complex64::default(); h * w];
        for k in 0..h {
            for l in 0..w {
                let mut acc = Complex64::default();
                for m in 0..h {
                    for n in 0..w {
                        let phase = sign
                            * 2.0
                            * PI
                            * ((k as f64 - ch) * (m as f64 - ch) / h as f64
                                + (l as f64 - cw) * (n as f64 - cw) / w as f64);
                        acc += data[m * w + n] * Complex64::from_polar(1.0, phase);
                    }
                }
                out[k * w + l] = acc * norm;
            }
        }
        out
    }

    fn random_complex(rng: &mut Pcg64, h: usize, w: usize) -> ComplexImage {
        ComplexImage::from_fn(h, w, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn zeros_map_to_zeros() {
        let k = fft2_centered(&ComplexImage::zeros(4, 4));
        assert!(k.data().iter().all(|c| c.norm() == 0.0));
        let x = ifft2_centered(&KSpaceGrid::zeros(4, 4));
        assert!(x.data().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn constant_image_concentrates_at_center() {
        let c = 1.5;
        let img = ComplexImage::from_fn(4, 4, |_, _| Complex64::new(c, 0.0));
        let k = fft2_centered(&img);
        let direct = direct_centered_dft(img.data(), 4, 4, -1.0);
        for (a, b) in k.data().iter().zip(&direct) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!((k.get(2, 2) - Complex64::new(4.0 * c, 0.0)).norm() < 1e-12);
        let off_center: f64 = k
            .data()
            .iter()
            .enumerate()
            .filter(|(idx, _)| *idx != 2 * 4 + 2)
            .map(|(_, v)| v.norm())
            .sum();
        assert!(off_center < 1e-12);
    }

    #[test]
    fn center_impulse_is_constant_image() {
        let mut k = KSpaceGrid::zeros(4, 6);
        k.data_mut()[2 * 6 + 3] = Complex64::new(1.0, 0.0);
        let img = ifft2_centered(&k);
        let direct = direct_centered_dft(k.data(), 4, 6, 1.0);
        let expected = 1.0 / (24.0f64).sqrt();
        for (a, b) in img.data().iter().zip(&direct) {
            assert!((a - b).norm() < 1e-12);
            assert!((a - Complex64::new(expected, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_sum_on_odd_and_even_sizes() {
        let mut rng = Pcg64::seed_from_u64(11);
        for &(h, w) in &[(5, 7), (6, 4), (3, 8), (1, 5)] {
            let img = random_complex(&mut rng, h, w);
            let fast = fft2_centered(&img);
            let direct = direct_centered_dft(img.data(), h, w, -1.0);
            for (a, b) in fast.data().iter().zip(&direct) {
                assert!((a - b).norm() < 1e-12, "{h}x{w}");
            }
            let back = ifft2_centered(&fast);
            let direct_inv = direct_centered_dft(fast.data(), h, w, 1.0);
            for (a, b) in back.data().iter().zip(&direct_inv) {
                assert!((a - b).norm() < 1e-12, "{h}x{w}");
            }
        }
    }

    #[test]
    fn round_trip_8x6() {
        let mut rng = Pcg64::seed_from_u64(3);
        let img = random_complex(&mut rng, 8, 6);
        let back = ifft2_centered(&fft2_centered(&img));
        let err: f64 = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err / img.l2_norm() < 1e-12);
    }
}
