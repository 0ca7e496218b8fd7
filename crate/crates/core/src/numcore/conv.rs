//! 3x3, stride-1, zero-padded 2D convolution via im2col and GEMM.

/// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`, `c: m x n`,
/// where either operand may be read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold `[c_in, h, w]` into `[c_in * 9, h * w]` patch columns.
fn im2col(input: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut cols = vec![0.0; c_in * 9 * hw];
    for c in 0..c_in {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: fold patch columns back, summing overlaps.
fn col2im(cols: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; c_in * hw];
    for c in 0..c_in {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

/// Forward convolution. `input: [c_in, h, w]`, `weights: [c_out, c_in, 3, 3]`,
/// `bias: [c_out]`, returns `[c_out, h, w]`.
pub(crate) fn conv3x3_forward(
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let cols = im2col(input, c_in, h, w);
    let mut out = vec![0.0; c_out * hw];
    for (o, chunk) in out.chunks_exact_mut(hw).enumerate() {
        chunk.fill(bias[o]);
    }
    gemm(c_out, c_in * 9, hw, weights, false, &cols, false, 1.0, &mut out);
    out
}

pub(crate) struct ConvGrads {
    pub input: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn conv3x3_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> ConvGrads {
    let hw = h * w;
    let k = c_in * 9;
    let cols = im2col(input, c_in, h, w);

    let mut grad_w = vec![0.0; c_out * k];
    gemm(c_out, hw, k, grad_out, false, &cols, true, 0.0, &mut grad_w);

    let grad_b = grad_out.chunks_exact(hw).map(|c| c.iter().sum()).collect();

    let mut grad_cols = vec![0.0; k * hw];
    gemm(k, c_out, hw, weights, true, grad_out, false, 0.0, &mut grad_cols);
    let grad_in = col2im(&grad_cols, c_in, h, w);

    ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        input: &[f64],
        weights: &[f64],
        bias: &[f64],
        c_in: usize,
        c_out: usize,
        h: usize,
        w: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; c_out * h * w];
        for o in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[o];
                    for c in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weights[((o * c_in + c) * 3 + ky) * 3 + kx]
                                    * input[(c * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_loop() {
        let (c_in, c_out, h, w) = (2, 3, 5, 4);
        let input: Vec<f64> = (0..c_in * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let weights: Vec<f64> = (0..c_out * c_in * 9)
            .map(|i| ((i * 5) % 13) as f64 * 0.1 - 0.6)
            .collect();
        let bias = vec![0.5, -1.0, 0.25];
        let fast = conv3x3_forward(&input, &weights, &bias, c_in, c_out, h, w);
        let slow = naive_conv(&input, &weights, &bias, c_in, c_out, h, w);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..c * 9 * h * w).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = im2col(&x, c, h, w).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&col2im(&y, c, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
