//! Data-consistency layer driven by a magnitude low-resolution image.
//!
//! Given a network prediction `x_cnn` and reference k-space `s0` on the
//! retained columns, the layer solves
//!
//! ```text
//! min_x  || M F x - s0 ||^2 + lambda || x - x_cnn ||^2
//! ```
//!
//! With a unitary `F` and a Cartesian mask this decouples per frequency:
//! off the mask the prediction is kept, on the mask each sample becomes
//! `(lambda * s_cnn + s0) / (1 + lambda)`. The reference `s0` is the masked
//! k-space of the magnitude low-resolution image itself, not acquired raw
//! data. The layer returns the magnitude of the blended image.
//!
//! `lambda = softplus(theta)` keeps the weight positive while `theta` trains
//! unconstrained.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kspace::{apply_mask, SamplingMask};
use crate::numcore::autodiff::{from_complex, to_complex};
use crate::numcore::{
    fft2_centered, ifft2_centered, magnitude, BackwardOp, Graph, KSpaceGrid, Node, RealImage,
    Tensor,
};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trainable data-consistency weight. Only `theta` is stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcParams {
    pub theta: f64,
}

impl DcParams {
    /// Parameters giving the requested `lambda > 0`.
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        // inverse softplus: ln(e^l - 1) = l + ln(1 - e^-l)
        Ok(Self {
            theta: lambda + (-(-lambda).exp()).ln_1p(),
        })
    }

    pub fn lambda(&self) -> f64 {
        softplus(self.theta)
    }
}

impl Default for DcParams {
    /// `lambda = 1`.
    fn default() -> Self {
        Self {
            theta: (std::f64::consts::E - 1.0).ln(),
        }
    }
}

/// Reference k-space for the layer: the masked centered DFT of the
/// magnitude low-resolution image.
pub fn reference_kspace(x_lr: &RealImage, mask: &SamplingMask) -> Result<KSpaceGrid> {
    apply_mask(&fft2_centered(&x_lr.to_complex()), mask)
}

fn blend_in_place(s: &mut [Complex64], s0: &[Complex64], mask: &SamplingMask, lambda: f64) {
    for (idx, (v, r)) in s.iter_mut().zip(s0).enumerate() {
        if mask.contains_index(idx) {
            *v = (*v * lambda + r) / (1.0 + lambda);
        }
    }
}

fn check_inputs(x_cnn: &RealImage, s0: &KSpaceGrid, mask: &SamplingMask) -> Result<()> {
    if x_cnn.dims() != mask.dims() {
        return Err(Error::shape("dc x_cnn", mask.dims(), x_cnn.dims()));
    }
    if s0.dims() != mask.dims() {
        return Err(Error::shape("dc s0", mask.dims(), s0.dims()));
    }
    Ok(())
}

/// Blended k-space for an explicit `lambda >= 0`. Samples of `s0` outside
/// the mask are ignored.
pub fn dc_kspace_with_lambda(
    x_cnn: &RealImage,
    s0: &KSpaceGrid,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<KSpaceGrid> {
    check_inputs(x_cnn, s0, mask)?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut s = fft2_centered(&x_cnn.to_complex());
    blend_in_place(s.data_mut(), s0.data(), mask, lambda);
    Ok(s)
}

/// Blended k-space `s_dc` before the final inverse transform and magnitude.
pub fn dc_kspace(
    x_cnn: &RealImage,
    s0: &KSpaceGrid,
    mask: &SamplingMask,
    params: DcParams,
) -> Result<KSpaceGrid> {
    dc_kspace_with_lambda(x_cnn, s0, mask, params.lambda())
}

pub fn dc_apply(
    x_cnn: &RealImage,
    s0: &KSpaceGrid,
    mask: &SamplingMask,
    params: DcParams,
) -> Result<RealImage> {
    Ok(magnitude(&ifft2_centered(&dc_kspace(x_cnn, s0, mask, params)?)))
}

/// The `lambda = 0` limit: retained samples are replaced by `s0`.
pub fn dc_apply_hard(x_cnn: &RealImage, s0: &KSpaceGrid, mask: &SamplingMask) -> Result<RealImage> {
    Ok(magnitude(&ifft2_centered(&dc_kspace_with_lambda(
        x_cnn, s0, mask, 0.0,
    )?)))
}

/// Differentiable layer on a graph. `x_cnn` is `[1, H, W]`, `theta` is a
/// one-element tensor.
pub fn dc_apply_node(
    graph: &mut Graph,
    x_cnn: Node,
    s0: &KSpaceGrid,
    mask: &SamplingMask,
    theta: Node,
) -> Result<Node> {
    let s_cnn = dc_forward_kspace(graph, x_cnn, s0, mask)?;
    let theta_value = graph.value(theta).clone();
    if theta_value.len() != 1 {
        return Err(Error::shape("dc theta", [1], theta_value.shape()));
    }
    let op = BlendOp::new(s0, mask, Some(theta_value.item()));
    let blended = op.forward(graph.value(s_cnn));
    let s_dc = graph.apply(Box::new(op), &[s_cnn, theta], blended);
    let z = graph.ifft2c(s_dc)?;
    graph.cabs(z)
}

/// Differentiable hard (`lambda = 0`) layer.
pub fn dc_apply_hard_node(
    graph: &mut Graph,
    x_cnn: Node,
    s0: &KSpaceGrid,
    mask: &SamplingMask,
) -> Result<Node> {
    let s_cnn = dc_forward_kspace(graph, x_cnn, s0, mask)?;
    let op = BlendOp::new(s0, mask, None);
    let blended = op.forward(graph.value(s_cnn));
    let s_dc = graph.apply(Box::new(op), &[s_cnn], blended);
    let z = graph.ifft2c(s_dc)?;
    graph.cabs(z)
}

fn dc_forward_kspace(
    graph: &mut Graph,
    x_cnn: Node,
    s0: &KSpaceGrid,
    mask: &SamplingMask,
) -> Result<Node> {
    let shape = graph.value(x_cnn).shape().to_vec();
    let (h, w) = mask.dims();
    if shape[..] != [1, h, w] {
        return Err(Error::shape("dc x_cnn", [1, h, w], shape));
    }
    if s0.dims() != mask.dims() {
        return Err(Error::shape("dc s0", mask.dims(), s0.dims()));
    }
    graph.fft2c(x_cnn)
}

/// Per-frequency blend on a `[2, H, W]` k-space tensor. `theta` is `None`
/// for the hard variant.
struct BlendOp {
    s0: Vec<Complex64>,
    on_mask: Vec<bool>,
    height: usize,
    width: usize,
    theta: Option<f64>,
}

impl BlendOp {
    fn new(s0: &KSpaceGrid, mask: &SamplingMask, theta: Option<f64>) -> Self {
        let n = s0.data().len();
        Self {
            s0: s0.data().to_vec(),
            on_mask: (0..n).map(|i| mask.contains_index(i)).collect(),
            height: s0.height(),
            width: s0.width(),
            theta,
        }
    }

    fn lambda(&self) -> f64 {
        self.theta.map_or(0.0, softplus)
    }

    fn forward(&self, s_cnn: &Tensor) -> Tensor {
        let lambda = self.lambda();
        let mut s = to_complex(s_cnn);
        for (i, v) in s.iter_mut().enumerate() {
            if self.on_mask[i] {
                *v = (*v * lambda + self.s0[i]) / (1.0 + lambda);
            }
        }
        from_complex(&s, self.height, self.width)
    }
}

impl BackwardOp for BlendOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        let lambda = self.lambda();
        let hw = self.height * self.width;
        let keep = lambda / (1.0 + lambda);
        let g = grad_output.data();
        let s = inputs[0].data();

        let mut grad_s = grad_output.clone();
        let mut dlambda = 0.0;
        {
            let gs = grad_s.data_mut();
            for i in 0..hw {
                if !self.on_mask[i] {
                    continue;
                }
                gs[i] *= keep;
                gs[hw + i] *= keep;
                // d s_dc / d lambda = (s_cnn - s0) / (1 + lambda)^2
                let dre = s[i] - self.s0[i].re;
                let dim = s[hw + i] - self.s0[i].im;
                dlambda += g[i] * dre + g[hw + i] * dim;
            }
        }
        match self.theta {
            Some(theta) => {
                let dtheta = dlambda / (1.0 + lambda).powi(2) * sigmoid(theta);
                vec![grad_s, Tensor::new(inputs[1].shape().to_vec(), vec![dtheta]).unwrap()]
            }
            None => vec![grad_s],
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg64;

    use super::*;
    use crate::kspace::central_mask;
    use crate::numcore::ComplexImage;

    fn random_image(rng: &mut Pcg64, h: usize, w: usize) -> RealImage {
        RealImage::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn softplus_parameterization() {
        assert!((DcParams::default().lambda() - 1.0).abs() < 1e-14);
        for &l in &[1e-6, 0.3, 1.0, 7.5, 40.0] {
            let p = DcParams::from_lambda(l).unwrap();
            assert!((p.lambda() - l).abs() < 1e-9 * l.max(1.0), "{l}");
        }
        for &t in &[-700.0, -30.0, 0.0, 30.0, 700.0] {
            assert!(DcParams { theta: t }.lambda() > 0.0);
            assert!(DcParams { theta: t }.lambda().is_finite());
        }
        assert!(DcParams::from_lambda(0.0).is_err());
    }

    #[test]
    fn single_frequency_blend() {
        let mask = SamplingMask::new(1, 1, vec![0]).unwrap();
        // a 1x1 image is its own DFT
        let x_cnn = RealImage::new(1, 1, vec![2.0]).unwrap();
        let s0 = KSpaceGrid::from_centered(1, 1, vec![Complex64::new(4.0, 0.0)]).unwrap();
        let s = dc_kspace(&x_cnn, &s0, &mask, DcParams::from_lambda(1.0).unwrap()).unwrap();
        assert!((s.get(0, 0) - Complex64::new(3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn hard_dc_copies_reference_on_mask() {
        let mut rng = Pcg64::seed_from_u64(1);
        let mask = central_mask(8, 8, 4).unwrap();
        let x_cnn = random_image(&mut rng, 8, 8);
        let s0 = reference_kspace(&random_image(&mut rng, 8, 8), &mask).unwrap();
        let s = dc_kspace_with_lambda(&x_cnn, &s0, &mask, 0.0).unwrap();
        let s_cnn = fft2_centered(&x_cnn.to_complex());
        for idx in 0..64 {
            let expected = if mask.contains_index(idx) {
                s0.data()[idx]
            } else {
                s_cnn.data()[idx]
            };
            assert_eq!(s.data()[idx], expected);
        }
    }

    #[test]
    fn consistent_prediction_is_a_fixed_point() {
        let mut rng = Pcg64::seed_from_u64(2);
        let mask = central_mask(8, 8, 4).unwrap();
        let x = random_image(&mut rng, 8, 8);
        let s0 = reference_kspace(&x, &mask).unwrap();
        for &l in &[0.01, 1.0, 25.0] {
            let out = dc_apply(&x, &s0, &mask, DcParams::from_lambda(l).unwrap()).unwrap();
            for (a, b) in out.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn per_frequency_closed_form_is_optimal() {
        // min_s |s - a|^2 + lambda |s - b|^2 by a 2D grid scan around the candidate
        let mut rng = Pcg64::seed_from_u64(3);
        for _ in 0..50 {
            let a = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let b = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lambda: f64 = rng.random_range(0.01..10.0);
            let closed = (b * lambda + a) / (1.0 + lambda);
            let f = |s: Complex64| (s - a).norm_sqr() + lambda * (s - b).norm_sqr();
            // the quadratic has Hessian 2(1+lambda) I, so its minimum value
            // is f(s*) and f(s) - f(s*) = (1+lambda)|s - s*|^2
            let centroid_value = f(closed);
            for k in 0..16 {
                let dir = Complex64::from_polar(1e-3, k as f64 * std::f64::consts::PI / 8.0);
                let excess = f(closed + dir) - centroid_value;
                assert!(excess > 0.0);
                assert!((excess - (1.0 + lambda) * dir.norm_sqr()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blend_is_a_convex_combination() {
        let mut rng = Pcg64::seed_from_u64(4);
        let mask = central_mask(8, 8, 2).unwrap();
        let x_cnn = random_image(&mut rng, 8, 8);
        let s0 = reference_kspace(&random_image(&mut rng, 8, 8), &mask).unwrap();
        let s_cnn = fft2_centered(&x_cnn.to_complex());
        let s = dc_kspace(&x_cnn, &s0, &mask, DcParams::from_lambda(0.7).unwrap()).unwrap();
        for idx in (0..64).filter(|&i| mask.contains_index(i)) {
            let (sd, r, c) = (s.data()[idx], s0.data()[idx], s_cnn.data()[idx]);
            let span = (c - r).norm();
            assert!((sd - r).norm() <= span + 1e-14);
            assert!((sd - c).norm() <= span + 1e-14);
            assert!(((sd - r).norm() + (sd - c).norm() - span).abs() < 1e-12);
        }
    }

    #[test]
    fn large_lambda_converges_to_prediction() {
        let mut rng = Pcg64::seed_from_u64(5);
        let mask = central_mask(8, 8, 4).unwrap();
        let x_cnn = random_image(&mut rng, 8, 8);
        let s0 = reference_kspace(&random_image(&mut rng, 8, 8), &mask).unwrap();
        let s_cnn = fft2_centered(&x_cnn.to_complex());
        let on_mask_dist = |s: &KSpaceGrid| -> f64 {
            (0..64)
                .filter(|&i| mask.contains_index(i))
                .map(|i| (s.data()[i] - s_cnn.data()[i]).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let base = on_mask_dist(&dc_kspace_with_lambda(&x_cnn, &s0, &mask, 0.0).unwrap());
        for &l in &[1.0, 10.0, 100.0, 1000.0] {
            let d = on_mask_dist(&dc_kspace_with_lambda(&x_cnn, &s0, &mask, l).unwrap());
            assert!((d - base / (1.0 + l)).abs() < 1e-12 * base.max(1.0));
        }
    }

    #[test]
    fn hard_dc_is_idempotent_in_kspace() {
        let mut rng = Pcg64::seed_from_u64(6);
        let mask = central_mask(8, 8, 4).unwrap();
        let x_cnn = random_image(&mut rng, 8, 8);
        let s0 = reference_kspace(&random_image(&mut rng, 8, 8), &mask).unwrap();
        let once = dc_apply_hard(&x_cnn, &s0, &mask).unwrap();
        let k_twice = dc_kspace_with_lambda(&once, &s0, &mask, 0.0).unwrap();
        let k_once = dc_kspace_with_lambda(&x_cnn, &s0, &mask, 0.0).unwrap();
        for idx in (0..64).filter(|&i| mask.contains_index(i)) {
            assert!((k_twice.data()[idx] - s0.data()[idx]).norm() < 1e-10);
            assert!((k_once.data()[idx] - s0.data()[idx]).norm() < 1e-10);
        }
    }

    #[test]
    fn node_forward_matches_plain_function() {
        let mut rng = Pcg64::seed_from_u64(7);
        let mask = central_mask(8, 8, 4).unwrap();
        let x_cnn = random_image(&mut rng, 8, 8);
        let s0 = reference_kspace(&random_image(&mut rng, 8, 8), &mask).unwrap();
        let params = DcParams::from_lambda(0.4).unwrap();
        let mut g = Graph::new();
        let x = g.parameter(Tensor::from_image(&x_cnn));
        let theta = g.parameter(Tensor::scalar(params.theta));
        let out = dc_apply_node(&mut g, x, &s0, &mask, theta).unwrap();
        let plain = dc_apply(&x_cnn, &s0, &mask, params).unwrap();
        for (a, b) in g.value(out).data().iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn theta_gradient_vanishes_at_fixed_point() {
        let mut rng = Pcg64::seed_from_u64(8);
        let mask = central_mask(8, 8, 4).unwrap();
        let x_cnn = random_image(&mut rng, 8, 8);
        let s0 = reference_kspace(&x_cnn, &mask).unwrap();
        let mut g = Graph::new();
        let x = g.parameter(Tensor::from_image(&x_cnn));
        let theta = g.parameter(Tensor::scalar(0.3));
        let out = dc_apply_node(&mut g, x, &s0, &mask, theta).unwrap();
        let loss = g.sum(out);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(theta).unwrap().item().abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mask = central_mask(8, 8, 4).unwrap();
        let x = RealImage::zeros(8, 6);
        let s0 = KSpaceGrid::zeros(8, 8);
        assert!(dc_apply(&x, &s0, &mask, DcParams::default()).is_err());
        let x = ComplexImage::zeros(8, 8).real_part();
        assert!(dc_apply(&x, &KSpaceGrid::zeros(4, 8), &mask, DcParams::default()).is_err());
    }
}
