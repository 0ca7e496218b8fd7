//! Central finite-difference checks for every differentiable operation and
//! for the full unrolled model.
//!
//! Each case builds a scalar objective on a fresh [`Graph`], back-propagates
//! once, and compares every input gradient entry with
//! `(f(x + h e_i) - f(x - h e_i)) / 2h`. The reported error for a case is
//! `max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-6)`.

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;

use crate::dc::{dc_apply_node, reference_kspace, DcParams};
use crate::error::Result;
use crate::kspace::{central_mask, SamplingMask};
use crate::model::{model_forward, FinalDc, Model, ModelConfig};
use crate::numcore::{Graph, KSpaceGrid, Node, RealImage, Tensor};
use crate::rng::derive_seed;

/// Finite-difference step.
pub const STEP: f64 = 1e-5;

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;

const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub n_checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

type Build<'a> = dyn Fn(&mut Graph, &[Node]) -> Result<Node> + 'a;

/// Compare analytic gradients of the scalar `build(inputs)` against
/// central differences for every entry of every input.
pub fn check(name: &str, inputs: &[Tensor], build: &Build<'_>, step: f64) -> Result<GradcheckReport> {
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let nodes: Vec<Node> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &nodes)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let nodes: Vec<Node> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = build(&mut g, &nodes)?;
    let grads = g.backward(out)?;

    let mut max_rel_err: f64 = 0.0;
    let mut n_checked = 0;
    let mut work = inputs.to_vec();
    for (k, node) in nodes.iter().enumerate() {
        let analytic = grads
            .get(*node)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(DENOM_FLOOR);
            max_rel_err = max_rel_err.max(rel);
            n_checked += 1;
        }
    }
    Ok(GradcheckReport {
        name: name.to_string(),
        max_rel_err,
        n_checked,
    })
}

fn uniform(rng: &mut Pcg64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    t
}

/// `sum(weights * x)`: a smooth scalar probe of a tensor-valued node.
fn weighted_sum(g: &mut Graph, x: Node, weights: &Tensor) -> Result<Node> {
    let w = g.constant(weights.clone());
    let prod = product(g, x, w)?;
    Ok(g.sum(prod))
}

/// Elementwise product of two same-shaped nodes.
fn product(g: &mut Graph, a: Node, b: Node) -> Result<Node> {
    struct Mul;
    impl crate::numcore::BackwardOp for Mul {
        fn backward(&self, inputs: &[&Tensor], _o: &Tensor, go: &Tensor) -> Vec<Tensor> {
            vec![
                go.zip_map(inputs[1], |g, b| g * b),
                go.zip_map(inputs[0], |g, a| g * a),
            ]
        }
    }
    let (av, bv) = (g.value(a), g.value(b));
    if av.shape() != bv.shape() {
        return Err(crate::Error::shape("product rhs", av.shape(), bv.shape()));
    }
    let value = av.zip_map(bv, |x, y| x * y);
    Ok(g.apply(Box::new(Mul), &[a, b], value))
}

fn random_mask_instance(rng: &mut Pcg64, n: usize) -> Result<(RealImage, KSpaceGrid, SamplingMask)> {
    let mask = central_mask(n, n, 4)?;
    let x_lr = RealImage::from_fn(n, n, |_, _| rng.random_range(0.1..1.0));
    let s0 = reference_kspace(&x_lr, &mask)?;
    Ok((x_lr, s0, mask))
}

/// Run the full suite. Deterministic for a given seed.
pub fn run_suite(seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut rng = Pcg64::seed_from_u64(derive_seed(seed, 0x67_72_61_64));
    let mut reports = Vec::new();

    // conv2d w.r.t. input, kernel and bias
    {
        let x = uniform(&mut rng, &[2, 6, 5], -1.0, 1.0);
        let w = uniform(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
        let b = uniform(&mut rng, &[3], -0.5, 0.5);
        let probe = uniform(&mut rng, &[3, 6, 5], -1.0, 1.0);
        reports.push(check(
            "conv2d",
            &[x, w, b],
            &|g, n| {
                let y = g.conv2d(n[0], n[1], n[2])?;
                weighted_sum(g, y, &probe)
            },
            STEP,
        )?);
    }

    // relu away from its kink
    {
        let x = uniform(&mut rng, &[1, 4, 4], 0.05, 1.0).zip_map(
            &uniform(&mut rng, &[1, 4, 4], 0.0, 1.0),
            |v, s| if s < 0.5 { -v } else { v },
        );
        let probe = uniform(&mut rng, &[1, 4, 4], -1.0, 1.0);
        reports.push(check(
            "relu",
            &[x],
            &|g, n| {
                let y = g.relu(n[0]);
                weighted_sum(g, y, &probe)
            },
            STEP,
        )?);
    }

    // add
    {
        let a = uniform(&mut rng, &[1, 3, 3], -1.0, 1.0);
        let b = uniform(&mut rng, &[1, 3, 3], -1.0, 1.0);
        let probe = uniform(&mut rng, &[1, 3, 3], -1.0, 1.0);
        reports.push(check(
            "add",
            &[a, b],
            &|g, n| {
                let y = g.add(n[0], n[1])?;
                weighted_sum(g, y, &probe)
            },
            STEP,
        )?);
    }

    // mae(conv2d(x, w), y) w.r.t. every kernel entry on a 1x8x8 input
    {
        let x = uniform(&mut rng, &[1, 8, 8], -1.0, 1.0);
        let w = uniform(&mut rng, &[1, 1, 3, 3], -0.5, 0.5);
        let target = uniform(&mut rng, &[1, 8, 8], -1.0, 1.0);
        let bias = Tensor::zeros(&[1]);
        reports.push(check(
            "mae(conv2d)",
            &[w],
            &|g, n| {
                let xn = g.constant(x.clone());
                let bn = g.constant(bias.clone());
                let y = g.conv2d(xn, n[0], bn)?;
                let t = g.constant(target.clone());
                g.mae(y, t)
            },
            STEP,
        )?);
    }

    // forward DFT of a real image
    {
        let x = uniform(&mut rng, &[1, 5, 6], -1.0, 1.0);
        let probe = uniform(&mut rng, &[2, 5, 6], -1.0, 1.0);
        reports.push(check(
            "fft2c(real)",
            &[x],
            &|g, n| {
                let k = g.fft2c(n[0])?;
                weighted_sum(g, k, &probe)
            },
            STEP,
        )?);
    }

    // inverse DFT of a complex grid
    {
        let k = uniform(&mut rng, &[2, 4, 5], -1.0, 1.0);
        let probe = uniform(&mut rng, &[2, 4, 5], -1.0, 1.0);
        reports.push(check(
            "ifft2c(complex)",
            &[k],
            &|g, n| {
                let z = g.ifft2c(n[0])?;
                weighted_sum(g, z, &probe)
            },
            STEP,
        )?);
    }

    // modulus
    {
        let z = uniform(&mut rng, &[2, 4, 4], -1.0, 1.0);
        let probe = uniform(&mut rng, &[1, 4, 4], -1.0, 1.0);
        reports.push(check(
            "cabs",
            &[z],
            &|g, n| {
                let m = g.cabs(n[0])?;
                weighted_sum(g, m, &probe)
            },
            STEP,
        )?);
    }

    // |ifft(fft(x))| composition on a complex input
    {
        let z = uniform(&mut rng, &[2, 6, 6], -1.0, 1.0);
        let probe = uniform(&mut rng, &[1, 6, 6], -1.0, 1.0);
        reports.push(check(
            "cabs(ifft2c(fft2c))",
            &[z],
            &|g, n| {
                let k = g.fft2c(n[0])?;
                let x = g.ifft2c(k)?;
                let m = g.cabs(x)?;
                weighted_sum(g, m, &probe)
            },
            STEP,
        )?);
    }

    // data-consistency layer w.r.t. prediction and theta
    {
        let (_, s0, mask) = random_mask_instance(&mut rng, 8)?;
        let x_cnn = uniform(&mut rng, &[1, 8, 8], 0.1, 1.0);
        let theta = Tensor::scalar(DcParams::from_lambda(0.7)?.theta);
        let probe = uniform(&mut rng, &[1, 8, 8], -1.0, 1.0);
        reports.push(check(
            "dc_apply",
            &[x_cnn, theta],
            &|g, n| {
                let y = dc_apply_node(g, n[0], &s0, &mask, n[1])?;
                weighted_sum(g, y, &probe)
            },
            STEP,
        )?);
    }

    // data-consistency with a full mask and lambda = 1
    {
        let mask = SamplingMask::full(8, 8)?;
        let x_lr = RealImage::from_fn(8, 8, |_, _| rng.random_range(0.1..1.0));
        let s0 = reference_kspace(&x_lr, &mask)?;
        let x_cnn = uniform(&mut rng, &[1, 8, 8], 0.1, 1.0);
        let theta = Tensor::scalar(DcParams::from_lambda(1.0)?.theta);
        let probe = uniform(&mut rng, &[1, 8, 8], -1.0, 1.0);
        reports.push(check(
            "dc_apply(full mask)",
            &[x_cnn, theta],
            &|g, n| {
                let y = dc_apply_node(g, n[0], &s0, &mask, n[1])?;
                weighted_sum(g, y, &probe)
            },
            STEP,
        )?);
    }

    // residual CNN and the unrolled model, w.r.t. every parameter
    for (name, config) in [
        ("resnet", ModelConfig::resnet_only(3, 2)),
        ("unrolled(N=2)", ModelConfig::unrolled(2, 3, 2)),
    ] {
        let mut model_rng = Pcg64::seed_from_u64(rng.random());
        let model = Model::new(config, &mut model_rng)?;
        let (x_lr, s0, mask) = random_mask_instance(&mut rng, 8)?;
        let target = uniform(&mut rng, &[1, 8, 8], 0.0, 1.0);
        let probe = uniform(&mut rng, &[1, 8, 8], -1.0, 1.0);

        let mut inputs: Vec<Tensor> = model.resnet.tensors().into_iter().cloned().collect();
        if let Some(dc) = model.dc {
            inputs.push(Tensor::scalar(dc.theta));
        }
        let n_resnet = model.resnet.tensors().len();
        let build = |g: &mut Graph, n: &[Node]| -> Result<Node> {
            let nodes = crate::model::ModelNodes {
                resnet: n[..n_resnet].to_vec(),
                theta: n.get(n_resnet).copied(),
            };
            let x = g.constant(Tensor::from_image(&x_lr));
            let y = model_forward(g, &model, &nodes, x, Some((&s0, &mask)), FinalDc::Trained)?;
            weighted_sum(g, y, &probe)
        };
        reports.push(check(name, &inputs, &build, STEP)?);

        let build_mae = |g: &mut Graph, n: &[Node]| -> Result<Node> {
            let nodes = crate::model::ModelNodes {
                resnet: n[..n_resnet].to_vec(),
                theta: n.get(n_resnet).copied(),
            };
            let x = g.constant(Tensor::from_image(&x_lr));
            let y = model_forward(g, &model, &nodes, x, Some((&s0, &mask)), FinalDc::Trained)?;
            let t = g.constant(target.clone());
            g.mae(y, t)
        };
        reports.push(check(&format!("mae({name})"), &inputs, &build_mae, STEP)?);
    }

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_op_tolerance() {
        let reports = run_suite(17).unwrap();
        for r in &reports {
            assert!(r.n_checked > 0);
            assert!(r.passed(TOLERANCE), "{}: {:.3e}", r.name, r.max_rel_err);
        }
        for r in reports.iter().filter(|r| !r.name.contains("resnet") && !r.name.contains("unrolled")) {
            assert!(r.passed(1e-5), "{}: {:.3e}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn check_detects_a_wrong_gradient() {
        struct Wrong;
        impl crate::numcore::BackwardOp for Wrong {
            fn backward(&self, inputs: &[&Tensor], _o: &Tensor, go: &Tensor) -> Vec<Tensor> {
                vec![inputs[0].map(|_| 2.0 * go.item())]
            }
        }
        let x = Tensor::new(vec![3], vec![0.3, -0.2, 0.9]).unwrap();
        let report = check(
            "wrong",
            &[x],
            &|g, n| {
                let s = g.value(n[0]).sum();
                Ok(g.apply(Box::new(Wrong), &[n[0]], Tensor::scalar(s)))
            },
            STEP,
        )
        .unwrap();
        assert!(!report.passed(TOLERANCE));
    }
}
