//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every value computed in a forward pass. Nodes are
//! appended in evaluation order, so the tape is topologically sorted and
//! acyclic by construction; [`Graph::backward`] walks it in reverse.
//!
//! Complex values travel as two-channel `[2, H, W]` tensors (real, imaginary).
//! Their gradients use the convention `dL/dRe + i dL/dIm`, under which the
//! backward rule of a complex-linear map `A` is multiplication by `A^H`.

use num_complex::Complex64;

use super::conv::{conv3x3_backward, conv3x3_forward};
use super::fft::{fft2c_raw, ifft2c_raw};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node(usize);

impl Node {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a differentiable operation.
///
/// Returns one gradient per input, in input order, each shaped like its input.
pub trait BackwardOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Tensor>;
}

struct Entry {
    value: Tensor,
    parents: Vec<Node>,
    op: Option<Box<dyn BackwardOp>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    entries: Vec<Entry>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, node: Node) -> Option<&Tensor> {
        self.grads.get(node.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, node: Node) -> Option<Tensor> {
        self.grads.get_mut(node.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Constant input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Node {
        self.push(value, Vec::new(), None, false)
    }

    /// Trainable leaf.
    pub fn parameter(&mut self, value: Tensor) -> Node {
        self.push(value, Vec::new(), None, true)
    }

    pub fn value(&self, node: Node) -> &Tensor {
        &self.entries[node.0].value
    }

    /// Record the result of a custom differentiable operation.
    pub fn apply(&mut self, op: Box<dyn BackwardOp>, parents: &[Node], value: Tensor) -> Node {
        let requires_grad = parents.iter().any(|p| self.entries[p.0].requires_grad);
        self.push(value, parents.to_vec(), Some(op), requires_grad)
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<Node>,
        op: Option<Box<dyn BackwardOp>>,
        requires_grad: bool,
    ) -> Node {
        self.entries.push(Entry {
            value,
            parents,
            op,
            requires_grad,
        });
        Node(self.entries.len() - 1)
    }

    /// Reverse-topological gradient accumulation from a scalar root.
    pub fn backward(&self, root: Node) -> Result<Gradients> {
        let root_value = &self.entries[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::shape("backward root", "scalar", root_value.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.entries.len()];
        grads[root.0] = Some(Tensor::new(root_value.shape().to_vec(), vec![1.0])?);

        for idx in (0..=root.0).rev() {
            let entry = &self.entries[idx];
            let Some(op) = entry.op.as_ref() else { continue };
            if !entry.requires_grad {
                continue;
            }
            let Some(grad_out) = grads[idx].as_ref() else { continue };
            let inputs: Vec<&Tensor> = entry
                .parents
                .iter()
                .map(|p| &self.entries[p.0].value)
                .collect();
            let parent_grads = op.backward(&inputs, &entry.value, grad_out);
            debug_assert_eq!(parent_grads.len(), entry.parents.len());
            for (parent, g) in entry.parents.iter().zip(parent_grads) {
                if !self.entries[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    // ----- differentiable operations -----

    /// 3x3, stride 1, zero-padded convolution. `x: [c_in, H, W]`,
    /// `weights: [c_out, c_in, 3, 3]`, `bias: [c_out]`.
    pub fn conv2d(&mut self, x: Node, weights: Node, bias: Node) -> Result<Node> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weights).shape().to_vec();
        let bs = self.value(bias).shape().to_vec();
        let [c_in, h, w] = xs[..] else {
            return Err(Error::shape("conv2d input", "[c_in, H, W]", xs));
        };
        let (c_out, c_in_w) = match ws[..] {
            [o, i, 3, 3] => (o, i),
            _ => return Err(Error::shape("conv2d weights", "[c_out, c_in, 3, 3]", ws)),
        };
        if c_in_w != c_in {
            return Err(Error::shape("conv2d weights", [c_out, c_in, 3, 3], ws));
        }
        if bs[..] != [c_out] {
            return Err(Error::shape("conv2d bias", [c_out], bs));
        }
        let out = conv3x3_forward(
            self.value(x).data(),
            self.value(weights).data(),
            self.value(bias).data(),
            c_in,
            c_out,
            h,
            w,
        );
        let value = Tensor::new(vec![c_out, h, w], out)?;
        Ok(self.apply(
            Box::new(Conv2dOp { c_in, c_out, h, w }),
            &[x, weights, bias],
            value,
        ))
    }

    pub fn relu(&mut self, x: Node) -> Node {
        let value = self.value(x).map(|v| v.max(0.0));
        self.apply(Box::new(ReluOp), &[x], value)
    }

    pub fn add(&mut self, a: Node, b: Node) -> Result<Node> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("add rhs", av.shape(), bv.shape()));
        }
        let value = av.zip_map(bv, |x, y| x + y);
        Ok(self.apply(Box::new(AddOp), &[a, b], value))
    }

    pub fn sum(&mut self, x: Node) -> Node {
        let value = Tensor::scalar(self.value(x).sum());
        self.apply(Box::new(SumOp), &[x], value)
    }

    /// Mean absolute error, a scalar. The subgradient of `|0|` is 0.
    pub fn mae(&mut self, a: Node, b: Node) -> Result<Node> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("mae rhs", av.shape(), bv.shape()));
        }
        let n = av.len() as f64;
        let total: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        Ok(self.apply(Box::new(MaeOp), &[a, b], Tensor::scalar(total / n)))
    }

    /// Centered orthonormal forward DFT. Accepts a real `[1, H, W]` or
    /// complex `[2, H, W]` input and returns `[2, H, W]`.
    pub fn fft2c(&mut self, x: Node) -> Result<Node> {
        let value = self.value(x);
        let (h, w) = complex_dims("fft2c input", value)?;
        let out = fft2c_raw(&to_complex(value), h, w);
        let real_input = value.shape()[0] == 1;
        Ok(self.apply(
            Box::new(FftOp {
                h,
                w,
                inverse: false,
                real_input,
            }),
            &[x],
            from_complex(&out, h, w),
        ))
    }

    /// Centered orthonormal inverse DFT, `[1|2, H, W] -> [2, H, W]`.
    pub fn ifft2c(&mut self, x: Node) -> Result<Node> {
        let value = self.value(x);
        let (h, w) = complex_dims("ifft2c input", value)?;
        let out = ifft2c_raw(&to_complex(value), h, w);
        let real_input = value.shape()[0] == 1;
        Ok(self.apply(
            Box::new(FftOp {
                h,
                w,
                inverse: true,
                real_input,
            }),
            &[x],
            from_complex(&out, h, w),
        ))
    }

    /// Elementwise modulus `[2, H, W] -> [1, H, W]`. The subgradient at 0 is 0.
    pub fn cabs(&mut self, z: Node) -> Result<Node> {
        let value = self.value(z);
        let (h, w) = complex_dims("cabs input", value)?;
        if value.shape()[0] != 2 {
            return Err(Error::shape("cabs input", [2, h, w], value.shape()));
        }
        let hw = h * w;
        let d = value.data();
        let out = (0..hw).map(|i| d[i].hypot(d[hw + i])).collect();
        Ok(self.apply(Box::new(CabsOp), &[z], Tensor::new(vec![1, h, w], out)?))
    }
}

fn complex_dims(operand: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [1 | 2, h, w] => Ok((*h, *w)),
        other => Err(Error::shape(operand, "[1|2, H, W]", other)),
    }
}

/// Interpret a `[1|2, H, W]` tensor as complex samples.
pub(crate) fn to_complex(t: &Tensor) -> Vec<Complex64> {
    let (c, hw) = (t.shape()[0], t.shape()[1] * t.shape()[2]);
    let d = t.data();
    (0..hw)
        .map(|i| Complex64::new(d[i], if c == 2 { d[hw + i] } else { 0.0 }))
        .collect()
}

pub(crate) fn from_complex(z: &[Complex64], h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut data = vec![0.0; 2 * hw];
    for (i, v) in z.iter().enumerate() {
        data[i] = v.re;
        data[hw + i] = v.im;
    }
    Tensor::new(vec![2, h, w], data).expect("complex layout")
}

struct Conv2dOp {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
}

impl BackwardOp for Conv2dOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        let g = conv3x3_backward(
            inputs[0].data(),
            inputs[1].data(),
            grad_output.data(),
            self.c_in,
            self.c_out,
            self.h,
            self.w,
        );
        vec![
            Tensor::new(inputs[0].shape().to_vec(), g.input).unwrap(),
            Tensor::new(inputs[1].shape().to_vec(), g.weights).unwrap(),
            Tensor::new(inputs[2].shape().to_vec(), g.bias).unwrap(),
        ]
    }
}

struct ReluOp;

impl BackwardOp for ReluOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        vec![inputs[0].zip_map(grad_output, |x, g| if x > 0.0 { g } else { 0.0 })]
    }
}

struct AddOp;

impl BackwardOp for AddOp {
    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        vec![grad_output.clone(), grad_output.clone()]
    }
}

struct SumOp;

impl BackwardOp for SumOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        let g = grad_output.item();
        vec![inputs[0].map(|_| g)]
    }
}

struct MaeOp;

impl BackwardOp for MaeOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        let scale = grad_output.item() / inputs[0].len() as f64;
        let ga = inputs[0].zip_map(inputs[1], |a, b| {
            let d = a - b;
            if d > 0.0 {
                scale
            } else if d < 0.0 {
                -scale
            } else {
                0.0
            }
        });
        let gb = ga.map(|v| -v);
        vec![ga, gb]
    }
}

struct FftOp {
    h: usize,
    w: usize,
    inverse: bool,
    real_input: bool,
}

impl BackwardOp for FftOp {
    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        // Adjoint of a unitary transform is its inverse.
        let g = to_complex(grad_output);
        let back = if self.inverse {
            fft2c_raw(&g, self.h, self.w)
        } else {
            ifft2c_raw(&g, self.h, self.w)
        };
        let full = from_complex(&back, self.h, self.w);
        if self.real_input {
            let hw = self.h * self.w;
            vec![Tensor::new(vec![1, self.h, self.w], full.data()[..hw].to_vec()).unwrap()]
        } else {
            vec![full]
        }
    }
}

struct CabsOp;

impl BackwardOp for CabsOp {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Tensor> {
        let z = inputs[0];
        let hw = output.len();
        let mut g = Tensor::zeros(z.shape());
        let (zd, od, gd) = (z.data(), output.data(), grad_output.data());
        let out = g.data_mut();
        for i in 0..hw {
            if od[i] > 0.0 {
                out[i] = gd[i] * zd[i] / od[i];
                out[hw + i] = gd[i] * zd[hw + i] / od[i];
            }
        }
        vec![g]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_kernel(c: usize) -> Tensor {
        let mut w = Tensor::zeros(&[c, c, 3, 3]);
        for o in 0..c {
            w.data_mut()[(o * c + o) * 9 + 4] = 1.0;
        }
        w
    }

    #[test]
    fn identity_conv_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.constant(Tensor::new(vec![2, 5, 4], data.clone()).unwrap());
        let w = g.parameter(identity_kernel(2));
        let b = g.parameter(Tensor::zeros(&[2]));
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn relu_backward_masks_negative_inputs() {
        let mut g = Graph::new();
        let x = g.parameter(Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        let y = g.relu(x);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn mae_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let a = g.parameter(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let b = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let l = g.mae(a, b).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn cabs_gradient_at_origin_is_zero() {
        let mut g = Graph::new();
        let z = g.parameter(Tensor::zeros(&[2, 1, 2]));
        let m = g.cabs(z).unwrap();
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.parameter(Tensor::zeros(&[1, 2, 2]));
        let y = g.relu(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn shape_errors_name_the_operand() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 4, 4]));
        let w = g.parameter(Tensor::zeros(&[2, 3, 3, 3]));
        let b = g.parameter(Tensor::zeros(&[2]));
        let err = g.conv2d(x, w, b).unwrap_err().to_string();
        assert!(err.contains("conv2d weights"), "{err}");
        let y = g.constant(Tensor::zeros(&[1, 4, 3]));
        assert!(g.add(x, y).unwrap_err().to_string().contains("add rhs"));
    }
}
