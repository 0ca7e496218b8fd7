//! Residual super-resolution CNN and the unrolled CNN / data-consistency
//! cascade built on it.
//!
//! The CNN is `head conv -> ReLU -> n_blocks x (conv -> ReLU -> conv + skip)
//! -> tail conv + global skip`, all 3x3 kernels with stride 1 and zero
//! padding, so every layer keeps the `H x W` grid. The unrolled model
//! alternates that CNN with the data-consistency layer `n_iterations` times,
//! reusing the same CNN weights and the same `lambda` at every iteration.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dc::{dc_apply_hard_node, dc_apply_node, dc_kspace_with_lambda, DcParams};
use crate::error::{Error, Result};
use crate::kspace::SamplingMask;
use crate::numcore::{Graph, KSpaceGrid, Node, RealImage, Tensor};

/// Architecture knobs. `n_iterations == 0` selects the CNN alone (no
/// data consistency).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_iterations: usize,
    pub n_filters: usize,
    pub n_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_iterations: 1,
            n_filters: 64,
            n_blocks: 5,
        }
    }
}

impl ModelConfig {
    pub fn resnet_only(n_filters: usize, n_blocks: usize) -> Self {
        Self {
            n_iterations: 0,
            n_filters,
            n_blocks,
        }
    }

    pub fn unrolled(n_iterations: usize, n_filters: usize, n_blocks: usize) -> Self {
        Self {
            n_iterations,
            n_filters,
            n_blocks,
        }
    }

    pub fn is_unrolled(&self) -> bool {
        self.n_iterations > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_filters == 0 || self.n_blocks == 0 {
            return Err(Error::InvalidArgument(format!(
                "n_filters and n_blocks must be positive, got {} and {}",
                self.n_filters, self.n_blocks
            )));
        }
        Ok(())
    }

    /// Display name used in reports.
    pub fn method_name(&self) -> String {
        if self.is_unrolled() {
            format!("Unrolled (N={})", self.n_iterations)
        } else {
            "ResNet w/o DC".to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[c_out, c_in, 3, 3]),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    /// He-normal kernels (`std = sqrt(2 / fan_in)`), zero bias.
    fn kaiming<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(c_in, c_out);
        let std = (2.0 / (c_in * 9) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in p.weight.data_mut() {
            *v = normal.sample(rng);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlockParams {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

/// Weights of the residual CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetParams {
    pub head: ConvParams,
    pub blocks: Vec<ResBlockParams>,
    pub tail: ConvParams,
}

impl ResNetParams {
    pub fn zeros(n_filters: usize, n_blocks: usize) -> Self {
        Self {
            head: ConvParams::zeros(1, n_filters),
            blocks: (0..n_blocks)
                .map(|_| ResBlockParams {
                    conv1: ConvParams::zeros(n_filters, n_filters),
                    conv2: ConvParams::zeros(n_filters, n_filters),
                })
                .collect(),
            tail: ConvParams::zeros(n_filters, 1),
        }
    }

    pub fn kaiming<R: Rng + ?Sized>(n_filters: usize, n_blocks: usize, rng: &mut R) -> Self {
        let head = ConvParams::kaiming(1, n_filters, rng);
        let blocks = (0..n_blocks)
            .map(|_| ResBlockParams {
                conv1: ConvParams::kaiming(n_filters, n_filters, rng),
                conv2: ConvParams::kaiming(n_filters, n_filters, rng),
            })
            .collect();
        let tail = ConvParams::kaiming(n_filters, 1, rng);
        Self { head, blocks, tail }
    }

    pub fn n_filters(&self) -> usize {
        self.head.bias.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Tensors in canonical order: head, blocks in order, tail; weight
    /// before bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.head.weight, &self.head.bias];
        for b in &self.blocks {
            out.extend([&b.conv1.weight, &b.conv1.bias, &b.conv2.weight, &b.conv2.bias]);
        }
        out.extend([&self.tail.weight, &self.tail.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.head.weight, &mut self.head.bias];
        for b in &mut self.blocks {
            out.extend([
                &mut b.conv1.weight,
                &mut b.conv1.bias,
                &mut b.conv2.weight,
                &mut b.conv2.bias,
            ]);
        }
        out.extend([&mut self.tail.weight, &mut self.tail.bias]);
        out
    }

    /// Names matching [`ResNetParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec!["head.weight".to_string(), "head.bias".to_string()];
        for i in 0..self.blocks.len() {
            for conv in ["conv1", "conv2"] {
                out.push(format!("block{i}.{conv}.weight"));
                out.push(format!("block{i}.{conv}.bias"));
            }
        }
        out.extend(["tail.weight".to_string(), "tail.bias".to_string()]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Full trainable state: CNN weights plus the data-consistency parameter.
/// `dc` is present only for unrolled models.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub resnet: ResNetParams,
    pub dc: Option<DcParams>,
}

/// Graph handles for every trainable tensor of a [`Model`].
pub struct ModelNodes {
    pub resnet: Vec<Node>,
    pub theta: Option<Node>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            resnet: ResNetParams::kaiming(config.n_filters, config.n_blocks, rng),
            dc: config.is_unrolled().then(DcParams::default),
        })
    }

    /// All convolution parameters zero; the CNN is then the identity.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            resnet: ResNetParams::zeros(config.n_filters, config.n_blocks),
            dc: config.is_unrolled().then(DcParams::default),
        })
    }

    /// Trainable scalar count; independent of the number of iterations.
    pub fn parameter_count(&self) -> usize {
        self.resnet.parameter_count() + usize::from(self.dc.is_some())
    }

    /// Register parameters on `graph`. With `trainable == false` they are
    /// constants and no gradients are tracked.
    pub fn register(&self, graph: &mut Graph, trainable: bool) -> ModelNodes {
        let mut add = |t: Tensor| {
            if trainable {
                graph.parameter(t)
            } else {
                graph.constant(t)
            }
        };
        let resnet = self.resnet.tensors().into_iter().map(|t| add(t.clone())).collect();
        let theta = self.dc.map(|p| add(Tensor::scalar(p.theta)));
        ModelNodes { resnet, theta }
    }

    /// CNN tensors in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.resnet.tensors_mut()
    }
}

/// CNN forward pass on a `[1, H, W]` node.
pub fn resnet_forward(graph: &mut Graph, x: Node, params: &[Node]) -> Result<Node> {
    let shape = graph.value(x).shape().to_vec();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(Error::shape("resnet input", "[1, H, W]", shape));
    }
    if params.len() < 4 || params.len() % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "resnet expects 4 + 4 * n_blocks parameter tensors, got {}",
            params.len()
        )));
    }
    let n_blocks = (params.len() - 4) / 4;

    let mut h = graph.conv2d(x, params[0], params[1])?;
    h = graph.relu(h);
    for b in 0..n_blocks {
        let p = &params[2 + 4 * b..6 + 4 * b];
        let mut r = graph.conv2d(h, p[0], p[1])?;
        r = graph.relu(r);
        r = graph.conv2d(r, p[2], p[3])?;
        h = graph.add(h, r)?;
    }
    let out = graph.conv2d(h, params[params.len() - 2], params[params.len() - 1])?;
    graph.add(x, out)
}

/// How the data-consistency steps of an unrolled pass are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinalDc {
    /// Every iteration uses the trained `lambda`.
    Trained,
    /// The last iteration uses `lambda = 0`.
    Hard,
}

/// Model forward pass on a graph. Returns the output node; for unrolled
/// models `s0` and `mask` must be provided.
pub fn model_forward(
    graph: &mut Graph,
    model: &Model,
    nodes: &ModelNodes,
    x_lr: Node,
    s0: Option<(&KSpaceGrid, &SamplingMask)>,
    final_dc: FinalDc,
) -> Result<Node> {
    if !model.config.is_unrolled() {
        return resnet_forward(graph, x_lr, &nodes.resnet);
    }
    let (s0, mask) = s0.ok_or_else(|| {
        Error::InvalidArgument("unrolled model needs reference k-space and mask".into())
    })?;
    let theta = nodes
        .theta
        .ok_or_else(|| Error::InvalidArgument("unrolled model has no dc parameter".into()))?;
    let n = model.config.n_iterations;
    let mut x = x_lr;
    for it in 0..n {
        let x_cnn = resnet_forward(graph, x, &nodes.resnet)?;
        x = if it + 1 == n && final_dc == FinalDc::Hard {
            dc_apply_hard_node(graph, x_cnn, s0, mask)?
        } else {
            dc_apply_node(graph, x_cnn, s0, mask, theta)?
        };
    }
    Ok(x)
}

/// Inference without gradient tracking.
pub fn resnet_only_forward(x_lr: &RealImage, params: &ResNetParams) -> Result<RealImage> {
    let mut graph = Graph::new();
    let nodes: Vec<Node> = params
        .tensors()
        .into_iter()
        .map(|t| graph.constant(t.clone()))
        .collect();
    let x = graph.constant(Tensor::from_image(x_lr));
    let out = resnet_forward(&mut graph, x, &nodes)?;
    graph.value(out).to_image()
}

/// Output of an unrolled inference pass together with the blended k-space
/// of the last data-consistency step.
pub struct UnrolledOutput {
    pub image: RealImage,
    pub final_kspace: KSpaceGrid,
}

pub fn unrolled_forward(
    x_lr: &RealImage,
    s0: &KSpaceGrid,
    mask: &SamplingMask,
    params: &ResNetParams,
    dc: DcParams,
    n_iterations: usize,
    final_dc: FinalDc,
) -> Result<UnrolledOutput> {
    if n_iterations == 0 {
        return Err(Error::InvalidArgument("n_iterations must be >= 1".into()));
    }
    if x_lr.dims() != mask.dims() {
        return Err(Error::shape("unrolled input", mask.dims(), x_lr.dims()));
    }
    let mut x = x_lr.clone();
    let mut final_kspace = None;
    for it in 0..n_iterations {
        let x_cnn = resnet_only_forward(&x, params)?;
        let lambda = if it + 1 == n_iterations && final_dc == FinalDc::Hard {
            0.0
        } else {
            dc.lambda()
        };
        let k = dc_kspace_with_lambda(&x_cnn, s0, mask, lambda)?;
        x = crate::numcore::magnitude(&crate::numcore::ifft2_centered(&k));
        final_kspace = Some(k);
    }
    Ok(UnrolledOutput {
        image: x,
        final_kspace: final_kspace.expect("at least one iteration"),
    })
}

/// Run a model on one low-resolution image.
pub fn predict(model: &Model, x_lr: &RealImage, mask: &SamplingMask) -> Result<RealImage> {
    match model.dc {
        Some(dc) if model.config.is_unrolled() => {
            let s0 = crate::dc::reference_kspace(x_lr, mask)?;
            Ok(unrolled_forward(
                x_lr,
                &s0,
                mask,
                &model.resnet,
                dc,
                model.config.n_iterations,
                FinalDc::Trained,
            )?
            .image)
        }
        _ => resnet_only_forward(x_lr, &model.resnet),
    }
}
