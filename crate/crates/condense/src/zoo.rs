//! Architecture specifications and trainable networks.
//!
//! A network is a flat ordered list of parameter tensors plus a layer plan
//! derived from its [`ArchSpec`]. The forward pass builds graph nodes for an
//! arbitrary input node, so pixels entering through augmentation subgraphs
//! keep their gradients.

use crate::batch::ImageBatch;
use autodiff::nn;
use autodiff::{AdError, Graph, NodeId, Real, Shape, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

const NORM_EPS: f64 = 1e-5;
const LEAKY_SLOPE: f64 = 0.01;
const GROUP_NORM_GROUPS: usize = 4;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ZooError {
    #[error("invalid architecture: {0}")]
    Invalid(String),
    #[error("spatial extent collapses to {h}x{w} before block {block}, input too small for this depth")]
    SpatialCollapse { block: usize, h: usize, w: usize },
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    ConvNet,
    Mlp,
    LeNet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormKind {
    Instance,
    Batch,
    Layer,
    Group,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Avg,
    Max,
    None,
}

macro_rules! enum_text {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = match self {
                    $($variant => $text),+
                };
                f.write_str(s)
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($variant)),+,
                    other => Err(format!(
                        "unknown {} '{}'", stringify!($ty), other
                    )),
                }
            }
        }
    };
}

enum_text!(Family { Family::ConvNet => "convnet", Family::Mlp => "mlp", Family::LeNet => "lenet" });
enum_text!(Activation {
    Activation::Relu => "relu",
    Activation::LeakyRelu => "leakyrelu",
    Activation::Sigmoid => "sigmoid",
});
enum_text!(NormKind {
    NormKind::Instance => "instance",
    NormKind::Batch => "batch",
    NormKind::Layer => "layer",
    NormKind::Group => "group",
    NormKind::None => "none",
});
enum_text!(PoolKind { PoolKind::Avg => "avg", PoolKind::Max => "max", PoolKind::None => "none" });

/// A complete architecture description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    pub family: Family,
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub norm: NormKind,
    pub pool: PoolKind,
    /// Input geometry `(channels, height, width)`.
    pub input: (usize, usize, usize),
    pub classes: usize,
}

impl ArchSpec {
    /// The default condensation backbone: three 128-channel blocks of
    /// convolution, instance normalization, ReLU, and 2x2 average pooling.
    pub fn convnet(input: (usize, usize, usize), classes: usize) -> Self {
        Self {
            family: Family::ConvNet,
            depth: 3,
            width: 128,
            activation: Activation::Relu,
            norm: NormKind::Instance,
            pool: PoolKind::Avg,
            input,
            classes,
        }
    }

    /// A two-hidden-layer perceptron of 128 units.
    pub fn mlp(input: (usize, usize, usize), classes: usize) -> Self {
        Self {
            family: Family::Mlp,
            depth: 2,
            width: 128,
            activation: Activation::Relu,
            norm: NormKind::None,
            pool: PoolKind::None,
            input,
            classes,
        }
    }

    /// The classic two-convolution network with 120/84 unit heads.
    pub fn lenet(input: (usize, usize, usize), classes: usize) -> Self {
        Self {
            family: Family::LeNet,
            depth: 2,
            width: 16,
            activation: Activation::Relu,
            norm: NormKind::None,
            pool: PoolKind::Avg,
            input,
            classes,
        }
    }

    /// Short identifier used in reports and file names.
    pub fn label(&self) -> String {
        format!(
            "{}-d{}-w{}-{}-{}-{}",
            self.family, self.depth, self.width, self.activation, self.norm, self.pool
        )
    }

    /// Key-value serialization for configuration files and artifacts.
    pub fn to_kv(&self) -> String {
        format!(
            "family = {}\ndepth = {}\nwidth = {}\nactivation = {}\nnorm = {}\npool = {}\n",
            self.family, self.depth, self.width, self.activation, self.norm, self.pool
        )
    }

    pub fn validate(&self) -> Result<(), ZooError> {
        plan(self).map(|_| ())
    }

    /// Parses a `label()`-format identifier, attaching the given geometry.
    pub fn parse_label(
        label: &str,
        input: (usize, usize, usize),
        classes: usize,
    ) -> Result<Self, String> {
        let parts: Vec<&str> = label.split('-').collect();
        if parts.len() != 6 {
            return Err(format!(
                "architecture label '{label}' should have 6 dash-separated parts, like convnet-d3-w128-relu-instance-avg"
            ));
        }
        let family: Family = parts[0].parse()?;
        let depth = parts[1]
            .strip_prefix('d')
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| format!("bad depth part '{}' in '{label}'", parts[1]))?;
        let width = parts[2]
            .strip_prefix('w')
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| format!("bad width part '{}' in '{label}'", parts[2]))?;
        let activation: Activation = parts[3].parse()?;
        let norm: NormKind = parts[4].parse()?;
        let pool: PoolKind = parts[5].parse()?;
        Ok(Self { family, depth, width, activation, norm, pool, input, classes })
    }
}

#[derive(Clone, Debug)]
enum PlannedLayer {
    Conv { in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize },
    Norm { channels: usize },
    Act,
    Pool { kind: PoolKind },
    Flatten { len: usize },
    Linear { in_d: usize, out_d: usize },
}

fn pool_step(kind: PoolKind, block: usize, h: &mut usize, w: &mut usize) -> Result<(), ZooError> {
    if kind == PoolKind::None {
        return Ok(());
    }
    if *h < 2 || *w < 2 {
        return Err(ZooError::SpatialCollapse { block, h: *h, w: *w });
    }
    *h = (*h - 2) / 2 + 1;
    *w = (*w - 2) / 2 + 1;
    Ok(())
}

fn plan(spec: &ArchSpec) -> Result<Vec<PlannedLayer>, ZooError> {
    if spec.depth == 0 || spec.classes == 0 {
        return Err(ZooError::Invalid(format!(
            "depth {} and classes {} must be positive",
            spec.depth, spec.classes
        )));
    }
    let (c0, h0, w0) = spec.input;
    if c0 == 0 || h0 == 0 || w0 == 0 {
        return Err(ZooError::Invalid(format!("degenerate input {:?}", spec.input)));
    }
    let mut layers = Vec::new();
    match spec.family {
        Family::ConvNet => {
            if spec.width == 0 {
                return Err(ZooError::Invalid("width must be positive".into()));
            }
            if spec.norm == NormKind::Group && spec.width % GROUP_NORM_GROUPS != 0 {
                return Err(ZooError::Invalid(format!(
                    "group normalization needs width divisible by {GROUP_NORM_GROUPS}, got {}",
                    spec.width
                )));
            }
            let (mut c, mut h, mut w) = (c0, h0, w0);
            for block in 0..spec.depth {
                layers.push(PlannedLayer::Conv { in_c: c, out_c: spec.width, k: 3, stride: 1, pad: 1 });
                c = spec.width;
                if spec.norm != NormKind::None {
                    layers.push(PlannedLayer::Norm { channels: c });
                }
                layers.push(PlannedLayer::Act);
                if spec.pool != PoolKind::None {
                    layers.push(PlannedLayer::Pool { kind: spec.pool });
                    pool_step(spec.pool, block, &mut h, &mut w)?;
                }
            }
            layers.push(PlannedLayer::Flatten { len: c * h * w });
            layers.push(PlannedLayer::Linear { in_d: c * h * w, out_d: spec.classes });
        }
        Family::Mlp => {
            if spec.width == 0 {
                return Err(ZooError::Invalid("width must be positive".into()));
            }
            let mut d = c0 * h0 * w0;
            layers.push(PlannedLayer::Flatten { len: d });
            for _ in 0..spec.depth {
                layers.push(PlannedLayer::Linear { in_d: d, out_d: spec.width });
                layers.push(PlannedLayer::Act);
                d = spec.width;
            }
            layers.push(PlannedLayer::Linear { in_d: d, out_d: spec.classes });
        }
        Family::LeNet => {
            let (mut h, mut w) = (h0, w0);
            layers.push(PlannedLayer::Conv { in_c: c0, out_c: 6, k: 5, stride: 1, pad: 2 });
            layers.push(PlannedLayer::Act);
            layers.push(PlannedLayer::Pool { kind: PoolKind::Avg });
            pool_step(PoolKind::Avg, 0, &mut h, &mut w)?;
            if h < 5 || w < 5 {
                return Err(ZooError::SpatialCollapse { block: 1, h, w });
            }
            layers.push(PlannedLayer::Conv { in_c: 6, out_c: 16, k: 5, stride: 1, pad: 0 });
            h -= 4;
            w -= 4;
            layers.push(PlannedLayer::Act);
            layers.push(PlannedLayer::Pool { kind: PoolKind::Avg });
            pool_step(PoolKind::Avg, 1, &mut h, &mut w)?;
            let len = 16 * h * w;
            layers.push(PlannedLayer::Flatten { len });
            layers.push(PlannedLayer::Linear { in_d: len, out_d: 120 });
            layers.push(PlannedLayer::Act);
            layers.push(PlannedLayer::Linear { in_d: 120, out_d: 84 });
            layers.push(PlannedLayer::Act);
            layers.push(PlannedLayer::Linear { in_d: 84, out_d: spec.classes });
        }
    }
    Ok(layers)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    LinearWeight,
    Bias,
    NormGamma,
    NormBeta,
}

/// One named parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamTensor<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

impl<T: Real> ParamTensor<T> {
    /// Row structure for gradient grouping: `(rows, row_len)` where each row
    /// is the weight vector feeding one output node.
    pub fn grad_rows(&self) -> (usize, usize) {
        let s = self.value.shape();
        match self.kind {
            ParamKind::ConvWeight => (s.dim(0), s.numel() / s.dim(0)),
            ParamKind::LinearWeight => (s.dim(0), s.dim(1)),
            ParamKind::Bias | ParamKind::NormGamma | ParamKind::NormBeta => (s.dim(0), 1),
        }
    }
}

/// Running statistics for one batch-normalization layer.
#[derive(Clone, Debug)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Forward-pass construction options.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOpts {
    /// Use batch statistics (true) or running statistics (false) in batch
    /// normalization layers.
    pub train_stats: bool,
    /// Bind parameters as differentiable leaves (true) or constants (false).
    pub trainable: bool,
}

impl ForwardOpts {
    pub fn train() -> Self {
        Self { train_stats: true, trainable: true }
    }

    pub fn eval() -> Self {
        Self { train_stats: false, trainable: false }
    }
}

/// Result of building a forward pass into a graph.
pub struct ForwardPass<T> {
    pub logits: NodeId,
    /// Graph nodes for every parameter, aligned with `Network::params`.
    /// Empty when built with `trainable: false`.
    pub param_nodes: Vec<NodeId>,
    /// Batch statistics observed by batch-norm layers, aligned with
    /// `Network::bn_running`. Empty outside training mode.
    pub batch_stats: Vec<nn::BatchStats<T>>,
}

/// A network: spec, parameters, and batch-norm running state.
#[derive(Clone, Debug)]
pub struct Network<T> {
    pub spec: ArchSpec,
    pub params: Vec<ParamTensor<T>>,
    pub bn_running: Vec<BnRunning<T>>,
}

impl<T: Real> Network<T> {
    /// Initializes parameters: weights from a zero-mean normal with standard
    /// deviation `sqrt(2 / fan_in)`, biases zero, affine scales one.
    pub fn init<R: Rng>(spec: ArchSpec, rng: &mut R) -> Result<Self, ZooError> {
        let layers = plan(&spec)?;
        let mut params = Vec::new();
        let mut bn_running = Vec::new();
        let mut conv_i = 0usize;
        let mut lin_i = 0usize;
        let mut norm_i = 0usize;
        for layer in &layers {
            match layer {
                PlannedLayer::Conv { in_c, out_c, k, .. } => {
                    let fan_in = in_c * k * k;
                    params.push(ParamTensor {
                        name: format!("conv{conv_i}.weight"),
                        kind: ParamKind::ConvWeight,
                        value: kaiming(Shape::d4(*out_c, *in_c, *k, *k), fan_in, rng),
                    });
                    params.push(ParamTensor {
                        name: format!("conv{conv_i}.bias"),
                        kind: ParamKind::Bias,
                        value: Tensor::zeros(Shape::d1(*out_c)),
                    });
                    conv_i += 1;
                }
                PlannedLayer::Linear { in_d, out_d } => {
                    params.push(ParamTensor {
                        name: format!("linear{lin_i}.weight"),
                        kind: ParamKind::LinearWeight,
                        value: kaiming(Shape::d2(*out_d, *in_d), *in_d, rng),
                    });
                    params.push(ParamTensor {
                        name: format!("linear{lin_i}.bias"),
                        kind: ParamKind::Bias,
                        value: Tensor::zeros(Shape::d1(*out_d)),
                    });
                    lin_i += 1;
                }
                PlannedLayer::Norm { channels } => {
                    params.push(ParamTensor {
                        name: format!("norm{norm_i}.gamma"),
                        kind: ParamKind::NormGamma,
                        value: Tensor::full(Shape::d1(*channels), T::one()),
                    });
                    params.push(ParamTensor {
                        name: format!("norm{norm_i}.beta"),
                        kind: ParamKind::NormBeta,
                        value: Tensor::zeros(Shape::d1(*channels)),
                    });
                    if spec.norm == NormKind::Batch {
                        bn_running.push(BnRunning {
                            mean: vec![T::zero(); *channels],
                            var: vec![T::one(); *channels],
                        });
                    }
                    norm_i += 1;
                }
                _ => {}
            }
        }
        Ok(Self { spec, params, bn_running })
    }

    /// Builds the forward pass from `input` (a rank-4 node already in `g`)
    /// to class logits.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        input: NodeId,
        opts: ForwardOpts,
    ) -> Result<ForwardPass<T>, ZooError> {
        let layers = plan(&self.spec)?;
        let mut param_nodes = Vec::with_capacity(self.params.len());
        let mut cursor = 0usize;
        let mut next = |g: &mut Graph<T>, nodes: &mut Vec<NodeId>| -> NodeId {
            let t = self.params[cursor].value.clone();
            cursor += 1;
            let id = if opts.trainable { g.leaf(t) } else { g.constant(t) };
            nodes.push(id);
            id
        };
        let mut bn_slot = 0usize;
        let mut batch_stats = Vec::new();
        let mut x = input;
        for layer in &layers {
            match layer {
                PlannedLayer::Conv { stride, pad, .. } => {
                    let wgt = next(g, &mut param_nodes);
                    let bias = next(g, &mut param_nodes);
                    let y = g.conv2d(x, wgt, *stride, *pad)?;
                    let sy = g.shape(y);
                    let br = g.reshape(bias, Shape::d4(1, sy.dim(1), 1, 1))?;
                    let bb = g.broadcast(br, sy)?;
                    x = g.add(y, bb)?;
                }
                PlannedLayer::Linear { .. } => {
                    let wgt = next(g, &mut param_nodes);
                    let bias = next(g, &mut param_nodes);
                    x = nn::linear(g, x, wgt, Some(bias))?;
                }
                PlannedLayer::Norm { .. } => {
                    let gamma = next(g, &mut param_nodes);
                    let beta = next(g, &mut param_nodes);
                    x = match self.spec.norm {
                        NormKind::Instance => nn::instance_norm(g, x, Some(gamma), Some(beta), NORM_EPS)?,
                        NormKind::Layer => nn::layer_norm(g, x, Some(gamma), Some(beta), NORM_EPS)?,
                        NormKind::Group => {
                            nn::group_norm(g, x, GROUP_NORM_GROUPS, Some(gamma), Some(beta), NORM_EPS)?
                        }
                        NormKind::Batch => {
                            if opts.train_stats {
                                let (y, stats) = nn::batch_norm_train(g, x, Some(gamma), Some(beta), NORM_EPS)?;
                                batch_stats.push(stats);
                                y
                            } else {
                                let run = &self.bn_running[bn_slot];
                                nn::batch_norm_eval(g, x, Some(gamma), Some(beta), &run.mean, &run.var, NORM_EPS)?
                            }
                        }
                        NormKind::None => unreachable!("norm layer planned without a norm kind"),
                    };
                    if self.spec.norm == NormKind::Batch {
                        bn_slot += 1;
                    }
                }
                PlannedLayer::Act => {
                    x = match self.spec.activation {
                        Activation::Relu => g.relu(x)?,
                        Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE)?,
                        Activation::Sigmoid => g.sigmoid(x)?,
                    };
                }
                PlannedLayer::Pool { kind } => {
                    x = match kind {
                        PoolKind::Avg => g.avg_pool(x, 2, 2)?,
                        PoolKind::Max => g.max_pool(x, 2, 2)?,
                        PoolKind::None => x,
                    };
                }
                PlannedLayer::Flatten { len } => {
                    let n = g.shape(x).dim(0);
                    x = g.reshape(x, Shape::d2(n, *len))?;
                }
            }
        }
        Ok(ForwardPass { logits: x, param_nodes, batch_stats })
    }

    /// Folds freshly observed batch statistics into the running averages.
    pub fn update_bn_running(&mut self, batch_stats: &[nn::BatchStats<T>]) {
        let m = T::from_f64(BN_MOMENTUM);
        let keep = T::one() - m;
        for (run, stats) in self.bn_running.iter_mut().zip(batch_stats) {
            for (r, b) in run.mean.iter_mut().zip(&stats.mean) {
                *r = keep * *r + m * *b;
            }
            for (r, b) in run.var.iter_mut().zip(&stats.var) {
                *r = keep * *r + m * *b;
            }
        }
    }

    /// Indices of parameters participating in gradient matching: weight
    /// matrices always, normalization affine parameters only on request,
    /// biases never.
    pub fn matchable_params(&self, include_norm_affine: bool) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| match p.kind {
                ParamKind::ConvWeight | ParamKind::LinearWeight => true,
                ParamKind::NormGamma | ParamKind::NormBeta => include_norm_affine,
                ParamKind::Bias => false,
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Classifies a batch with running statistics and constant parameters,
    /// returning the predicted class per image.
    pub fn predict(&self, batch: &ImageBatch<T>) -> Result<Vec<usize>, ZooError> {
        let mut g = Graph::new();
        let x = g.constant(batch.images().clone());
        let pass = self.forward(&mut g, x, ForwardOpts::eval())?;
        let logits = g.value(pass.logits);
        let classes = logits.shape().dim(1);
        let mut out = Vec::with_capacity(batch.n());
        for row in logits.data().chunks_exact(classes) {
            let mut best = 0usize;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            out.push(best);
        }
        Ok(out)
    }
}

fn kaiming<T: Real, R: Rng>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    let data = (0..shape.numel())
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data)
}
