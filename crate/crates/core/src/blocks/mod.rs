//! Convolutional building blocks and the backbone recipes assembled from them.

mod backbone;

pub use backbone::{build_backbone, Backbone, Stage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    batch_norm_inference, conv2d, elementwise_add, global_avg_pool, max_pool, max_pool_padded, relu,
    scale_channels, sigmoid, ConvParams, Tensor,
};
use crate::weights::{Layout, Weights};

pub const DEFAULT_SE_REDUCTION: usize = 16;
pub const DEFAULT_CARDINALITY: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockKind {
    /// `k x k` convolution, batch norm, ReLU. Used for stems and plain layers.
    Conv { kernel: usize },
    /// Parameter-free 2x2 stride-2 max pooling.
    MaxPool,
    /// Biased convolutions with ReLU, no batch norm. A stride-2 block either
    /// pools first or strides its last convolution.
    Vgg { kernels: Vec<usize>, pool_first: bool },
    ResidualBasic,
    /// Bottleneck with a grouped 3x3, optionally followed by squeeze-excitation.
    ResnextGroup {
        cardinality: usize,
        width: usize,
        se_reduction: Option<usize>,
    },
    SeModule { reduction: usize },
    DepthwiseSeparable,
    /// Expand 1x1, depthwise 3x3, linear 1x1 projection.
    InvertedResidual { expansion: usize },
    Xception,
    /// Four-branch tower (1x1 / 3x3 / double 3x3 / pool-project) with SE on
    /// the concatenated output.
    InceptionSe { reduction: usize },
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Conv { .. } => "conv",
            BlockKind::MaxPool => "max_pool",
            BlockKind::Vgg { .. } => "vgg",
            BlockKind::ResidualBasic => "residual_basic",
            BlockKind::ResnextGroup { .. } => "resnext_group",
            BlockKind::SeModule { .. } => "se_module",
            BlockKind::DepthwiseSeparable => "depthwise_separable",
            BlockKind::InvertedResidual { .. } => "inverted_residual",
            BlockKind::Xception => "xception_block",
            BlockKind::InceptionSe { .. } => "inception_se",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

/// Largest divisor of `n` not exceeding `cap`.
pub fn largest_divisor_at_most(n: usize, cap: usize) -> usize {
    (1..=cap.min(n).max(1)).rev().find(|d| n % d == 0).unwrap_or(1)
}

impl BlockSpec {
    pub fn new(kind: BlockKind, c_in: usize, c_out: usize, stride: usize) -> Self {
        Self {
            kind,
            c_in,
            c_out,
            stride,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::invalid("block", format!("{}: {}", self.kind.name(), msg.into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 {
            return Err(self.err("channel counts must be positive"));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(self.err(format!("stride {} not in {{1, 2}}", self.stride)));
        }
        match &self.kind {
            BlockKind::Conv { kernel } if kernel % 2 == 0 => {
                Err(self.err("kernel must be odd"))
            }
            BlockKind::MaxPool if self.c_in != self.c_out || self.stride != 2 => {
                Err(self.err("pooling keeps channels and has stride 2"))
            }
            BlockKind::Vgg { kernels, .. } if kernels.is_empty() || kernels.iter().any(|k| k % 2 == 0) => {
                Err(self.err("needs at least one odd kernel"))
            }
            BlockKind::ResnextGroup { cardinality, width, se_reduction } => {
                if *cardinality == 0 || width % cardinality != 0 {
                    return Err(self.err(format!(
                        "cardinality {cardinality} does not divide bottleneck width {width}"
                    )));
                }
                match se_reduction {
                    Some(r) if *r == 0 || self.c_out % r != 0 => {
                        Err(self.err(format!("SE reduction {r} does not divide {}", self.c_out)))
                    }
                    _ => Ok(()),
                }
            }
            BlockKind::SeModule { reduction } => {
                if self.c_in != self.c_out || self.stride != 1 {
                    Err(self.err("squeeze-excitation keeps shape"))
                } else if *reduction == 0 || self.c_in % reduction != 0 {
                    Err(self.err(format!("reduction {reduction} does not divide {}", self.c_in)))
                } else {
                    Ok(())
                }
            }
            BlockKind::InvertedResidual { expansion } if *expansion == 0 => {
                Err(self.err("expansion must be positive"))
            }
            BlockKind::InceptionSe { reduction } => {
                if self.c_out % 4 != 0 {
                    Err(self.err(format!("output depth {} not divisible into 4 branches", self.c_out)))
                } else if *reduction == 0 || self.c_out % reduction != 0 {
                    Err(self.err(format!("SE reduction {reduction} does not divide {}", self.c_out)))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn has_identity_skip(&self) -> bool {
        self.stride == 1 && self.c_in == self.c_out
    }

    /// Declares every parameter tensor of the block under `prefix`.
    pub fn layout(&self, prefix: &str, l: &mut Layout) {
        let (ci, co) = (self.c_in, self.c_out);
        let p = |s: &str| format!("{prefix}.{s}");
        match &self.kind {
            BlockKind::Conv { kernel } => {
                l.conv(&p("conv"), co, ci, *kernel, false);
                l.batch_norm(&p("bn"), co);
            }
            BlockKind::MaxPool => {}
            BlockKind::Vgg { kernels, .. } => {
                for (i, &k) in kernels.iter().enumerate() {
                    l.conv(&p(&format!("conv{}", i + 1)), co, if i == 0 { ci } else { co }, k, true);
                }
            }
            BlockKind::ResidualBasic => {
                l.conv(&p("conv1"), co, ci, 3, false);
                l.batch_norm(&p("bn1"), co);
                l.conv(&p("conv2"), co, co, 3, false);
                l.batch_norm(&p("bn2"), co);
                if !self.has_identity_skip() {
                    l.conv(&p("proj"), co, ci, 1, false);
                    l.batch_norm(&p("proj_bn"), co);
                }
            }
            BlockKind::ResnextGroup {
                cardinality,
                width,
                se_reduction,
            } => {
                l.conv(&p("reduce"), *width, ci, 1, false);
                l.batch_norm(&p("reduce_bn"), *width);
                l.conv(&p("group"), *width, width / cardinality, 3, false);
                l.batch_norm(&p("group_bn"), *width);
                l.conv(&p("expand"), co, *width, 1, false);
                l.batch_norm(&p("expand_bn"), co);
                if let Some(r) = se_reduction {
                    se_layout(&p("se"), co, *r, l);
                }
                if !self.has_identity_skip() {
                    l.conv(&p("proj"), co, ci, 1, false);
                    l.batch_norm(&p("proj_bn"), co);
                }
            }
            BlockKind::SeModule { reduction } => se_layout(prefix, ci, *reduction, l),
            BlockKind::DepthwiseSeparable => {
                l.conv(&p("dw"), ci, 1, 3, false);
                l.batch_norm(&p("dw_bn"), ci);
                l.conv(&p("pw"), co, ci, 1, false);
                l.batch_norm(&p("pw_bn"), co);
            }
            BlockKind::InvertedResidual { expansion } => {
                let hidden = ci * expansion;
                l.conv(&p("expand"), hidden, ci, 1, false);
                l.batch_norm(&p("expand_bn"), hidden);
                l.conv(&p("dw"), hidden, 1, 3, false);
                l.batch_norm(&p("dw_bn"), hidden);
                l.conv(&p("project"), co, hidden, 1, false);
                l.batch_norm(&p("project_bn"), co);
            }
            BlockKind::Xception => {
                l.conv(&p("sep1.dw"), ci, 1, 3, false);
                l.conv(&p("sep1.pw"), co, ci, 1, false);
                l.batch_norm(&p("bn1"), co);
                l.conv(&p("sep2.dw"), co, 1, 3, false);
                l.conv(&p("sep2.pw"), co, co, 1, false);
                l.batch_norm(&p("bn2"), co);
                if !self.has_identity_skip() {
                    l.conv(&p("proj"), co, ci, 1, false);
                    l.batch_norm(&p("proj_bn"), co);
                }
            }
            BlockKind::InceptionSe { reduction } => {
                let b = co / 4;
                for (name, c_in, k) in [
                    ("b1", ci, 1),
                    ("b2a", ci, 1),
                    ("b2b", b, 3),
                    ("b3a", ci, 1),
                    ("b3b", b, 3),
                    ("b3c", b, 3),
                    ("b4", ci, 1),
                ] {
                    l.conv(&p(name), b, c_in, k, false);
                    l.batch_norm(&p(&format!("{name}_bn")), b);
                }
                se_layout(&p("se"), co, *reduction, l);
            }
        }
    }

    /// All parameters including batch-norm terms and biases.
    pub fn param_count(&self) -> u64 {
        let mut l = Layout::new();
        self.layout("b", &mut l);
        l.total()
    }

    /// Convolution kernel entries only.
    pub fn kernel_param_count(&self) -> u64 {
        let mut l = Layout::new();
        self.layout("b", &mut l);
        l.kernel_total()
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        if self.stride == 2 {
            (h.div_ceil(2), w.div_ceil(2))
        } else {
            (h, w)
        }
    }
}

fn se_layout(prefix: &str, c: usize, reduction: usize, l: &mut Layout) {
    let hidden = c / reduction.max(1);
    l.conv(&format!("{prefix}.reduce"), hidden, c, 1, false);
    l.conv(&format!("{prefix}.expand"), c, hidden, 1, false);
}

fn tag(layer: &str, e: Error) -> Error {
    match e {
        e @ Error::Weights { .. } => e,
        other => Error::Weights {
            layer: layer.to_string(),
            msg: other.to_string(),
        },
    }
}

/// Convolution using `{name}.weight` and, when present, `{name}.bias`.
pub(crate) fn conv_layer<S: Scalar>(
    w: &Weights<S>,
    name: &str,
    x: &Tensor<S>,
    params: ConvParams,
) -> Result<Tensor<S>> {
    let weight = w.require(&format!("{name}.weight"))?;
    let bias = match w.get(&format!("{name}.bias")) {
        Some(b) => b.data(),
        None => &[],
    };
    conv2d(x, weight, bias, params).map_err(|e| tag(name, e))
}

fn bn_layer<S: Scalar>(w: &Weights<S>, name: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
    let bn = w.batch_norm(name, x.channels())?;
    batch_norm_inference(x, &bn).map_err(|e| tag(name, e))
}

fn conv_bn<S: Scalar>(
    w: &Weights<S>,
    conv: &str,
    bn: &str,
    x: &Tensor<S>,
    params: ConvParams,
) -> Result<Tensor<S>> {
    bn_layer(w, bn, &conv_layer(w, conv, x, params)?)
}

fn add<S: Scalar>(layer: &str, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    elementwise_add(a, b).map_err(|e| tag(layer, e))
}

/// Squeeze-excitation: scales every channel by
/// `sigmoid(w_expand * relu(w_reduce * global_avg(input)))`.
///
/// `w_reduce` is `(c / reduction, c, 1, 1)` and `w_expand` is `(c, c / reduction, 1, 1)`.
pub fn forward_se<S: Scalar>(
    input: &Tensor<S>,
    w_reduce: &Tensor<S>,
    w_expand: &Tensor<S>,
    reduction: usize,
) -> Result<Tensor<S>> {
    const OP: &str = "forward_se";
    let c = input.channels();
    if reduction == 0 || c % reduction != 0 {
        return Err(Error::invalid(
            OP,
            format!("reduction {reduction} does not divide channel count {c}"),
        ));
    }
    let hidden = c / reduction;
    if w_reduce.shape() != [hidden, c, 1, 1] {
        return Err(Error::invalid(
            OP,
            format!("w_reduce shape {:?}, expected {:?}", w_reduce.shape(), [hidden, c, 1, 1]),
        ));
    }
    if w_expand.shape() != [c, hidden, 1, 1] {
        return Err(Error::invalid(
            OP,
            format!("w_expand shape {:?}, expected {:?}", w_expand.shape(), [c, hidden, 1, 1]),
        ));
    }
    let squeezed = global_avg_pool(input);
    let z = relu(&conv2d(&squeezed, w_reduce, &[], ConvParams::new(1, 1))?);
    let gate = sigmoid(&conv2d(&z, w_expand, &[], ConvParams::new(1, 1))?);
    scale_channels(input, gate.data())
}

fn se_named<S: Scalar>(w: &Weights<S>, prefix: &str, x: &Tensor<S>, reduction: usize) -> Result<Tensor<S>> {
    let reduce = w.require(&format!("{prefix}.reduce.weight"))?;
    let expand = w.require(&format!("{prefix}.expand.weight"))?;
    forward_se(x, reduce, expand, reduction).map_err(|e| tag(prefix, e))
}

/// Runs one block. Parameters are looked up under `prefix` following
/// [`BlockSpec::layout`].
pub fn forward_block<S: Scalar>(
    spec: &BlockSpec,
    input: &Tensor<S>,
    weights: &Weights<S>,
    prefix: &str,
) -> Result<Tensor<S>> {
    spec.validate()?;
    if input.channels() != spec.c_in {
        return Err(Error::shape("forward_block", "input channels", spec.c_in, input.channels()));
    }
    let p = |s: &str| format!("{prefix}.{s}");
    let s = spec.stride;
    let out = match &spec.kind {
        BlockKind::Conv { kernel } => relu(&conv_bn(
            weights,
            &p("conv"),
            &p("bn"),
            input,
            ConvParams::same(*kernel).stride(s),
        )?),
        BlockKind::MaxPool => max_pool(input, 2, 2)?,
        BlockKind::Vgg { kernels, pool_first } => {
            let mut x = if s == 2 && *pool_first {
                max_pool(input, 2, 2)?
            } else {
                input.clone()
            };
            for (i, &k) in kernels.iter().enumerate() {
                let last = i + 1 == kernels.len();
                let stride = if s == 2 && !*pool_first && last { 2 } else { 1 };
                x = relu(&conv_layer(
                    weights,
                    &p(&format!("conv{}", i + 1)),
                    &x,
                    ConvParams::same(k).stride(stride),
                )?);
            }
            x
        }
        BlockKind::ResidualBasic => {
            let f = relu(&conv_bn(weights, &p("conv1"), &p("bn1"), input, ConvParams::same(3).stride(s))?);
            let f = conv_bn(weights, &p("conv2"), &p("bn2"), &f, ConvParams::same(3))?;
            let skip = skip_path(spec, weights, prefix, input)?;
            relu(&add(prefix, &f, &skip)?)
        }
        BlockKind::ResnextGroup {
            cardinality,
            se_reduction,
            ..
        } => {
            let f = relu(&conv_bn(weights, &p("reduce"), &p("reduce_bn"), input, ConvParams::new(1, 1))?);
            let f = relu(&conv_bn(
                weights,
                &p("group"),
                &p("group_bn"),
                &f,
                ConvParams::same(3).stride(s).groups(*cardinality),
            )?);
            let mut f = conv_bn(weights, &p("expand"), &p("expand_bn"), &f, ConvParams::new(1, 1))?;
            if let Some(r) = se_reduction {
                f = se_named(weights, &p("se"), &f, *r)?;
            }
            let skip = skip_path(spec, weights, prefix, input)?;
            relu(&add(prefix, &f, &skip)?)
        }
        BlockKind::SeModule { reduction } => se_named(weights, prefix, input, *reduction)?,
        BlockKind::DepthwiseSeparable => {
            let x = relu(&conv_bn(
                weights,
                &p("dw"),
                &p("dw_bn"),
                input,
                ConvParams::same(3).stride(s).groups(spec.c_in),
            )?);
            relu(&conv_bn(weights, &p("pw"), &p("pw_bn"), &x, ConvParams::new(1, 1))?)
        }
        BlockKind::InvertedResidual { expansion } => {
            let hidden = spec.c_in * expansion;
            let x = relu(&conv_bn(weights, &p("expand"), &p("expand_bn"), input, ConvParams::new(1, 1))?);
            let x = relu(&conv_bn(
                weights,
                &p("dw"),
                &p("dw_bn"),
                &x,
                ConvParams::same(3).stride(s).groups(hidden),
            )?);
            let x = conv_bn(weights, &p("project"), &p("project_bn"), &x, ConvParams::new(1, 1))?;
            if spec.has_identity_skip() {
                add(prefix, &x, input)?
            } else {
                x
            }
        }
        BlockKind::Xception => {
            let x = relu(input);
            let x = conv_layer(weights, &p("sep1.dw"), &x, ConvParams::same(3).groups(spec.c_in))?;
            let x = conv_bn(weights, &p("sep1.pw"), &p("bn1"), &x, ConvParams::new(1, 1))?;
            let x = relu(&x);
            let x = conv_layer(
                weights,
                &p("sep2.dw"),
                &x,
                ConvParams::same(3).stride(s).groups(spec.c_out),
            )?;
            let x = conv_bn(weights, &p("sep2.pw"), &p("bn2"), &x, ConvParams::new(1, 1))?;
            let skip = skip_path(spec, weights, prefix, input)?;
            add(prefix, &x, &skip)?
        }
        BlockKind::InceptionSe { reduction } => {
            let x = if s == 2 { max_pool(input, 2, 2)? } else { input.clone() };
            let unit = |name: &str, t: &Tensor<S>, k: usize| -> Result<Tensor<S>> {
                Ok(relu(&conv_bn(weights, &p(name), &p(&format!("{name}_bn")), t, ConvParams::same(k))?))
            };
            let b1 = unit("b1", &x, 1)?;
            let b2 = unit("b2b", &unit("b2a", &x, 1)?, 3)?;
            let b3 = unit("b3c", &unit("b3b", &unit("b3a", &x, 1)?, 3)?, 3)?;
            let b4 = unit("b4", &max_pool_padded(&x, 3, 1, 1)?, 1)?;
            let cat = Tensor::concat_channels(&[&b1, &b2, &b3, &b4])?;
            se_named(weights, &p("se"), &cat, *reduction)?
        }
    };
    if out.channels() != spec.c_out {
        return Err(Error::Invariant(format!(
            "{prefix}: block produced {} channels, expected {}",
            out.channels(),
            spec.c_out
        )));
    }
    Ok(out)
}

fn skip_path<S: Scalar>(spec: &BlockSpec, w: &Weights<S>, prefix: &str, input: &Tensor<S>) -> Result<Tensor<S>> {
    if spec.has_identity_skip() {
        Ok(input.clone())
    } else {
        conv_bn(
            w,
            &format!("{prefix}.proj"),
            &format!("{prefix}.proj_bn"),
            input,
            ConvParams::new(1, 1).stride(spec.stride),
        )
    }
}
