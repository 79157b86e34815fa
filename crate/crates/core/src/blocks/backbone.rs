use super::{forward_block, largest_divisor_at_most, BlockKind, BlockSpec, DEFAULT_CARDINALITY, DEFAULT_SE_REDUCTION};
use crate::config::{scaled_width, BackboneKind, ModelSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::{Layout, Weights};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub name: String,
    pub blocks: Vec<BlockSpec>,
}

/// A backbone with its head attachment points.
///
/// The pyramid is the outputs of the three attachment stages followed by the
/// output of the last (top) stage, at strides 8, 16, 32 and 64.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub stem: Vec<BlockSpec>,
    pub stages: Vec<Stage>,
    /// Zero-based indices into `stages`.
    pub attachments: [usize; 3],
    /// Encoding block on the detection branch, one per pyramid level.
    pub intermediate: [BlockSpec; 4],
    /// Reconstruction choices not pinned down by the layer names alone.
    pub notes: Vec<String>,
}

impl Backbone {
    pub fn build(kind: BackboneKind, spec: &ModelSpec) -> Result<Self> {
        Builder::new(kind, spec).finish()
    }

    pub fn top(&self) -> usize {
        self.stages.len() - 1
    }

    /// One-based stage numbers of the attachment points (`resx4` is stage 4).
    pub fn attachment_numbers(&self) -> [usize; 3] {
        self.attachments.map(|i| i + 1)
    }

    pub fn pyramid_stages(&self) -> [usize; 4] {
        let [a, b, c] = self.attachments;
        [a, b, c, self.top()]
    }

    pub fn pyramid_names(&self) -> [&str; 4] {
        self.pyramid_stages().map(|i| self.stages[i].name.as_str())
    }

    fn stage_out(&self, i: usize) -> usize {
        self.stages[i].blocks.last().map_or(0, |b| b.c_out)
    }

    pub fn pyramid_channels(&self) -> [usize; 4] {
        self.pyramid_stages().map(|i| self.stage_out(i))
    }

    pub fn intermediate_depth(&self) -> usize {
        self.intermediate[0].c_out
    }

    /// Backbone body parameters under `backbone.*`.
    pub fn layout(&self, l: &mut Layout) {
        for (i, b) in self.stem.iter().enumerate() {
            b.layout(&format!("backbone.stem{i}"), l);
        }
        for stage in &self.stages {
            for (j, b) in stage.blocks.iter().enumerate() {
                b.layout(&format!("backbone.{}.{j}", stage.name), l);
            }
        }
    }

    /// Intermediate encoding blocks under `inter.{level}`.
    pub fn intermediate_layout(&self, l: &mut Layout) {
        for (level, b) in self.intermediate.iter().enumerate() {
            b.layout(&format!("inter.{level}"), l);
        }
    }

    /// Runs the body and returns the four pyramid feature maps.
    pub fn forward<S: Scalar>(&self, input: &Tensor<S>, w: &Weights<S>) -> Result<[Tensor<S>; 4]> {
        let mut x = input.clone();
        for (i, b) in self.stem.iter().enumerate() {
            x = forward_block(b, &x, w, &format!("backbone.stem{i}"))?;
        }
        let wanted = self.pyramid_stages();
        let mut outs: Vec<Tensor<S>> = Vec::with_capacity(4);
        for (si, stage) in self.stages.iter().enumerate() {
            for (j, b) in stage.blocks.iter().enumerate() {
                x = forward_block(b, &x, w, &format!("backbone.{}.{j}", stage.name))?;
            }
            if wanted.contains(&si) {
                outs.push(x.clone());
            }
        }
        outs.try_into()
            .map_err(|_| Error::Invariant("backbone did not produce four pyramid levels".into()))
    }

    pub fn forward_intermediate<S: Scalar>(
        &self,
        level: usize,
        feature: &Tensor<S>,
        w: &Weights<S>,
    ) -> Result<Tensor<S>> {
        forward_block(&self.intermediate[level], feature, w, &format!("inter.{level}"))
    }
}

/// Builds a backbone from its name; see [`BackboneKind`] for the legal names.
pub fn build_backbone(name: &str, spec: &ModelSpec) -> Result<Backbone> {
    Backbone::build(name.parse()?, spec)
}

struct Builder<'a> {
    kind: BackboneKind,
    spec: &'a ModelSpec,
    stem: Vec<BlockSpec>,
    stages: Vec<Stage>,
    channels: usize,
    notes: Vec<String>,
}

impl<'a> Builder<'a> {
    fn new(kind: BackboneKind, spec: &'a ModelSpec) -> Self {
        Self {
            kind,
            spec,
            stem: Vec::new(),
            stages: Vec::new(),
            channels: 3,
            notes: Vec::new(),
        }
    }

    fn w(&self, c: usize) -> usize {
        self.spec.width(c)
    }

    fn stem_block(&mut self, kind: BlockKind, c_out: usize, stride: usize) {
        let c_out = if kind == BlockKind::MaxPool { self.channels } else { self.w(c_out) };
        self.stem.push(BlockSpec::new(kind, self.channels, c_out, stride));
        self.channels = c_out;
    }

    /// Appends a single-block stage. `c_out` is the unscaled depth.
    fn stage(&mut self, name: impl Into<String>, kind: BlockKind, c_out: usize, stride: usize) {
        let c_out = self.w(c_out);
        self.stage_exact(name, kind, c_out, stride);
    }

    fn stage_exact(&mut self, name: impl Into<String>, kind: BlockKind, c_out: usize, stride: usize) {
        let block = BlockSpec::new(kind, self.channels, c_out, stride);
        self.channels = c_out;
        self.stages.push(Stage {
            name: name.into(),
            blocks: vec![block],
        });
    }

    fn resnext(&self, c_out_scaled: usize, se: bool) -> BlockKind {
        let width = scaled_width(c_out_scaled / 2, 1.0);
        BlockKind::ResnextGroup {
            cardinality: largest_divisor_at_most(width, DEFAULT_CARDINALITY),
            width,
            se_reduction: se.then(|| largest_divisor_at_most(c_out_scaled, DEFAULT_SE_REDUCTION)),
        }
    }

    fn resnext_width(&self, unscaled_width: usize) -> (usize, usize) {
        let width = self.w(unscaled_width);
        (width, largest_divisor_at_most(width, DEFAULT_CARDINALITY))
    }

    fn resnext_stage(&mut self, name: String, width: usize, c_out: usize, stride: usize, se: bool) {
        let (width, cardinality) = self.resnext_width(width);
        let c_out = self.w(c_out);
        let kind = BlockKind::ResnextGroup {
            cardinality,
            width,
            se_reduction: se.then(|| largest_divisor_at_most(c_out, DEFAULT_SE_REDUCTION)),
        };
        self.stage_exact(name, kind, c_out, stride);
    }

    fn resnet_stem(&mut self) {
        self.stem_block(BlockKind::Conv { kernel: 7 }, 64, 2);
        self.stem_block(BlockKind::MaxPool, 0, 2);
    }

    fn finish(mut self) -> Result<Backbone> {
        self.spec.check()?;
        let head = self.w(self.spec.head_depth);
        let attachments: [usize; 3];
        let mut inter_depth = head;
        match self.kind {
            BackboneKind::Vgg16 => {
                let vgg = |kernels: &[usize], pool_first| BlockKind::Vgg {
                    kernels: kernels.to_vec(),
                    pool_first,
                };
                self.stage("conv1", vgg(&[3, 3], true), 64, 1);
                self.stage("conv2", vgg(&[3, 3], true), 128, 2);
                self.stage("conv3", vgg(&[3, 3, 3], true), 256, 2);
                self.stage("conv4", vgg(&[3, 3, 3], true), 512, 2);
                self.stage("conv5", vgg(&[3, 3, 3], true), 512, 2);
                self.stage("conv_fc7", vgg(&[3, 1], true), 1024, 2);
                self.stage_exact("conv6", vgg(&[1, 3], false), head, 2);
                attachments = [3, 4, 5];
                self.notes.push("conv_fc6 realized as an undilated 3x3 after a 2x2 pool".into());
            }
            BackboneKind::Resnet18 => {
                self.resnet_stem();
                let widths = [64, 128, 256, 512];
                for (i, &c) in widths.iter().enumerate() {
                    let c = self.w(c);
                    let stride = if i == 0 { 1 } else { 2 };
                    let b0 = BlockSpec::new(BlockKind::ResidualBasic, self.channels, c, stride);
                    let b1 = BlockSpec::new(BlockKind::ResidualBasic, c, c, 1);
                    self.channels = c;
                    self.stages.push(Stage {
                        name: format!("res{}", i + 2),
                        blocks: vec![b0, b1],
                    });
                }
                self.stage_exact("res6", BlockKind::ResidualBasic, head, 2);
                attachments = [1, 2, 3];
            }
            BackboneKind::Resnext26 | BackboneKind::Resnext50 | BackboneKind::SeResnext50 => {
                self.resnet_stem();
                let se = self.kind == BackboneKind::SeResnext50;
                let depths: &[usize] = if self.kind == BackboneKind::Resnext26 {
                    &[2, 2, 2, 2]
                } else {
                    &[3, 4, 6, 3]
                };
                let mut n = 0;
                for (g, &count) in depths.iter().enumerate() {
                    for j in 0..count {
                        n += 1;
                        let name = if se {
                            format!("conv{}_{}", g + 2, j + 1)
                        } else {
                            format!("resx{n}")
                        };
                        let stride = if g > 0 && j == 0 { 2 } else { 1 };
                        self.resnext_stage(name, 128 << g, 256 << g, stride, se);
                    }
                }
                let top = if se { "conv6".to_string() } else { format!("resx{}", n + 1) };
                let kind = self.resnext(head, se);
                self.stage_exact(top, kind, head, 2);
                let end3 = depths[0] + depths[1];
                let end4 = end3 + depths[2];
                let end5 = end4 + depths[3];
                attachments = [end3 - 1, end4 - 1, end5 - 1];
            }
            BackboneKind::InceptionSenet => {
                self.resnet_stem();
                self.stem_block(BlockKind::Conv { kernel: 3 }, 192, 1);
                self.stem_block(BlockKind::MaxPool, 0, 2);
                for (name, c, stride) in [
                    ("inception_3a", 256, 1),
                    ("inception_3b", 480, 1),
                    ("inception_4a", 512, 2),
                    ("inception_4b", 512, 1),
                    ("inception_4c", 512, 1),
                    ("inception_4d", 528, 1),
                    ("inception_4e", 832, 1),
                    ("inception_5a", 832, 2),
                    ("inception_5b", 1024, 1),
                ] {
                    let c = self.w(c);
                    let r = largest_divisor_at_most(c, DEFAULT_SE_REDUCTION);
                    self.stage_exact(name, BlockKind::InceptionSe { reduction: r }, c, stride);
                }
                let r = largest_divisor_at_most(head, DEFAULT_SE_REDUCTION);
                self.stage_exact("inception_6", BlockKind::InceptionSe { reduction: r }, head, 2);
                attachments = [1, 5, 8];
                self.notes.push("inception towers reduced to four branches with SE on the concatenation".into());
            }
            BackboneKind::Xception => {
                self.stem_block(BlockKind::Conv { kernel: 3 }, 32, 2);
                self.stem_block(BlockKind::Conv { kernel: 3 }, 64, 1);
                self.stage("xception1", BlockKind::Xception, 128, 2);
                self.stage("xception2", BlockKind::Xception, 256, 2);
                for i in 3..=11 {
                    self.stage(format!("xception{i}"), BlockKind::Xception, 728, 1);
                }
                self.stage("xception12", BlockKind::Xception, 1024, 2);
                self.stage("conv4_1", BlockKind::DepthwiseSeparable, 1536, 2);
                self.stage("conv4_2", BlockKind::DepthwiseSeparable, 2048, 1);
                self.stage_exact("xception13", BlockKind::Xception, head, 2);
                attachments = [10, 11, 13];
                self.notes.push("middle flow kept at stride 8 so xception11/xception12/conv4_2 land on strides 8/16/32".into());
            }
            BackboneKind::Mobilenetv1 => {
                self.stem_block(BlockKind::Conv { kernel: 3 }, 32, 2);
                let ds = BlockKind::DepthwiseSeparable;
                for (name, c, stride) in [
                    ("conv2_1", 64, 1),
                    ("conv2_2", 128, 2),
                    ("conv3_1", 128, 1),
                    ("conv3_2", 256, 2),
                    ("conv4_1", 256, 1),
                    ("conv4_2", 512, 2),
                    ("conv5_1", 512, 1),
                    ("conv5_2", 512, 1),
                    ("conv5_3", 512, 1),
                    ("conv5_4", 512, 1),
                    ("conv5_5", 512, 1),
                    ("conv5_6", 1024, 2),
                    ("conv6", 1024, 1),
                ] {
                    self.stage(name, ds.clone(), c, stride);
                }
                self.stage("conv7", ds, 512, 2);
                attachments = [4, 10, 12];
            }
            BackboneKind::Mobilenetv2 => {
                self.stem_block(BlockKind::Conv { kernel: 3 }, 32, 2);
                let ir = |t| BlockKind::InvertedResidual { expansion: t };
                for (name, t, c, stride) in [
                    ("conv2_1", 1, 16, 1),
                    ("conv2_2", 6, 24, 2),
                    ("conv3_1", 6, 24, 1),
                    ("conv3_2", 6, 32, 2),
                    ("conv4_1", 6, 32, 1),
                    ("conv4_2", 6, 32, 1),
                    ("conv4_3", 6, 64, 2),
                    ("conv4_4", 6, 64, 1),
                    ("conv4_5", 6, 64, 1),
                    ("conv4_6", 6, 64, 1),
                    ("conv4_7", 6, 96, 1),
                    ("conv5_1", 6, 96, 1),
                    ("conv5_2", 6, 96, 1),
                    ("conv5_3", 6, 160, 2),
                    ("conv6_1", 6, 160, 1),
                    ("conv6_2", 6, 160, 1),
                    ("conv6_3", 6, 320, 1),
                ] {
                    self.stage(name, ir(t), c, stride);
                }
                self.stage("conv6_4", BlockKind::Conv { kernel: 1 }, 1280, 1);
                self.stage("conv7", ir(1), 96, 2);
                inter_depth = self.w(96);
                attachments = [3, 10, 17];
            }
        }

        let top = self.stages.len() - 1;
        let pyramid = [attachments[0], attachments[1], attachments[2], top];
        let level_channels =
            pyramid.map(|i| self.stages[i].blocks.last().map_or(0, |b| b.c_out));
        let intermediate = level_channels.map(|c_in| self.intermediate_block(c_in, inter_depth));
        let backbone = Backbone {
            kind: self.kind,
            stem: self.stem,
            stages: self.stages,
            attachments,
            intermediate,
            notes: self.notes,
        };
        for b in backbone
            .stem
            .iter()
            .chain(backbone.stages.iter().flat_map(|s| &s.blocks))
            .chain(&backbone.intermediate)
        {
            b.validate()?;
        }
        Ok(backbone)
    }

    fn intermediate_block(&self, c_in: usize, depth: usize) -> BlockSpec {
        let kind = match self.kind {
            BackboneKind::Vgg16 => BlockKind::Vgg {
                kernels: vec![3],
                pool_first: true,
            },
            BackboneKind::Resnet18 => BlockKind::ResidualBasic,
            BackboneKind::Resnext26 | BackboneKind::Resnext50 => self.resnext(depth, false),
            BackboneKind::SeResnext50 => self.resnext(depth, true),
            BackboneKind::InceptionSenet => BlockKind::InceptionSe {
                reduction: largest_divisor_at_most(depth, DEFAULT_SE_REDUCTION),
            },
            BackboneKind::Xception => BlockKind::Xception,
            BackboneKind::Mobilenetv1 => BlockKind::DepthwiseSeparable,
            BackboneKind::Mobilenetv2 => BlockKind::InvertedResidual { expansion: 1 },
        };
        BlockSpec::new(kind, c_in, depth, 1)
    }
}
