//! Full detector: backbone, intermediate layers, refinement head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::Backbone;
use crate::config::{BackboneKind, ModelSpec};
use crate::error::{Error, Result};
use crate::head::{arm_forward, arm_layout, generate_anchors, odm_forward, odm_layout, tcb_fuse, tcb_layout, AnchorGrid, HeadConfig};
use crate::postprocess::{pipeline, DetectionRecord, HeadView, NmsParams, PipelineConfig, PipelineOutput};
use crate::profiler::{Profiled, RunOutcome, SpanRecorder, Stage};
use crate::scalar::Scalar;
use crate::tensor::{l2_normalize_channels, Tensor};
use crate::weights::{Layout, ParamSpec, WeightBundle, Weights};

const L2NORM_EPSILON: f64 = 1e-10;

/// Pyramid levels that get a learnable L2 rescale before both head branches.
pub fn l2norm_levels(kind: BackboneKind) -> &'static [usize] {
    match kind {
        BackboneKind::Vgg16 => &[0, 1],
        _ => &[],
    }
}

/// Backbone, head configuration and the ordered parameter list for `spec`.
pub fn model_layout(spec: &ModelSpec) -> Result<(Backbone, HeadConfig, Vec<ParamSpec>)> {
    spec.check()?;
    let backbone = Backbone::build(spec.backbone, spec)?;
    let head = HeadConfig::from_spec(spec)?;
    let mut l = Layout::new();
    backbone.layout(&mut l);
    backbone.intermediate_layout(&mut l);
    arm_layout(&head, backbone.pyramid_channels(), l2norm_levels(spec.backbone), &mut l);
    tcb_layout(&head, [backbone.intermediate_depth(); 4], &mut l);
    odm_layout(&head, &mut l);
    Ok((backbone, head, l.into_params()))
}

/// Seeded weights for `spec`: kernels from `N(0, weight_init_sigma)`.
pub fn init_weights(spec: &ModelSpec, seed: u64) -> Result<WeightBundle> {
    let (_, _, layout) = model_layout(spec)?;
    WeightBundle::init(&layout, spec.weight_init_sigma, seed)
}

/// Flat per-anchor head outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<S> {
    pub objectness: Vec<S>,
    pub arm_deltas: Vec<S>,
    pub class_scores: Vec<S>,
    pub odm_deltas: Vec<S>,
    pub num_classes: usize,
}

impl<S: Scalar> HeadOutput<S> {
    pub fn view(&self) -> HeadView<'_, S> {
        HeadView {
            objectness: &self.objectness,
            arm_deltas: &self.arm_deltas,
            class_scores: &self.class_scores,
            odm_deltas: &self.odm_deltas,
            num_classes: self.num_classes,
        }
    }

    /// Anchor counts implied by each of the four arrays.
    pub fn anchor_counts(&self) -> [usize; 4] {
        [
            self.objectness.len() / 2,
            self.arm_deltas.len() / 4,
            self.class_scores.len() / (self.num_classes + 1),
            self.odm_deltas.len() / 4,
        ]
    }
}

/// An assembled detector with immutable weights.
#[derive(Debug, Clone)]
pub struct Model<S> {
    spec: ModelSpec,
    backbone: Backbone,
    head: HeadConfig,
    anchors: AnchorGrid,
    layout: Vec<ParamSpec>,
    weights: Weights<S>,
    digest: u64,
}

impl<S: Scalar> Model<S> {
    /// Builds the model with weights from `init_weights(spec, spec.seed)`.
    pub fn assemble(spec: &ModelSpec) -> Result<Self> {
        let bundle = init_weights(spec, spec.seed)?;
        Self::with_bundle(spec, &bundle)
    }

    pub fn with_bundle(spec: &ModelSpec, bundle: &WeightBundle) -> Result<Self> {
        let (backbone, head, layout) = model_layout(spec)?;
        let anchors = generate_anchors(spec.input_size, &spec.anchor_strides, &spec.anchor_scales, &spec.anchor_ratios)?;
        let weights = Weights::from_bundle(bundle);
        weights.check_layout(&layout)?;
        Ok(Self {
            spec: spec.clone(),
            backbone,
            head,
            anchors,
            layout,
            weights,
            digest: bundle.digest(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn head_config(&self) -> &HeadConfig {
        &self.head
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    pub fn layout(&self) -> &[ParamSpec] {
        &self.layout
    }

    pub fn weight_digest(&self) -> u64 {
        self.digest
    }

    /// Every stored value, including batch-norm statistics and L2 scales.
    pub fn param_count(&self) -> u64 {
        self.layout.iter().map(|p| p.numel() as u64).sum()
    }

    /// Input shape `(n, 3, input_size, input_size)`; `n` may vary.
    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, 3, self.spec.input_size, self.spec.input_size]
    }

    /// Runs both head branches and returns per-image outputs.
    pub fn forward(&self, input: &Tensor<S>, spans: &mut SpanRecorder) -> Result<Vec<HeadOutput<S>>> {
        let want = self.input_shape(input.batch());
        if input.shape() != want {
            return Err(Error::invalid(
                "model",
                format!("input shape {:?}, expected {:?}", input.shape(), want),
            ));
        }
        let w = &self.weights;
        let pyramid = spans.time(Stage::Backbone, || -> Result<[Tensor<S>; 4]> {
            let mut p = self.backbone.forward(input, w)?;
            for &level in l2norm_levels(self.spec.backbone) {
                let scale = w.vector(&format!("l2norm{level}.scale"), p[level].channels())?;
                p[level] = l2_normalize_channels(&p[level], scale, L2NORM_EPSILON)?;
            }
            Ok(p)
        })?;
        let arm = spans.time(Stage::ArmHead, || arm_forward(&pyramid, w, &self.anchors))?;
        let fused = spans.time(Stage::Tcb, || -> Result<[Tensor<S>; 4]> {
            let mut fused: Vec<Tensor<S>> = Vec::with_capacity(4);
            for level in (0..4).rev() {
                let lateral = self.backbone.forward_intermediate(level, &pyramid[level], w)?;
                let top = fused.last();
                let f = tcb_fuse(&lateral, top, w, level)?;
                fused.push(f);
            }
            fused.reverse();
            fused
                .try_into()
                .map_err(|_| Error::Invariant("transfer blocks did not produce four levels".into()))
        })?;
        let odm = spans.time(Stage::OdmHead, || odm_forward(&fused, w, &self.anchors, self.head.num_classes))?;

        let n = input.batch();
        let mut out = Vec::with_capacity(n);
        let (mut a_s, mut a_d) = (arm.scores.into_iter(), arm.deltas.into_iter());
        let (mut o_s, mut o_d) = (odm.scores.into_iter(), odm.deltas.into_iter());
        for _ in 0..n {
            let h = HeadOutput {
                objectness: a_s.next().unwrap_or_default(),
                arm_deltas: a_d.next().unwrap_or_default(),
                class_scores: o_s.next().unwrap_or_default(),
                odm_deltas: o_d.next().unwrap_or_default(),
                num_classes: self.head.num_classes,
            };
            if h.anchor_counts() != [self.anchors.len(); 4] {
                return Err(Error::Invariant(format!(
                    "head output counts {:?} differ from anchor count {}",
                    h.anchor_counts(),
                    self.anchors.len()
                )));
            }
            out.push(h);
        }
        Ok(out)
    }

    /// Forward pass plus post-processing for every image in `input`.
    pub fn detect(
        &self,
        input: &Tensor<S>,
        cfg: &PipelineConfig,
        spans: &mut SpanRecorder,
    ) -> Result<Vec<PipelineOutput<S>>> {
        self.forward(input, spans)?
            .iter()
            .map(|h| pipeline(&h.view(), &self.anchors, cfg, spans))
            .collect()
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig::from_spec(&self.spec)
    }
}

/// Deterministic uniform `[0, 1)` images for benchmarking.
pub fn synthetic_inputs<S: Scalar>(shape: [usize; 4], count: usize, seed: u64) -> Vec<Tensor<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Tensor::from_fn(shape, |_, _, _, _| S::from_f64_lossy(rng.gen::<f64>())))
        .collect()
}

/// A model plus a fixed set of single-image inputs, for the profiler.
#[derive(Debug, Clone)]
pub struct ModelRunner<S> {
    pub model: Model<S>,
    pub inputs: Vec<Tensor<S>>,
}

impl<S: Scalar> ModelRunner<S> {
    pub fn new(model: Model<S>, num_inputs: usize, seed: u64) -> Self {
        let inputs = synthetic_inputs(model.input_shape(1), num_inputs.max(1), seed);
        Self { model, inputs }
    }
}

impl<S: Scalar> Profiled for ModelRunner<S> {
    fn id(&self) -> String {
        let spec = self.model.spec();
        match spec.experiment {
            Some(e) => format!("exp{e:02}:{}", spec.name),
            None => spec.name.clone(),
        }
    }

    fn backbone(&self) -> String {
        self.model.spec().backbone.display_name().to_string()
    }

    fn run_once(&self, index: usize, nms: &NmsParams, spans: &mut SpanRecorder) -> Result<RunOutcome> {
        let image = index % self.inputs.len();
        let mut cfg = self.model.pipeline_config();
        cfg.nms = *nms;
        let out = self
            .model
            .detect(&self.inputs[image], &cfg, spans)?
            .pop()
            .ok_or_else(|| Error::Invariant("detect returned no image".into()))?;
        Ok(RunOutcome {
            records: out
                .detections
                .iter()
                .map(|d| DetectionRecord::from_detection(image as u64, d))
                .collect(),
            stats: out.stats,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(backbone: BackboneKind, depth: usize) -> ModelSpec {
        ModelSpec {
            name: if depth == 128 { "rRefineDet320" } else { "RefineDet320" }.into(),
            backbone,
            head_depth: depth,
            width_multiplier: 0.0625,
            num_classes: 4,
            ..ModelSpec::default()
        }
    }

    #[test]
    fn forward_counts_match_anchors() {
        let m = Model::<f32>::assemble(&small(BackboneKind::Resnet18, 128)).unwrap();
        assert_eq!(m.anchors().len(), 6375);
        let x = synthetic_inputs(m.input_shape(1), 1, 0).pop().unwrap();
        let mut spans = SpanRecorder::new();
        let out = m.forward(&x, &mut spans).unwrap();
        assert_eq!(out[0].anchor_counts(), [6375; 4]);
        assert!(spans.get(Stage::Backbone) > std::time::Duration::ZERO);
        assert!(out[0].class_scores.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_wrong_input_and_depth() {
        let m = Model::<f64>::assemble(&small(BackboneKind::Mobilenetv1, 256)).unwrap();
        let x = Tensor::zeros([1, 3, 64, 64]);
        assert!(m.forward(&x, &mut SpanRecorder::disabled()).is_err());
        let mut bad = small(BackboneKind::Vgg16, 256);
        bad.head_depth = 192;
        assert!(Model::<f32>::assemble(&bad).is_err());
    }

    #[test]
    fn seeded_weights_reproduce() {
        let spec = small(BackboneKind::Vgg16, 128);
        let a = init_weights(&spec, 7).unwrap();
        assert_eq!(a.digest(), init_weights(&spec, 7).unwrap().digest());
        assert_ne!(a.digest(), init_weights(&spec, 8).unwrap().digest());
    }
}
