//! Experiment configuration: one detector variant plus its post-processing
//! triple, stored as a flat `key = value` text file.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::postprocess::{CandidateCap, NmsParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackboneKind {
    Vgg16,
    Resnet18,
    Resnext26,
    Resnext50,
    SeResnext50,
    InceptionSenet,
    Mobilenetv1,
    Mobilenetv2,
    Xception,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 9] = [
        BackboneKind::Vgg16,
        BackboneKind::Resnet18,
        BackboneKind::Resnext26,
        BackboneKind::Resnext50,
        BackboneKind::SeResnext50,
        BackboneKind::InceptionSenet,
        BackboneKind::Mobilenetv1,
        BackboneKind::Mobilenetv2,
        BackboneKind::Xception,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Vgg16 => "vgg16",
            BackboneKind::Resnet18 => "resnet18",
            BackboneKind::Resnext26 => "resnext26",
            BackboneKind::Resnext50 => "resnext50",
            BackboneKind::SeResnext50 => "se_resnext50",
            BackboneKind::InceptionSenet => "inception_senet",
            BackboneKind::Mobilenetv1 => "mobilenetv1",
            BackboneKind::Mobilenetv2 => "mobilenetv2",
            BackboneKind::Xception => "xception",
        }
    }

    /// Display name as used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            BackboneKind::Vgg16 => "VGG-16",
            BackboneKind::Resnet18 => "ResNet-18",
            BackboneKind::Resnext26 => "ResNeXt-26",
            BackboneKind::Resnext50 => "ResNeXt-50",
            BackboneKind::SeResnext50 => "SEResNeXt-50",
            BackboneKind::InceptionSenet => "Inception-SENet",
            BackboneKind::Mobilenetv1 => "MobileNetV1",
            BackboneKind::Mobilenetv2 => "MobileNetV2",
            BackboneKind::Xception => "Xception",
        }
    }

    pub fn legal_names() -> String {
        Self::ALL.map(|b| b.as_str()).join(", ")
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::UnknownBackbone(s.to_string(), Self::legal_names()))
    }
}

/// Machine-readable description of one detector experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    /// Row number in the reference experiment table, when derived from one.
    pub experiment: Option<u32>,
    pub backbone: BackboneKind,
    pub input_size: usize,
    /// Channel depth of the transfer blocks, intermediate layers and top block.
    pub head_depth: usize,
    pub nms: NmsParams,
    pub nms_iou: f64,
    pub candidate_cap: CandidateCap,
    pub arm_neg_thresh: f64,
    pub num_classes: usize,
    pub anchor_strides: Vec<usize>,
    pub anchor_scales: Vec<f64>,
    pub anchor_ratios: Vec<f64>,
    pub variances: (f64, f64),
    pub width_multiplier: f64,
    pub weight_init_sigma: f64,
    pub seed: u64,
}

pub const INPUT_SIZES: [usize; 2] = [320, 512];
pub const HEAD_DEPTHS: [usize; 2] = [128, 256];
pub const PYRAMID_STRIDES: [usize; 4] = [8, 16, 32, 64];

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            name: "RefineDet320".to_string(),
            experiment: None,
            backbone: BackboneKind::Vgg16,
            input_size: 320,
            head_depth: 256,
            nms: NmsParams::new(1000, 500, 0.01),
            nms_iou: 0.45,
            candidate_cap: CandidateCap::PerClass,
            arm_neg_thresh: 0.99,
            num_classes: 80,
            anchor_strides: PYRAMID_STRIDES.to_vec(),
            anchor_scales: PYRAMID_STRIDES.iter().map(|&s| 4.0 * s as f64).collect(),
            anchor_ratios: vec![0.5, 1.0, 2.0],
            variances: (0.1, 0.2),
            width_multiplier: 1.0,
            weight_init_sigma: 0.01,
            seed: 0,
        }
    }
}

fn value_err(field: &str, msg: impl Into<String>) -> Error {
    Error::ConfigValue {
        field: field.to_string(),
        msg: msg.into(),
    }
}

impl ModelSpec {
    /// Hard range checks; every spec that reaches model assembly passes these.
    pub fn check(&self) -> Result<()> {
        if self.name.trim().is_empty() || self.name.contains(['\n', '#']) {
            return Err(value_err("name", "must be a non-empty single-line string without `#`"));
        }
        if !INPUT_SIZES.contains(&self.input_size) {
            return Err(value_err(
                "input_size",
                format!("{} not in allowed set {{320, 512}}", self.input_size),
            ));
        }
        if !HEAD_DEPTHS.contains(&self.head_depth) {
            return Err(value_err(
                "head_depth",
                format!("{} not in allowed set {{128, 256}}", self.head_depth),
            ));
        }
        self.nms.check().map_err(|e| value_err("nms", e.to_string()))?;
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(value_err("nms_iou", "must lie in (0, 1]"));
        }
        if !(self.arm_neg_thresh > 0.0 && self.arm_neg_thresh < 1.0) {
            return Err(value_err("arm_neg_thresh", "must lie in (0, 1)"));
        }
        if self.num_classes == 0 {
            return Err(value_err("num_classes", "must be positive"));
        }
        if self.anchor_strides != PYRAMID_STRIDES {
            return Err(value_err(
                "anchor_strides",
                "must be `8 16 32 64` to match the four pyramid levels",
            ));
        }
        if self.anchor_scales.len() != PYRAMID_STRIDES.len()
            || self.anchor_scales.iter().any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(value_err("anchor_scales", "need four positive values, one per level"));
        }
        if self.anchor_ratios.is_empty() || self.anchor_ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(value_err("anchor_ratios", "need at least one positive ratio"));
        }
        let (vc, vs) = self.variances;
        if !(vc.is_finite() && vc > 0.0 && vs.is_finite() && vs > 0.0) {
            return Err(value_err("variances", "both variances must be positive"));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return Err(value_err("width_multiplier", "must lie in (0, 1]"));
        }
        if !(self.weight_init_sigma.is_finite() && self.weight_init_sigma > 0.0) {
            return Err(value_err("weight_init_sigma", "must be positive"));
        }
        Ok(())
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_ratios.len()
    }

    /// Channel count after applying the width multiplier: rounded to a multiple
    /// of 4, never below 4.
    pub fn width(&self, channels: usize) -> usize {
        scaled_width(channels, self.width_multiplier)
    }
}

pub fn scaled_width(channels: usize, multiplier: f64) -> usize {
    let scaled = (channels as f64 * multiplier / 4.0).round() as usize * 4;
    scaled.max(4)
}

/// How unknown keys are treated by [`parse_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Parses a config file, rejecting unknown keys.
pub fn parse(text: &str) -> Result<ModelSpec> {
    parse_with(text, ParseMode::Strict).map(|(spec, _)| spec)
}

/// Parses a config file. In lenient mode unknown keys become warnings.
pub fn parse_with(text: &str, mode: ParseMode) -> Result<(ModelSpec, Vec<String>)> {
    let mut spec = ModelSpec::default();
    let mut warnings = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    let mut saw_version = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: String| Error::ConfigSyntax { line: line_no, msg };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected `key = value`, found `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(syntax("empty key".into()));
        }
        if seen.contains(&key) {
            return Err(syntax(format!("duplicate key `{key}`")));
        }
        if !saw_version && key != "format_version" {
            return Err(syntax("first entry must be `format_version`".into()));
        }
        seen.push(key);

        match key {
            "format_version" => {
                let v: u32 = num(key, value)?;
                if v != FORMAT_VERSION {
                    return Err(value_err(key, format!("unsupported version {v} (expected {FORMAT_VERSION})")));
                }
                saw_version = true;
            }
            "name" => spec.name = value.to_string(),
            "experiment" => spec.experiment = Some(num(key, value)?),
            "backbone" => {
                spec.backbone = value.parse().map_err(|_| {
                    value_err(
                        key,
                        format!("`{value}` is not one of: {}", BackboneKind::legal_names()),
                    )
                })?
            }
            "input_size" => spec.input_size = num(key, value)?,
            "head_depth" => spec.head_depth = num(key, value)?,
            "nms" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(value_err(key, "expected `max_input max_output conf_thresh`"));
                }
                spec.nms = NmsParams::new(num(key, parts[0])?, num(key, parts[1])?, num(key, parts[2])?);
            }
            "nms_iou" => spec.nms_iou = num(key, value)?,
            "candidate_cap" => {
                spec.candidate_cap = match value {
                    "per_class" => CandidateCap::PerClass,
                    "per_image" => CandidateCap::PerImage,
                    other => {
                        return Err(value_err(key, format!("`{other}` is not one of: per_class, per_image")))
                    }
                }
            }
            "arm_neg_thresh" => spec.arm_neg_thresh = num(key, value)?,
            "num_classes" => spec.num_classes = num(key, value)?,
            "anchor_strides" => spec.anchor_strides = list(key, value)?,
            "anchor_scales" => spec.anchor_scales = list(key, value)?,
            "anchor_ratios" => spec.anchor_ratios = list(key, value)?,
            "variances" => {
                let v: Vec<f64> = list(key, value)?;
                if v.len() != 2 {
                    return Err(value_err(key, "expected `center size`"));
                }
                spec.variances = (v[0], v[1]);
            }
            "width_multiplier" => spec.width_multiplier = num(key, value)?,
            "weight_init_sigma" => spec.weight_init_sigma = num(key, value)?,
            "seed" => spec.seed = num(key, value)?,
            other => match mode {
                ParseMode::Strict => return Err(syntax(format!("unknown key `{other}`"))),
                ParseMode::Lenient => warnings.push(format!("line {line_no}: ignoring unknown key `{other}`")),
            },
        }
    }
    if !saw_version {
        return Err(Error::ConfigSyntax {
            line: 0,
            msg: "missing `format_version`".into(),
        });
    }
    spec.check()?;
    Ok((spec, warnings))
}

fn num<T: FromStr>(field: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| value_err(field, format!("cannot parse `{value}`")))
}

fn list<T: FromStr>(field: &str, value: &str) -> Result<Vec<T>> {
    value.split_whitespace().map(|v| num(field, v)).collect()
}

fn join<T: fmt::Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Canonical text form. `parse(&serialize(s)) == s` for every valid spec.
pub fn serialize(spec: &ModelSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(out, "name = {}", spec.name);
    if let Some(e) = spec.experiment {
        let _ = writeln!(out, "experiment = {e}");
    }
    let _ = writeln!(out, "backbone = {}", spec.backbone);
    let _ = writeln!(out, "input_size = {}", spec.input_size);
    let _ = writeln!(out, "head_depth = {}", spec.head_depth);
    let _ = writeln!(
        out,
        "nms = {} {} {}",
        spec.nms.max_input, spec.nms.max_output, spec.nms.conf_thresh
    );
    let _ = writeln!(out, "nms_iou = {}", spec.nms_iou);
    let cap = match spec.candidate_cap {
        CandidateCap::PerClass => "per_class",
        CandidateCap::PerImage => "per_image",
    };
    let _ = writeln!(out, "candidate_cap = {cap}");
    let _ = writeln!(out, "arm_neg_thresh = {}", spec.arm_neg_thresh);
    let _ = writeln!(out, "num_classes = {}", spec.num_classes);
    let _ = writeln!(out, "anchor_strides = {}", join(&spec.anchor_strides));
    let _ = writeln!(out, "anchor_scales = {}", join(&spec.anchor_scales));
    let _ = writeln!(out, "anchor_ratios = {}", join(&spec.anchor_ratios));
    let _ = writeln!(out, "variances = {} {}", spec.variances.0, spec.variances.1);
    let _ = writeln!(out, "width_multiplier = {}", spec.width_multiplier);
    let _ = writeln!(out, "weight_init_sigma = {}", spec.weight_init_sigma);
    let _ = writeln!(out, "seed = {}", spec.seed);
    out
}

/// Naming-convention checks. These never block a run.
pub fn validate(spec: &ModelSpec) -> Vec<String> {
    let mut warnings = Vec::new();
    let reduced = spec.name.starts_with("rRefineDet");
    match (spec.head_depth, reduced) {
        (128, false) => warnings.push(format!(
            "head_depth 128 but name `{}` lacks the `rRefineDet` prefix",
            spec.name
        )),
        (256, true) => warnings.push(format!(
            "name `{}` implies a reduced head but head_depth is 256",
            spec.name
        )),
        _ => {}
    }
    let digits: String = spec
        .name
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    if let Ok(size) = digits.parse::<usize>() {
        if size != spec.input_size {
            warnings.push(format!(
                "name `{}` suggests input {size} but input_size is {}",
                spec.name, spec.input_size
            ));
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXP9: &str = "\
# Exp. 9
format_version = 1
name = rRefineDet320
backbone = resnet18
input_size = 320
head_depth = 128
nms = 400 200 0.1
";

    #[test]
    fn parses_minimal_row_with_defaults() {
        let spec = parse(EXP9).unwrap();
        assert_eq!(spec.head_depth, 128);
        assert_eq!(spec.input_size, 320);
        assert_eq!(spec.backbone, BackboneKind::Resnet18);
        assert_eq!(spec.nms, NmsParams::new(400, 200, 0.1));
        assert_eq!(spec.weight_init_sigma, 0.01);
        assert!(validate(&spec).is_empty());
    }

    #[test]
    fn rejects_unknown_backbone_listing_legal_values() {
        let text = EXP9.replace("resnet18", "resnet34");
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("backbone"), "{err}");
        for b in BackboneKind::ALL {
            assert!(err.contains(b.as_str()), "{err}");
        }
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let text = format!("{EXP9}this line is broken\n");
        match parse(&text).unwrap_err() {
            Error::ConfigSyntax { line, .. } => assert_eq!(line, 8),
            e => panic!("unexpected {e}"),
        }
        let text = format!("{EXP9}input_size = 321\n");
        assert!(matches!(parse(&text).unwrap_err(), Error::ConfigSyntax { line: 8, .. }));
    }

    #[test]
    fn out_of_range_names_allowed_set() {
        let err = parse(&EXP9.replace("input_size = 320", "input_size = 300")).unwrap_err();
        assert!(err.to_string().contains("{320, 512}"), "{err}");
        let err = parse(&EXP9.replace("head_depth = 128", "head_depth = 192")).unwrap_err();
        assert!(err.to_string().contains("{128, 256}"), "{err}");
    }

    #[test]
    fn strict_and_lenient_unknown_keys() {
        let text = format!("{EXP9}colour = blue\n");
        assert!(parse(&text).is_err());
        let (spec, warnings) = parse_with(&text, ParseMode::Lenient).unwrap();
        assert_eq!(spec.head_depth, 128);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn version_must_lead() {
        let text = "name = x\nformat_version = 1\n";
        assert!(parse(text).is_err());
        assert!(parse("").is_err());
        assert!(parse("format_version = 2\n").is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let mut spec = parse(EXP9).unwrap();
        spec.anchor_ratios = vec![0.333, 1.0, 3.0];
        spec.width_multiplier = 0.0625;
        spec.candidate_cap = CandidateCap::PerImage;
        let text = serialize(&spec);
        assert_eq!(parse(&text).unwrap(), spec);
        assert_eq!(serialize(&parse(&text).unwrap()), text);
    }

    #[test]
    fn convention_warnings() {
        assert!(validate(&ModelSpec::default()).is_empty());
        let spec = ModelSpec {
            name: "rRefineDet320".into(),
            ..ModelSpec::default()
        };
        assert_eq!(validate(&spec).len(), 1);
        let spec = ModelSpec {
            name: "RefineDet512".into(),
            ..ModelSpec::default()
        };
        assert_eq!(validate(&spec).len(), 1);
    }

    #[test]
    fn width_scaling() {
        assert_eq!(scaled_width(96, 1.0), 96);
        assert_eq!(scaled_width(256, 0.0625), 16);
        assert_eq!(scaled_width(32, 0.0625), 4);
        assert_eq!(scaled_width(480, 0.0625), 32);
    }
}
