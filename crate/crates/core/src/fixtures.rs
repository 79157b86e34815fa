//! The fifty shipped experiment configurations.

use std::path::{Path, PathBuf};

use crate::config::{serialize, BackboneKind, ModelSpec};
use crate::error::Result;
use crate::postprocess::NmsParams;

/// Width multiplier used by the shipped fixtures so that every model runs on
/// a desk machine.
pub const DESK_WIDTH_MULTIPLIER: f64 = 0.0625;

/// Odd experiments use the tight triple, even ones the loose one.
pub const TIGHT_NMS: NmsParams = NmsParams::new(400, 200, 0.1);
pub const LOOSE_NMS: NmsParams = NmsParams::new(1000, 500, 0.01);

/// (name, backbone) per pair of rows; each pair is (tight, loose).
const PAIRS: [(&str, BackboneKind); 25] = {
    use BackboneKind::*;
    [
        ("rRefineDet320", Vgg16),
        ("RefineDet320", Vgg16),
        ("rRefineDet512", Vgg16),
        ("RefineDet512", Vgg16),
        ("rRefineDet320", Resnet18),
        ("RefineDet320", Resnet18),
        ("rRefineDet512", Resnet18),
        ("RefineDet512", Resnet18),
        ("rRefineDet320", Mobilenetv1),
        ("RefineDet320", Mobilenetv1),
        ("rRefineDet320", Mobilenetv2),
        ("RefineDet320", Mobilenetv2),
        ("rRefineDet320", InceptionSenet),
        ("RefineDet320", InceptionSenet),
        ("rRefineDet512", InceptionSenet),
        ("rRefineDet320", SeResnext50),
        ("rRefineDet320", Resnext26),
        ("RefineDet320", Resnext26),
        ("rRefineDet512", Resnext26),
        ("RefineDet512", Resnext26),
        ("rRefineDet320", Xception),
        ("RefineDet320", Xception),
        ("rRefineDet320", Resnext50),
        ("RefineDet320", Resnext50),
        ("rRefineDet512", Resnext50),
    ]
};

pub fn experiment_spec(exp: u32) -> Option<ModelSpec> {
    let (name, backbone) = *PAIRS.get((exp as usize).checked_sub(1)? / 2)?;
    let reduced = name.starts_with("rRefineDet");
    let input_size = if name.ends_with("512") { 512 } else { 320 };
    Some(ModelSpec {
        name: name.to_string(),
        experiment: Some(exp),
        backbone,
        input_size,
        head_depth: if reduced { 128 } else { 256 },
        nms: if exp % 2 == 1 { TIGHT_NMS } else { LOOSE_NMS },
        width_multiplier: DESK_WIDTH_MULTIPLIER,
        seed: exp as u64,
        ..ModelSpec::default()
    })
}

pub fn table_specs() -> Vec<ModelSpec> {
    (1..=50).filter_map(experiment_spec).collect()
}

pub fn fixture_file_name(exp: u32) -> String {
    format!("exp{exp:02}.cfg")
}

/// Writes `exp01.cfg` .. `exp50.cfg` into `dir` and returns their paths.
pub fn write_fixtures(dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    table_specs()
        .iter()
        .map(|spec| {
            let exp = spec.experiment.unwrap_or_default();
            let path = dir.join(fixture_file_name(exp));
            let text = format!("# Experiment {exp}\n{}", serialize(spec));
            std::fs::write(&path, text)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::validate;

    #[test]
    fn fifty_rows() {
        let specs = table_specs();
        assert_eq!(specs.len(), 50);
        assert!(experiment_spec(0).is_none() && experiment_spec(51).is_none());
        let e9 = &specs[8];
        assert_eq!((e9.name.as_str(), e9.backbone, e9.head_depth, e9.input_size), ("rRefineDet320", BackboneKind::Resnet18, 128, 320));
        assert_eq!(e9.nms, TIGHT_NMS);
        let e4 = &specs[3];
        assert_eq!((e4.backbone, e4.head_depth, e4.nms), (BackboneKind::Vgg16, 256, LOOSE_NMS));
        assert_eq!(specs[29].input_size, 512);
        assert_eq!(specs[30].backbone, BackboneKind::SeResnext50);
        assert_eq!(specs[49].backbone, BackboneKind::Resnext50);
        assert!(specs.iter().all(|s| validate(s).is_empty()));
    }
}
