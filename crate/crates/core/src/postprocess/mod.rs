//! Box decoding, ARM filtering and non-maximum suppression: the post-processing
//! chain whose cost is governed by the NMS triple.

mod bbox;
mod codec;
mod nms;
mod pipeline;
pub(crate) mod records;

pub use bbox::{iou, BBox, CenterBox};
pub use codec::{decode, encode, refine, Variances, MAX_LOG_SCALE};
pub use nms::{nms_greedy, nms_greedy_with, CandidateCap, Detection, DetectionSet, NmsOutput, NmsParams, NmsStats};
pub use pipeline::{arm_filter, pipeline, softmax_rows, HeadView, PipelineConfig, PipelineOutput};
pub use records::{read_detection_records, write_detection_records, DetectionRecord};
