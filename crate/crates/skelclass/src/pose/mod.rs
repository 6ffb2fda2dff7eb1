//! Keypoint sequences and their transformation into model-ready clips:
//! parsing, confidence filtering, normalization, frame-rate downsampling,
//! windowing, body-part partitioning, flip augmentation, and dataset
//! splitting.

mod ndjson;
mod preprocess;
mod split;
#[cfg(test)]
mod tests;

pub use ndjson::{parse_sequence, read_clips, write_clips, write_sequence};
pub use preprocess::{
    downsample, filter_confidence, flip_horizontal, normalize_resolution, part_of,
    partition_parts, quantize01, retained_block_indices, window_clips, SkipNotice,
    WireframeEdge, BODY25_EDGES, MIRROR_MAP, PART_NAMES, PART_ORDER,
};
pub use split::{bootstrap_oversample, stratified_split};
pub(crate) use split::largest_remainder;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;

pub const N_KEYPOINTS: usize = 25;
pub const CLIP_ROWS: usize = 2 * N_KEYPOINTS;
pub const CLIP_FRAMES: usize = 75;
pub const N_PARTS: usize = 5;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("frame {frame} has {got} keypoints, expected {expected}")]
    WrongKeypointCount { frame: usize, got: usize, expected: usize },
    #[error("missing metadata header line")]
    MissingHeader,
    #[error("keypoints never valid at threshold {threshold}: {indices:?}")]
    NeverValid { threshold: f64, indices: Vec<usize> },
    #[error("frame {frame} keypoint {keypoint} at ({x}, {y}) outside {width}x{height} by more than 1 pixel")]
    OutOfBounds { frame: usize, keypoint: usize, x: f64, y: f64, width: u32, height: u32 },
    #[error("cannot upsample: target {target} fps > source {source_fps} fps")]
    Upsample { target: u32, source_fps: u32 },
    #[error("class {class:?} absent from input")]
    MissingClass { class: Label },
    #[error("{0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Binary movement class. Dystonia is the positive class (label 1),
/// chorea the negative class (label 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Chorea,
    Dystonia,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Chorea => 0,
            Label::Dystonia => 1,
        }
    }

    pub fn from_index(i: u8) -> Option<Label> {
        match i {
            0 => Some(Label::Chorea),
            1 => Some(Label::Dystonia),
            _ => None,
        }
    }

    pub const BOTH: [Label; 2] = [Label::Chorea, Label::Dystonia];
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.index() as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_index(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    /// Set by `filter_confidence`; parse leaves every keypoint provisional.
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSequence {
    pub video_id: String,
    pub label: Label,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    /// One entry per frame, each exactly 25 keypoints in BODY_25 order.
    pub frames: Vec<Vec<Keypoint>>,
}

/// One model input: 50 interleaved coordinate rows (x0, y0, x1, y1, ...)
/// by 75 frame columns, all entries in [0, 1] on the 2^-32 grid (see
/// [`quantize01`]) so that horizontal flipping is an exact involution.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonClip {
    pub matrix: Tensor,
    pub label: Label,
    pub source: ClipSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSource {
    pub video_id: String,
    pub start_frame: usize,
    pub fps_used: u32,
}

impl SkeletonClip {
    /// Coordinate of keypoint `kp` at frame `t`.
    pub fn coord(&self, kp: usize, t: usize) -> (f64, f64) {
        (self.matrix.get(2 * kp, t), self.matrix.get(2 * kp + 1, t))
    }
}

/// The five-part travelling-order view of a clip. Block order is
/// torso, right arm, left arm, right leg, left leg; each block holds
/// the 2·k_p interleaved coordinate rows of its keypoints over 75 frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedSkeleton {
    pub blocks: [Tensor; N_PARTS],
    pub part_sizes: [usize; N_PARTS],
    /// Row permutation applied to the clip: concatenated block row i came
    /// from clip row `row_perm[i]`.
    pub row_perm: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<SkeletonClip>,
    pub validation: Vec<SkeletonClip>,
    pub test: Vec<SkeletonClip>,
    pub seed: u64,
}
