//! Sequence transformations: confidence filtering, resolution
//! normalization, frame-rate downsampling, clip windowing, body-part
//! partitioning in travelling order, and horizontal flip augmentation.

use super::{
    KeypointSequence, PartitionedSkeleton, PoseError, SkeletonClip, CLIP_ROWS, N_KEYPOINTS,
    N_PARTS,
};
#[cfg(test)]
use super::{Keypoint, CLIP_FRAMES};
use crate::autodiff::Tensor;

/// Travelling order inside each part: proximal to distal along the chain.
/// Arms run shoulder→elbow→wrist, legs hip→knee→ankle→heel→big toe→small
/// toe, torso neck→face→mid-hip. Parts concatenate torso, right arm,
/// left arm, right leg, left leg.
pub const PART_ORDER: [&[usize]; N_PARTS] = [
    &[1, 0, 15, 17, 16, 18, 8],  // torso (incl. head keypoints)
    &[2, 3, 4],                  // right arm
    &[5, 6, 7],                  // left arm
    &[9, 10, 11, 24, 22, 23],    // right leg
    &[12, 13, 14, 21, 19, 20],   // left leg
];

pub const PART_NAMES: [&str; N_PARTS] = ["torso", "right_arm", "left_arm", "right_leg", "left_leg"];

/// Left/right keypoint swap under a horizontal flip; midline keypoints
/// (0 nose, 1 neck, 8 mid-hip) map to themselves.
pub const MIRROR_MAP: [usize; N_KEYPOINTS] = [
    0, 1, 5, 6, 7, 2, 3, 4, 8, 12, 13, 14, 9, 10, 11, 16, 15, 18, 17, 22, 23, 24, 19, 20, 21,
];

pub type WireframeEdge = (usize, usize);

/// BODY_25 wireframe segments (parent, child).
pub const BODY25_EDGES: [WireframeEdge; 24] = [
    (1, 0),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (8, 12),
    (12, 13),
    (13, 14),
    (0, 15),
    (15, 17),
    (0, 16),
    (16, 18),
    (14, 21),
    (14, 19),
    (19, 20),
    (11, 24),
    (11, 22),
    (22, 23),
];

/// Part index owning each keypoint (indexes into PART_ORDER/PART_NAMES).
pub fn part_of(keypoint: usize) -> usize {
    PART_ORDER
        .iter()
        .position(|part| part.contains(&keypoint))
        .expect("all 25 keypoints belong to a part")
}

/// Marks keypoints at or below the confidence threshold invalid and
/// replaces them with the last valid value for that keypoint index (or
/// the first valid one when no valid value precedes). A keypoint index
/// with no valid detection anywhere is an error.
pub fn filter_confidence(
    seq: &KeypointSequence,
    threshold: f64,
) -> Result<KeypointSequence, PoseError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PoseError::Invalid(format!("threshold {threshold} outside [0,1]")));
    }
    let mut never_valid = Vec::new();
    for kp in 0..N_KEYPOINTS {
        if !seq.frames.iter().any(|f| f[kp].confidence > threshold) {
            never_valid.push(kp);
        }
    }
    if !never_valid.is_empty() {
        return Err(PoseError::NeverValid { threshold, indices: never_valid });
    }

    let mut out = seq.clone();
    for kp in 0..N_KEYPOINTS {
        let first_valid = out
            .frames
            .iter()
            .find(|f| f[kp].confidence > threshold)
            .map(|f| (f[kp].x, f[kp].y))
            .expect("checked above");
        let mut last = first_valid;
        for frame in &mut out.frames {
            let k = &mut frame[kp];
            if k.confidence > threshold {
                k.valid = true;
                last = (k.x, k.y);
            } else {
                k.valid = false;
                k.x = last.0;
                k.y = last.1;
            }
        }
    }
    Ok(out)
}

/// Divides pixel coordinates by the frame resolution, mapping them into
/// [0, 1]. Coordinates out of bounds by more than one pixel are errors;
/// sub-pixel overshoot clamps.
pub fn normalize_resolution(seq: &KeypointSequence) -> Result<KeypointSequence, PoseError> {
    if seq.width == 0 || seq.height == 0 {
        return Err(PoseError::Invalid("width and height must be positive".into()));
    }
    let (w, h) = (seq.width as f64, seq.height as f64);
    let mut out = seq.clone();
    for (t, frame) in out.frames.iter_mut().enumerate() {
        for (i, k) in frame.iter_mut().enumerate() {
            if k.x < -1.0 || k.x > w + 1.0 || k.y < -1.0 || k.y > h + 1.0 {
                return Err(PoseError::OutOfBounds {
                    frame: t,
                    keypoint: i,
                    x: k.x,
                    y: k.y,
                    width: seq.width,
                    height: seq.height,
                });
            }
            k.x = (k.x / w).clamp(0.0, 1.0);
            k.y = (k.y / h).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Frame indices retained in one source block of `source_fps` frames when
/// downsampling to `target_fps`: floor(i·S/T) for i = 0..T-1.
pub fn retained_block_indices(source_fps: u32, target_fps: u32) -> Vec<usize> {
    let (s, t) = (source_fps as usize, target_fps as usize);
    (0..t).map(|i| i * s / t).collect()
}

/// Downsamples by retaining evenly spaced frames within each block of
/// `seq.fps` source frames. Upsampling is an error.
pub fn downsample(seq: &KeypointSequence, target_fps: u32) -> Result<KeypointSequence, PoseError> {
    if target_fps == 0 {
        return Err(PoseError::Invalid("target fps must be positive".into()));
    }
    if target_fps > seq.fps {
        return Err(PoseError::Upsample { target: target_fps, source_fps: seq.fps });
    }
    let keep = retained_block_indices(seq.fps, target_fps);
    let block = seq.fps as usize;
    let mut frames = Vec::new();
    let mut start = 0;
    while start < seq.frames.len() {
        for &i in &keep {
            if start + i < seq.frames.len() {
                frames.push(seq.frames[start + i].clone());
            }
        }
        start += block;
    }
    Ok(KeypointSequence { fps: target_fps, frames, ..seq.clone() })
}

/// Emitted when a sequence is too short to produce any clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipNotice {
    pub video_id: String,
    pub n_frames: usize,
    pub required: usize,
}

/// Snaps a [0, 1] coordinate onto the 2^-32 grid. On this grid `1 - x` is
/// exactly representable and exactly computed, which makes horizontal
/// flipping a bit-exact involution; the quantization error (≤ 1.2e-10) is
/// far below pose-estimation noise.
pub fn quantize01(x: f64) -> f64 {
    const SCALE: f64 = 4294967296.0; // 2^32
    (x.clamp(0.0, 1.0) * SCALE).round() / SCALE
}

/// Cuts the sequence into fixed-length windows of `length` frames taken
/// every `stride` frames, interleaving (x0, y0, x1, y1, ...) into the 50
/// clip rows. Sequences shorter than `length` yield no clips and a skip
/// notice.
pub fn window_clips(
    seq: &KeypointSequence,
    length: usize,
    stride: usize,
) -> (Vec<SkeletonClip>, Option<SkipNotice>) {
    assert!(length > 0 && stride > 0, "length and stride must be positive");
    let n = seq.frames.len();
    if n < length {
        return (
            Vec::new(),
            Some(SkipNotice { video_id: seq.video_id.clone(), n_frames: n, required: length }),
        );
    }
    let mut clips = Vec::new();
    let mut start = 0;
    while start + length <= n {
        let mut matrix = Tensor::zeros(2 * N_KEYPOINTS, length);
        for t in 0..length {
            for (kp, k) in seq.frames[start + t].iter().enumerate() {
                debug_assert!(
                    (0.0..=1.0).contains(&k.x) && (0.0..=1.0).contains(&k.y),
                    "window_clips expects normalized coordinates"
                );
                matrix.set(2 * kp, t, quantize01(k.x));
                matrix.set(2 * kp + 1, t, quantize01(k.y));
            }
        }
        clips.push(SkeletonClip {
            matrix,
            label: seq.label,
            source: super::ClipSource {
                video_id: seq.video_id.clone(),
                start_frame: start,
                fps_used: seq.fps,
            },
        });
        start += stride;
    }
    (clips, None)
}

/// Regroups clip rows into the five part blocks, each in travelling order.
pub fn partition_parts(clip: &SkeletonClip) -> PartitionedSkeleton {
    let frames = clip.matrix.cols();
    let mut blocks = Vec::with_capacity(N_PARTS);
    let mut part_sizes = [0usize; N_PARTS];
    let mut row_perm = Vec::with_capacity(CLIP_ROWS);
    for (p, part) in PART_ORDER.iter().enumerate() {
        part_sizes[p] = part.len();
        let mut block = Tensor::zeros(2 * part.len(), frames);
        for (slot, &kp) in part.iter().enumerate() {
            for t in 0..frames {
                block.set(2 * slot, t, clip.matrix.get(2 * kp, t));
                block.set(2 * slot + 1, t, clip.matrix.get(2 * kp + 1, t));
            }
            row_perm.push(2 * kp);
            row_perm.push(2 * kp + 1);
        }
        blocks.push(block);
    }
    let blocks: [Tensor; N_PARTS] = blocks.try_into().expect("five parts");
    PartitionedSkeleton { blocks, part_sizes, row_perm }
}

/// Mirrors a clip horizontally: every x becomes 1 - x and left/right
/// keypoint rows swap. The label is unchanged; the operation is an exact
/// involution.
pub fn flip_horizontal(clip: &SkeletonClip) -> SkeletonClip {
    let frames = clip.matrix.cols();
    let mut matrix = Tensor::zeros(CLIP_ROWS, frames);
    for kp in 0..N_KEYPOINTS {
        let dst = MIRROR_MAP[kp];
        for t in 0..frames {
            matrix.set(2 * dst, t, 1.0 - clip.matrix.get(2 * kp, t));
            matrix.set(2 * dst + 1, t, clip.matrix.get(2 * kp + 1, t));
        }
    }
    SkeletonClip { matrix, label: clip.label, source: clip.source.clone() }
}

#[cfg(test)]
pub(crate) fn constant_sequence(n_frames: usize, fps: u32) -> KeypointSequence {
    let frame: Vec<Keypoint> = (0..N_KEYPOINTS)
        .map(|i| Keypoint {
            x: 0.01 * i as f64 + 0.1,
            y: 0.02 * i as f64 + 0.05,
            confidence: 0.9,
            valid: true,
        })
        .collect();
    KeypointSequence {
        video_id: "test".into(),
        label: super::Label::Chorea,
        fps,
        width: 1280,
        height: 720,
        frames: vec![frame; n_frames],
    }
}

#[cfg(test)]
pub(crate) fn constant_clip() -> SkeletonClip {
    let seq = constant_sequence(CLIP_FRAMES, 25);
    let (clips, _) = window_clips(&seq, CLIP_FRAMES, CLIP_FRAMES);
    clips.into_iter().next().unwrap()
}
