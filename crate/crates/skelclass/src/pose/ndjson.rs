//! NDJSON interchange formats.
//!
//! Keypoint sequence file: line 1 is a header object
//! `{"video_id", "label", "fps", "width", "height"}`; every following line
//! is `{"t": frame index, "kp": [[x, y, c] × 25]}` with `t` strictly
//! increasing from 0. Clip archives hold one clip per line:
//! `{"source": {...}, "label": 0|1, "matrix": [3750 floats row-major]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ClipSource, Keypoint, KeypointSequence, Label, PoseError, SkeletonClip, CLIP_FRAMES,
    CLIP_ROWS, N_KEYPOINTS,
};
use crate::autodiff::Tensor;

#[derive(Serialize, Deserialize)]
struct Header {
    video_id: String,
    label: Label,
    fps: u32,
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: u64,
    kp: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct ClipRecord {
    source: ClipSource,
    label: Label,
    matrix: Vec<f64>,
}

pub fn parse_sequence(path: &Path) -> Result<KeypointSequence, PoseError> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header_line = lines.next().ok_or(PoseError::MissingHeader)??;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| PoseError::Malformed {
        line: 1,
        msg: format!("header: {e}"),
    })?;

    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| PoseError::Malformed {
            line: line_no,
            msg: e.to_string(),
        })?;
        if rec.kp.len() != N_KEYPOINTS {
            return Err(PoseError::WrongKeypointCount {
                frame: frames.len(),
                got: rec.kp.len(),
                expected: N_KEYPOINTS,
            });
        }
        if rec.t != frames.len() as u64 {
            return Err(PoseError::Malformed {
                line: line_no,
                msg: format!("expected t = {}, got {}", frames.len(), rec.t),
            });
        }
        let frame: Vec<Keypoint> = rec
            .kp
            .iter()
            .map(|&[x, y, c]| {
                if !(x.is_finite() && y.is_finite() && c.is_finite()) {
                    Err(PoseError::Malformed {
                        line: line_no,
                        msg: "non-finite keypoint entry".into(),
                    })
                } else {
                    Ok(Keypoint { x, y, confidence: c, valid: true })
                }
            })
            .collect::<Result<_, _>>()?;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(PoseError::Invalid("sequence has no frames".into()));
    }
    if header.fps == 0 {
        return Err(PoseError::Invalid("fps must be positive".into()));
    }
    Ok(KeypointSequence {
        video_id: header.video_id,
        label: header.label,
        fps: header.fps,
        width: header.width,
        height: header.height,
        frames,
    })
}

pub fn write_sequence(seq: &KeypointSequence, path: &Path) -> Result<(), PoseError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = Header {
        video_id: seq.video_id.clone(),
        label: seq.label,
        fps: seq.fps,
        width: seq.width,
        height: seq.height,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for (t, frame) in seq.frames.iter().enumerate() {
        let rec = FrameRecord {
            t: t as u64,
            kp: frame.iter().map(|k| [k.x, k.y, k.confidence]).collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec).expect("frame serializes"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_clips(clips: &[SkeletonClip], path: &Path) -> Result<(), PoseError> {
    let mut out = BufWriter::new(File::create(path)?);
    for clip in clips {
        let rec = ClipRecord {
            source: clip.source.clone(),
            label: clip.label,
            matrix: clip.matrix.data().to_vec(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec).expect("clip serializes"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_clips(path: &Path) -> Result<Vec<SkeletonClip>, PoseError> {
    let file = File::open(path)?;
    let mut clips = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord = serde_json::from_str(&line).map_err(|e| PoseError::Malformed {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.matrix.len() != CLIP_ROWS * CLIP_FRAMES {
            return Err(PoseError::Malformed {
                line: i + 1,
                msg: format!("matrix has {} entries, expected {}", rec.matrix.len(), CLIP_ROWS * CLIP_FRAMES),
            });
        }
        clips.push(SkeletonClip {
            matrix: Tensor::from_vec(CLIP_ROWS, CLIP_FRAMES, rec.matrix),
            label: rec.label,
            source: rec.source,
        });
    }
    Ok(clips)
}
