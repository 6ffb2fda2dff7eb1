//! Per-frame skeleton rendering to binary PPM with a part-colored
//! wireframe, a Viridis legend strip, and a 75-cell temporal attention
//! bar. Rendering is a pure function of (clip, record, config): frames
//! render independently and any parallel schedule produces byte-identical
//! files.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_spatial, colormap, normalize_clamp, smooth, VizConfig, VizError};
use crate::model::AttentionRecord;
use crate::pose::{part_of, SkeletonClip, BODY25_EDGES, CLIP_FRAMES, N_KEYPOINTS, N_PARTS};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionExportRow {
    pub frame: usize,
    pub spatial_raw: Vec<f64>,
    pub spatial_vis: Vec<f64>,
    pub temporal_row: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub frame_paths: Vec<PathBuf>,
    pub export_path: PathBuf,
}

struct Canvas {
    size: usize,
    pixels: Vec<[u8; 3]>,
}

impl Canvas {
    fn new(size: usize) -> Self {
        Canvas { size, pixels: vec![[0, 0, 0]; size * size] }
    }

    fn set(&mut self, x: isize, y: isize, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.size && (y as usize) < self.size {
            self.pixels[y as usize * self.size + x as usize] = color;
        }
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, color: [u8; 3]) {
        for y in y0..(y0 + h).min(self.size) {
            for x in x0..(x0 + w).min(self.size) {
                self.pixels[y * self.size + x] = color;
            }
        }
    }

    fn line(&mut self, x0: isize, y0: isize, x1: isize, y1: isize, color: [u8; 3]) {
        // Bresenham.
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn write_ppm(&self, path: &Path) -> Result<(), VizError> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "P6\n{} {}\n255\n", self.size, self.size)?;
        for p in &self.pixels {
            out.write_all(p)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-frame visualization scores derived from an attention record: raw
/// per-part aggregates, their smoothed and clip-normalized values, and
/// the clip-normalized temporal matrix.
struct VizScores {
    raw: Vec<[f64; N_PARTS]>,
    vis: Vec<[f64; N_PARTS]>,
    temporal_vis: Vec<Vec<f64>>,
}

fn compute_scores(record: &AttentionRecord, config: &VizConfig) -> VizScores {
    let frames = record.spatial_per_frame.len();
    let raw: Vec<[f64; N_PARTS]> = record
        .spatial_per_frame
        .iter()
        .map(|m| aggregate_spatial(m, config.row_only_aggregation))
        .collect();

    // Smooth each part's series over frames, then normalize against the
    // pooled distribution so colors are comparable across parts.
    let mut smoothed = vec![[0.0; N_PARTS]; frames];
    for p in 0..N_PARTS {
        let series: Vec<f64> = raw.iter().map(|r| r[p]).collect();
        for (t, v) in smooth(&series, config.gaussian_sigma, config.temporal_window)
            .into_iter()
            .enumerate()
        {
            smoothed[t][p] = v;
        }
    }
    let pooled: Vec<f64> = smoothed.iter().flat_map(|r| r.iter().copied()).collect();
    let normed = normalize_clamp(&pooled, config.clamp_percentiles);
    let vis: Vec<[f64; N_PARTS]> = normed
        .chunks(N_PARTS)
        .map(|c| {
            let mut row = [0.0; N_PARTS];
            row.copy_from_slice(c);
            row
        })
        .collect();

    let temporal_vis = normalize_temporal(
        (0..record.temporal.rows()).map(|t| record.temporal.row(t).to_vec()).collect(),
        config,
    );
    VizScores { raw, vis, temporal_vis }
}

/// The temporal matrix keeps minimal smoothing to preserve detail: only
/// the percentile clamp + min-max over the whole matrix.
fn normalize_temporal(rows: Vec<Vec<f64>>, config: &VizConfig) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let normed = normalize_clamp(&flat, config.clamp_percentiles);
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    normed.chunks(width).map(|c| c.to_vec()).collect()
}

fn render_frame(
    clip: &SkeletonClip,
    t: usize,
    vis: &[f64; N_PARTS],
    temporal_row: &[f64],
    config: &VizConfig,
) -> Canvas {
    let size = config.image_size;
    let strip = size / 16;
    let skel_w = size - strip;
    let skel_h = size - strip;
    let mut canvas = Canvas::new(size);

    let part_colors: Vec<[u8; 3]> = vis.iter().map(|&v| colormap(v)).collect();
    let px = |x: f64| (x * (skel_w - 1) as f64).round() as isize;
    let py = |y: f64| (y * (skel_h - 1) as f64).round() as isize;

    // Wireframe, each segment colored by the part owning its child joint.
    for &(a, b) in &BODY25_EDGES {
        let (ax, ay) = clip.coord(a, t);
        let (bx, by) = clip.coord(b, t);
        canvas.line(px(ax), py(ay), px(bx), py(by), part_colors[part_of(b)]);
    }
    // Keypoint dots.
    for kp in 0..N_KEYPOINTS {
        let (x, y) = clip.coord(kp, t);
        let color = part_colors[part_of(kp)];
        for dy in -1..=1 {
            for dx in -1..=1 {
                canvas.set(px(x) + dx, py(y) + dy, color);
            }
        }
    }

    // Legend: vertical Viridis gradient, high scores at the top.
    for y in 0..skel_h {
        let v = 1.0 - y as f64 / (skel_h - 1) as f64;
        let color = colormap(v);
        for x in skel_w..size {
            canvas.set(x as isize, y as isize, color);
        }
    }

    // Temporal bar along the bottom: cell j encodes attention from the
    // current frame to frame j; the current frame's cell is marked white.
    let cells = temporal_row.len();
    for (j, &v) in temporal_row.iter().enumerate() {
        let x0 = j * size / cells;
        let x1 = (j + 1) * size / cells;
        let color = if j == t { [255, 255, 255] } else { colormap(v) };
        canvas.fill_rect(x0, skel_h, x1 - x0, size - skel_h, color);
    }
    canvas
}

fn write_frames(
    clip: &SkeletonClip,
    scores_vis: &[[f64; N_PARTS]],
    temporal_vis: &[Vec<f64>],
    config: &VizConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, VizError> {
    let frames = scores_vis.len();
    let paths: Vec<PathBuf> =
        (0..frames).map(|t| out_dir.join(format!("frame_{t:04}.ppm"))).collect();
    let results: Vec<Result<(), VizError>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let canvas = render_frame(clip, t, &scores_vis[t], &temporal_vis[t], config);
            canvas.write_ppm(&paths[t])
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(paths)
}

/// Renders one image per frame plus the machine-readable NDJSON export
/// (raw and processed spatial scores and the raw temporal row per frame).
pub fn render_clip(
    clip: &SkeletonClip,
    record: &AttentionRecord,
    config: &VizConfig,
    out_dir: &Path,
) -> Result<RenderOutput, VizError> {
    config.validate()?;
    if record.spatial_per_frame.len() != clip.matrix.cols() {
        return Err(VizError::Invalid(format!(
            "record covers {} frames for a {}-frame clip",
            record.spatial_per_frame.len(),
            clip.matrix.cols()
        )));
    }
    fs::create_dir_all(out_dir)?;
    let scores = compute_scores(record, config);

    let export_path = out_dir.join("attention.ndjson");
    let mut export = BufWriter::new(File::create(&export_path)?);
    for t in 0..scores.raw.len() {
        let row = AttentionExportRow {
            frame: t,
            spatial_raw: scores.raw[t].to_vec(),
            spatial_vis: scores.vis[t].to_vec(),
            temporal_row: record.temporal.row(t).to_vec(),
        };
        writeln!(export, "{}", serde_json::to_string(&row).expect("row serializes"))?;
    }
    export.flush()?;

    let frame_paths = write_frames(clip, &scores.vis, &scores.temporal_vis, config, out_dir)?;
    Ok(RenderOutput { frame_paths, export_path })
}

/// Re-renders frames from a previously written export; output images are
/// byte-identical to the original render.
pub fn render_from_export(
    clip: &SkeletonClip,
    export_path: &Path,
    config: &VizConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, VizError> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let file = File::open(export_path)?;
    let mut rows: Vec<AttentionExportRow> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: AttentionExportRow = serde_json::from_str(&line)
            .map_err(|e| VizError::Invalid(format!("export line {}: {e}", i + 1)))?;
        rows.push(row);
    }
    if rows.len() != CLIP_FRAMES {
        return Err(VizError::Invalid(format!("export has {} rows, expected {CLIP_FRAMES}", rows.len())));
    }
    let vis: Vec<[f64; N_PARTS]> = rows
        .iter()
        .map(|r| {
            let mut a = [0.0; N_PARTS];
            a.copy_from_slice(&r.spatial_vis);
            a
        })
        .collect();
    let temporal_vis =
        normalize_temporal(rows.iter().map(|r| r.temporal_row.clone()).collect(), config);
    write_frames(clip, &vis, &temporal_vis, config, out_dir)
}
