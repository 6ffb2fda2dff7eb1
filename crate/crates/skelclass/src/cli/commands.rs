//! Command implementations. Every command resolves its configuration
//! (file + overrides), does the work through the library modules, writes
//! its outputs plus a manifest, and reports one summary line per major
//! artifact on stdout.

use std::path::{Path, PathBuf};

use crate::eval::{confusion, cross_validate, metrics, ConfusionMatrix, Metrics};
use crate::model::{load_checkpoint, model_forward, save_checkpoint};
use crate::pose::{
    bootstrap_oversample, downsample, filter_confidence, flip_horizontal, normalize_resolution,
    parse_sequence, read_clips, stratified_split, window_clips, Label, SkeletonClip,
};
use crate::synth::{generate_dataset, MotionClass, MotionSpec};
use crate::train::{evaluate_clips, train};
use crate::viz::render_clip;
use crate::Mode;

use super::config::RunConfig;
use super::manifest::ManifestBuilder;
use super::CliError;

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path, &json)
}

/// NDJSON files under a directory (sorted for determinism), or the path
/// itself when it is a file.
fn collect_inputs(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        return Err(CliError::Data(format!("input {} does not exist", input.display())));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| CliError::Data(format!("cannot list {}: {e}", input.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "ndjson"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no .ndjson files under {}", input.display())));
    }
    Ok(files)
}

/// Parse → confidence filter → resolution normalization → frame-rate
/// downsampling → windowing, for every input file.
fn preprocess_files(
    files: &[PathBuf],
    config: &RunConfig,
    fps: u32,
) -> Result<(Vec<SkeletonClip>, Vec<String>), CliError> {
    let mut clips = Vec::new();
    let mut skipped = Vec::new();
    for path in files {
        let seq = parse_sequence(path)?;
        let seq = filter_confidence(&seq, config.confidence_threshold)?;
        let seq = normalize_resolution(&seq)?;
        let seq = downsample(&seq, fps)?;
        let (mut new_clips, notice) =
            window_clips(&seq, config.window_length, config.window_stride);
        if let Some(n) = notice {
            skipped.push(n.video_id);
        }
        clips.append(&mut new_clips);
    }
    Ok((clips, skipped))
}

/// Split, flip-augment the training portion, and oversample the minority
/// class in train and validation.
fn assemble_sets(
    clips: Vec<SkeletonClip>,
    config: &RunConfig,
) -> Result<(Vec<SkeletonClip>, Vec<SkeletonClip>, Vec<SkeletonClip>), CliError> {
    let split = stratified_split(clips, config.split_ratios(), config.seed, config.group_by_video)?;
    let mut train_set = split.train;
    if config.augment_flip {
        let flipped: Vec<SkeletonClip> = train_set.iter().map(flip_horizontal).collect();
        train_set.extend(flipped);
    }
    let train_set = bootstrap_oversample(train_set, crate::seed::mix(config.seed, 101))?;
    let val_set = if split.validation.is_empty() {
        return Err(CliError::Data(
            "validation split is empty; adjust split ratios or provide more clips".into(),
        ));
    } else if Label::BOTH.iter().all(|&l| split.validation.iter().any(|c| c.label == l)) {
        bootstrap_oversample(split.validation, crate::seed::mix(config.seed, 102))?
    } else {
        split.validation
    };
    Ok((train_set, val_set, split.test))
}

fn metrics_text(cm: &ConfusionMatrix, m: &Metrics) -> String {
    let mut out = String::new();
    out.push_str("confusion matrix (positive = dystonia)\n");
    out.push_str(&format!("  tp={} fn={}\n", cm.true_pos, cm.false_neg));
    out.push_str(&format!("  fp={} tn={}\n", cm.false_pos, cm.true_neg));
    for name in crate::eval::METRIC_NAMES {
        out.push_str(&format!("{name:<14}{:.4}\n", m.by_name(name)));
    }
    out
}

pub fn cmd_synth(
    config: &RunConfig,
    out: &Path,
    n_per_class: usize,
    seed: u64,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let template = MotionSpec {
        width: config.synth_width,
        height: config.synth_height,
        ..MotionSpec::new(MotionClass::ChoreaLike, config.synth_frames, config.synth_fps, 0)
    };
    let paths = generate_dataset(out, n_per_class, &template, seed)?;
    println!("synth: wrote {} sequences to {}", paths.len(), out.display());
    let mut manifest = ManifestBuilder::new("synth", config)
        .arg("out", out.display().to_string())
        .arg("n_per_class", n_per_class.to_string())
        .arg("seed", seed.to_string());
    for p in &paths {
        manifest = manifest.output(p);
    }
    manifest.write(out)?;
    Ok(())
}

pub fn cmd_preprocess(
    config: &RunConfig,
    input: &Path,
    out: &Path,
    fps: u32,
) -> Result<(), CliError> {
    let files = collect_inputs(input)?;
    let (clips, skipped) = preprocess_files(&files, config, fps)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    crate::pose::write_clips(&clips, out)?;
    println!(
        "preprocess: {} clips at {fps} fps from {} videos ({} skipped) -> {}",
        clips.len(),
        files.len(),
        skipped.len(),
        out.display()
    );
    for video in &skipped {
        println!("preprocess: skipped {video}: too few frames for a full window");
    }
    let dir = out.parent().unwrap_or(Path::new(".")).to_path_buf();
    ManifestBuilder::new("preprocess", config)
        .arg("input", input.display().to_string())
        .arg("out", out.display().to_string())
        .arg("fps", fps.to_string())
        .inputs(&files)?
        .output(out)
        .skipped(skipped)
        .write(&dir)?;
    Ok(())
}

pub fn cmd_train(config: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let clips = read_clips(input)?;
    let (train_set, val_set, test_set) = assemble_sets(clips, config)?;
    let mcfg = config.model_config();
    let tcfg = config.train_config();
    let (params, history) = train(&mcfg, &tcfg, &train_set, &val_set)?;

    let ckpt = out.join("checkpoint.json");
    save_checkpoint(&params, &mcfg, &ckpt).map_err(|e| CliError::Data(e.to_string()))?;
    let hist = out.join("history.csv");
    write_text(&hist, &history.to_csv())?;
    println!(
        "train: {} epochs ({:?}), best val loss {:.6} -> {}",
        history.epochs.len(),
        history.stop_reason,
        history.best_val_loss().unwrap_or(f64::NAN),
        ckpt.display()
    );

    let mut manifest = ManifestBuilder::new("train", config)
        .arg("input", input.display().to_string())
        .arg("out", out.display().to_string())
        .input(input)?
        .output(&ckpt)
        .output(&hist);

    if !test_set.is_empty()
        && Label::BOTH.iter().all(|&l| test_set.iter().any(|c| c.label == l))
    {
        let outcome = evaluate_clips(&params, &mcfg, &tcfg, &test_set)?;
        let labels: Vec<Label> = test_set.iter().map(|c| c.label).collect();
        let cm = confusion(&outcome.predictions, &labels)?;
        let m = metrics(&cm)?;
        let mpath = out.join("test_metrics.json");
        write_json(&mpath, &(cm, m))?;
        let tpath = out.join("test_metrics.txt");
        write_text(&tpath, &metrics_text(&cm, &m))?;
        println!("train: test accuracy {:.4}, f1 {:.4}", m.accuracy, m.f1);
        manifest = manifest.output(&mpath).output(&tpath);
    }
    manifest.write(out)?;
    Ok(())
}

pub fn cmd_cv(config: &RunConfig, input: &Path, out: &Path, k: usize) -> Result<(), CliError> {
    ensure_dir(out)?;
    let clips = read_clips(input)?;
    let report = cross_validate(&clips, &config.model_config(), &config.train_config(), k, config.seed)?;
    let jpath = out.join("cv_report.json");
    write_json(&jpath, &report)?;
    let tpath = out.join("cv_report.txt");
    write_text(&tpath, &report.table())?;
    print!("{}", report.table());
    ManifestBuilder::new("cv", config)
        .arg("input", input.display().to_string())
        .arg("out", out.display().to_string())
        .arg("k", k.to_string())
        .input(input)?
        .output(&jpath)
        .output(&tpath)
        .write(out)?;
    Ok(())
}

pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let (params, mcfg) = load_checkpoint(checkpoint).map_err(|e| CliError::Data(e.to_string()))?;
    let clips = read_clips(input)?;
    let tcfg = config.train_config();
    let outcome = evaluate_clips(&params, &mcfg, &tcfg, &clips)?;
    let labels: Vec<Label> = clips.iter().map(|c| c.label).collect();
    let cm = confusion(&outcome.predictions, &labels)?;
    let m = metrics(&cm)?;

    let mut predictions = String::new();
    for (i, clip) in clips.iter().enumerate() {
        let row = serde_json::json!({
            "video_id": clip.source.video_id,
            "start_frame": clip.source.start_frame,
            "label": clip.label.index(),
            "predicted": outcome.predictions[i].index(),
            "probabilities": outcome.probabilities[i],
        });
        predictions.push_str(&row.to_string());
        predictions.push('\n');
    }
    let ppath = out.join("predictions.ndjson");
    write_text(&ppath, &predictions)?;
    let jpath = out.join("eval_metrics.json");
    write_json(&jpath, &(cm, m))?;
    let tpath = out.join("eval_metrics.txt");
    write_text(&tpath, &metrics_text(&cm, &m))?;
    print!("{}", metrics_text(&cm, &m));
    ManifestBuilder::new("eval", config)
        .arg("checkpoint", checkpoint.display().to_string())
        .arg("input", input.display().to_string())
        .arg("out", out.display().to_string())
        .input(checkpoint)?
        .input(input)?
        .output(&ppath)
        .output(&jpath)
        .output(&tpath)
        .write(out)?;
    Ok(())
}

pub fn cmd_grid(config: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let clips = read_clips(input)?;
    let n_parts = if config.grid_n_part.is_empty() { vec![config.n_part] } else { config.grid_n_part.clone() };
    let n_rnns = if config.grid_n_rnn.is_empty() { vec![config.n_rnn] } else { config.grid_n_rnn.clone() };

    let mut csv = String::from("index,alpha,gamma,learning_rate,weight_decay,n_part,n_rnn,val_loss,val_accuracy\n");
    let mut best: Option<(usize, f64, RunConfig)> = None;
    let mut index = 0usize;
    for &alpha in &config.grid_alpha {
        for &gamma in &config.grid_gamma {
            for &lr in &config.grid_learning_rate {
                for &wd in &config.grid_weight_decay {
                    for &n_part in &n_parts {
                        for &n_rnn in &n_rnns {
                            let mut cell = config.clone();
                            cell.alpha = alpha;
                            cell.gamma = gamma;
                            cell.learning_rate = lr;
                            cell.weight_decay = wd;
                            cell.n_part = n_part;
                            cell.n_rnn = n_rnn;
                            cell.validate()?;

                            let (train_set, val_set, _) = assemble_sets(clips.clone(), &cell)?;
                            let mcfg = cell.model_config();
                            let tcfg = cell.train_config();
                            let (params, history) = train(&mcfg, &tcfg, &train_set, &val_set)?;
                            let outcome = evaluate_clips(&params, &mcfg, &tcfg, &val_set)?;
                            csv.push_str(&format!(
                                "{index},{alpha},{gamma},{lr},{wd},{n_part},{n_rnn},{},{}\n",
                                history.best_val_loss().unwrap_or(f64::NAN),
                                outcome.accuracy
                            ));
                            // Ties break to the lowest cell index.
                            if best.as_ref().is_none_or(|(_, acc, _)| outcome.accuracy > *acc) {
                                best = Some((index, outcome.accuracy, cell));
                            }
                            index += 1;
                        }
                    }
                }
            }
        }
    }
    let cpath = out.join("grid.csv");
    write_text(&cpath, &csv)?;
    let (best_index, best_acc, best_cfg) = best.expect("grid has at least one cell");
    let bpath = out.join("best.json");
    write_json(&bpath, &serde_json::json!({
        "index": best_index,
        "val_accuracy": best_acc,
        "config": best_cfg,
    }))?;
    println!("grid: {} cells, best index {} with validation accuracy {:.4}", index, best_index, best_acc);
    ManifestBuilder::new("grid", config)
        .arg("input", input.display().to_string())
        .arg("out", out.display().to_string())
        .input(input)?
        .output(&cpath)
        .output(&bpath)
        .write(out)?;
    Ok(())
}

pub fn cmd_viz(
    config: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    clip_index: Option<usize>,
) -> Result<(), CliError> {
    ensure_dir(out)?;
    let (params, mcfg) = load_checkpoint(checkpoint).map_err(|e| CliError::Data(e.to_string()))?;
    let clips = read_clips(input)?;
    let vcfg = config.viz_config();
    let indices: Vec<usize> = match clip_index {
        Some(i) if i >= clips.len() => {
            return Err(CliError::Data(format!("clip {i} out of range ({} clips)", clips.len())))
        }
        Some(i) => vec![i],
        None => (0..clips.len()).collect(),
    };
    let mut manifest = ManifestBuilder::new("viz", config)
        .arg("checkpoint", checkpoint.display().to_string())
        .arg("input", input.display().to_string())
        .arg("out", out.display().to_string())
        .input(checkpoint)?
        .input(input)?;
    for i in indices {
        let record = model_forward(&params, &mcfg, &clips[i], Mode::Eval, 0)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let dir = out.join(format!("clip_{i:04}"));
        let rendered = render_clip(&clips[i], &record, &vcfg, &dir)?;
        println!(
            "viz: clip {i} ({}) predicted {:?} p=[{:.3}, {:.3}] -> {} frames",
            clips[i].source.video_id,
            record.predicted,
            record.probabilities[0],
            record.probabilities[1],
            rendered.frame_paths.len()
        );
        manifest = manifest.output(&rendered.export_path);
    }
    manifest.write(out)?;
    Ok(())
}

pub fn cmd_sweep(config: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    ensure_dir(out)?;
    let files = collect_inputs(input)?;
    let mut csv = String::from("fps,clips,videos_skipped,accuracy,f1,sensitivity,specificity\n");
    for &fps in &config.sweep_fps {
        let (clips, skipped) = preprocess_files(&files, config, fps)?;
        let enough = Label::BOTH
            .iter()
            .all(|&l| clips.iter().filter(|c| c.label == l).count() >= 3);
        if !enough {
            println!("sweep: fps {fps}: insufficient clips ({}), skipping", clips.len());
            csv.push_str(&format!("{fps},{},{},,,,\n", clips.len(), skipped.len()));
            continue;
        }
        let n_clips = clips.len();
        let (train_set, val_set, test_set) = assemble_sets(clips, config)?;
        let mcfg = config.model_config();
        let tcfg = config.train_config();
        let (params, _history) = train(&mcfg, &tcfg, &train_set, &val_set)?;
        let eval_on = if test_set.is_empty() { &val_set } else { &test_set };
        let outcome = evaluate_clips(&params, &mcfg, &tcfg, eval_on)?;
        let labels: Vec<Label> = eval_on.iter().map(|c| c.label).collect();
        let m = metrics(&confusion(&outcome.predictions, &labels)?)?;
        println!(
            "sweep: fps {fps}: {} clips, accuracy {:.4}, f1 {:.4}",
            n_clips, m.accuracy, m.f1
        );
        csv.push_str(&format!(
            "{fps},{},{},{},{},{},{}\n",
            n_clips,
            skipped.len(),
            m.accuracy,
            m.f1,
            m.sensitivity,
            m.specificity
        ));
    }
    let cpath = out.join("sweep.csv");
    write_text(&cpath, &csv)?;
    println!("sweep: wrote {}", cpath.display());
    ManifestBuilder::new("sweep", config)
        .arg("input", input.display().to_string())
        .arg("out", out.display().to_string())
        .inputs(&files)?
        .output(&cpath)
        .write(out)?;
    Ok(())
}
