//! Overfit-capacity check: eight synthetic clips (four per class) under
//! the default configuration must reach 100% training accuracy within
//! 200 epochs. Run with `cargo run --release --example overfit_tiny`.

use skelclass::model::ModelConfig;
use skelclass::pose::{
    downsample, filter_confidence, normalize_resolution, window_clips, SkeletonClip,
};
use skelclass::synth::{generate, MotionClass, MotionSpec};
use skelclass::train::{train, TrainConfig};

fn synth_clips(n_per_class: usize, fps: u32, seed: u64) -> Vec<SkeletonClip> {
    let mut clips = Vec::new();
    for (ci, class) in [MotionClass::ChoreaLike, MotionClass::DystoniaLike].into_iter().enumerate()
    {
        for i in 0..n_per_class {
            let spec = MotionSpec::new(
                class,
                125,
                25,
                skelclass::seed::mix(seed, (ci * n_per_class + i) as u64),
            );
            let seq = generate(&spec);
            let seq = filter_confidence(&seq, 0.05).expect("synthetic confidences are high");
            let seq = normalize_resolution(&seq).expect("synthetic coordinates in frame");
            let seq = downsample(&seq, fps).expect("downsampling to a lower rate");
            let (mut cs, _) = window_clips(&seq, 75, 75);
            clips.append(&mut cs);
        }
    }
    clips
}

fn main() {
    let clips = synth_clips(4, 15, 3407);
    assert_eq!(clips.len(), 8, "125 frames at 15 fps yield exactly one clip each");

    let mcfg = ModelConfig::default();
    // Defaults, with the epoch budget of the capacity check and early
    // stopping disabled so the full budget is available.
    let tcfg = TrainConfig { max_epochs: 200, patience: 200, ..TrainConfig::default() };

    // The training set doubles as the validation monitor, so val_accuracy
    // is training accuracy in eval mode.
    let start = std::time::Instant::now();
    let (_params, history) = train(&mcfg, &tcfg, &clips, &clips).expect("training succeeds");
    let reached = history.epochs.iter().find(|r| r.val_accuracy >= 1.0);
    match reached {
        Some(row) => println!(
            "reached 100% training accuracy at epoch {} ({:.1}s elapsed total)",
            row.epoch,
            start.elapsed().as_secs_f64()
        ),
        None => {
            let best = history
                .epochs
                .iter()
                .map(|r| r.val_accuracy)
                .fold(0.0f64, f64::max);
            println!(
                "did NOT reach 100% within {} epochs (best {:.3}, {:.1}s elapsed)",
                history.epochs.len(),
                best,
                start.elapsed().as_secs_f64()
            );
            std::process::exit(1);
        }
    }
}
