//! Scratch probe for overfit convergence under default-config variants.

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
            let spec = MotionSpec::new(class, 125, 25, skelclass::seed::mix(seed, (ci * n_per_class + i) as u64));
            let seq = generate(&spec);
            let seq = filter_confidence(&seq, 0.05).unwrap();
            let seq = normalize_resolution(&seq).unwrap();
            let seq = downsample(&seq, fps).unwrap();
            let (mut cs, _) = window_clips(&seq, 75, 75);
            clips.append(&mut cs);
        }
    }
    clips
}

fn main() {
    let clips = synth_clips(4, 15, 3407);
    let variants: Vec<(&str, ModelConfig, TrainConfig)> = vec![
        (
            "batch4",
            ModelConfig::default(),
            TrainConfig { max_epochs: 200, patience: 200, batch_size: 4, ..TrainConfig::default() },
        ),
        (
            "batch2",
            ModelConfig::default(),
            TrainConfig { max_epochs: 200, patience: 200, batch_size: 2, ..TrainConfig::default() },
        ),
        (
            "dropout0",
            ModelConfig { dropout_p: 0.0, ..ModelConfig::default() },
            TrainConfig { max_epochs: 200, patience: 200, ..TrainConfig::default() },
        ),
        (
            "batch4_dropout0",
            ModelConfig { dropout_p: 0.0, ..ModelConfig::default() },
            TrainConfig { max_epochs: 200, patience: 200, batch_size: 4, ..TrainConfig::default() },
        ),
    ];
    for (name, mcfg, tcfg) in variants {
        let start = std::time::Instant::now();
        let (_p, history) = train(&mcfg, &tcfg, &clips, &clips).unwrap();
        let first = history.epochs.iter().find(|r| r.val_accuracy >= 1.0).map(|r| r.epoch);
        let best = history.epochs.iter().map(|r| r.val_accuracy).fold(0.0f64, f64::max);
        println!(
            "{name}: first-100% epoch {:?}, best {:.3}, {:.0}s",
            first,
            best,
            start.elapsed().as_secs_f64()
        );
    }
}
