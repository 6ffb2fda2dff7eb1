//! The preprocessing path from raw keypoint sequences to model-ready
//! clips, with the clip/skip accounting across target frame rates. Run
//! with `cargo run --release --example preprocess_pipeline`.

use skelclass::pose::{
    bootstrap_oversample, downsample, filter_confidence, normalize_resolution, partition_parts,
    stratified_split, window_clips, PART_NAMES,
};
use skelclass::synth::{generate, MotionClass, MotionSpec};

fn main() {
    // Ten-second sequences at 25 fps so even 10 fps yields a full window.
    let sequences: Vec<_> = (0..20)
        .map(|i| {
            let class = if i % 2 == 0 { MotionClass::ChoreaLike } else { MotionClass::DystoniaLike };
            generate(&MotionSpec::new(class, 250, 25, 500 + i))
        })
        .collect();

    println!("fps  clips  videos_skipped");
    for fps in [5u32, 10, 15, 20, 25] {
        let mut clips = 0;
        let mut skipped = 0;
        for seq in &sequences {
            let seq = filter_confidence(seq, 0.05).unwrap();
            let seq = normalize_resolution(&seq).unwrap();
            let seq = downsample(&seq, fps).unwrap();
            let (cs, notice) = window_clips(&seq, 75, 75);
            clips += cs.len();
            skipped += notice.is_some() as usize;
        }
        println!("{fps:>3}  {clips:>5}  {skipped:>14}");
    }

    // One clip in detail: travelling-order part blocks and a split.
    let seq = normalize_resolution(&filter_confidence(&sequences[0], 0.05).unwrap()).unwrap();
    let seq = downsample(&seq, 15).unwrap();
    let (clips, _) = window_clips(&seq, 75, 75);
    let parts = partition_parts(&clips[0]);
    println!("\npart blocks of one clip:");
    for (name, size) in PART_NAMES.iter().zip(parts.part_sizes) {
        println!("  {name:<10} {size} keypoints ({} rows x 75 frames)", 2 * size);
    }

    let all_clips: Vec<_> = sequences
        .iter()
        .flat_map(|s| {
            let s = normalize_resolution(&filter_confidence(s, 0.05).unwrap()).unwrap();
            let s = downsample(&s, 15).unwrap();
            window_clips(&s, 75, 75).0
        })
        .collect();
    let n = all_clips.len();
    let split = stratified_split(all_clips, (0.8, 0.1, 0.1), 3407, true).unwrap();
    println!(
        "\nsplit of {n} clips: train {}, validation {}, test {}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    let balanced = bootstrap_oversample(split.train, 3407).unwrap();
    println!("after minority oversampling the training set holds {} clips", balanced.len());
}
