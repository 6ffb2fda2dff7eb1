use std::io::Write;

use proptest::prelude::*;

use super::preprocess::{constant_clip, constant_sequence, part_of, retained_block_indices};
use super::*;

fn write_temp(lines: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f.flush().unwrap();
    f
}

fn kp_line(t: usize, n: usize) -> String {
    let kps: Vec<String> = (0..n).map(|i| format!("[{}.0, {}.0, 0.9]", 10 + i, 20 + i)).collect();
    format!("{{\"t\": {t}, \"kp\": [{}]}}", kps.join(", "))
}

const HEADER: &str =
    r#"{"video_id": "v1", "label": 1, "fps": 25, "width": 1280, "height": 720}"#;

#[test]
fn parse_well_formed_sequence() {
    let lines = [HEADER.to_string(), kp_line(0, 25), kp_line(1, 25), kp_line(2, 25)];
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    let f = write_temp(&refs);
    let seq = parse_sequence(f.path()).unwrap();
    assert_eq!(seq.frames.len(), 3);
    assert!(seq.frames.iter().all(|f| f.len() == 25));
    assert_eq!(seq.fps, 25);
    assert_eq!(seq.label, Label::Dystonia);
    assert_eq!((seq.width, seq.height), (1280, 720));
}

#[test]
fn parse_rejects_wrong_keypoint_count() {
    let lines = [HEADER.to_string(), kp_line(0, 25), kp_line(1, 24)];
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    let f = write_temp(&refs);
    match parse_sequence(f.path()) {
        Err(PoseError::WrongKeypointCount { frame, got, .. }) => {
            assert_eq!(frame, 1);
            assert_eq!(got, 24);
        }
        other => panic!("expected keypoint-count error, got {other:?}"),
    }
}

#[test]
fn parse_reports_malformed_line_numbers() {
    let lines = [HEADER, "{not json}"];
    let f = write_temp(&lines);
    match parse_sequence(f.path()) {
        Err(PoseError::Malformed { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected malformed error, got {other:?}"),
    }
}

#[test]
fn parse_requires_header() {
    let f = write_temp(&[]);
    assert!(matches!(parse_sequence(f.path()), Err(PoseError::MissingHeader)));
}

#[test]
fn sequence_roundtrip() {
    let seq = constant_sequence(4, 25);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.ndjson");
    write_sequence(&seq, &path).unwrap();
    let back = parse_sequence(&path).unwrap();
    assert_eq!(back, seq);
}

#[test]
fn filter_is_identity_when_all_confident() {
    let seq = constant_sequence(5, 25);
    let out = filter_confidence(&seq, 0.05).unwrap();
    assert_eq!(out, seq);
}

#[test]
fn filter_holds_last_valid_value() {
    let mut seq = constant_sequence(3, 25);
    seq.frames[0][4].x = 0.33;
    seq.frames[0][4].y = 0.44;
    seq.frames[1][4].confidence = 0.01;
    seq.frames[1][4].x = 99.0;
    let out = filter_confidence(&seq, 0.05).unwrap();
    assert!(!out.frames[1][4].valid);
    assert_eq!(out.frames[1][4].x, seq.frames[0][4].x);
    assert_eq!(out.frames[1][4].y, seq.frames[0][4].y);
    // Frame 2 was untouched.
    assert_eq!(out.frames[2][4].x, seq.frames[2][4].x);
}

#[test]
fn filter_backfills_from_first_valid() {
    let mut seq = constant_sequence(3, 25);
    seq.frames[0][6].confidence = 0.0;
    seq.frames[0][6].x = -5.0;
    seq.frames[1][6].x = 0.77;
    let out = filter_confidence(&seq, 0.05).unwrap();
    assert_eq!(out.frames[0][6].x, 0.77);
}

#[test]
fn filter_rejects_never_valid_keypoints() {
    let mut seq = constant_sequence(3, 25);
    for f in &mut seq.frames {
        f[7].confidence = 0.0;
    }
    match filter_confidence(&seq, 0.05) {
        Err(PoseError::NeverValid { indices, .. }) => assert_eq!(indices, vec![7]),
        other => panic!("expected never-valid error, got {other:?}"),
    }
}

#[test]
fn normalize_maps_known_points() {
    let mut seq = constant_sequence(1, 25);
    seq.frames[0][0] = Keypoint { x: 640.0, y: 360.0, confidence: 0.9, valid: true };
    seq.frames[0][1] = Keypoint { x: 0.0, y: 0.0, confidence: 0.9, valid: true };
    seq.frames[0][2] = Keypoint { x: 1280.0, y: 720.0, confidence: 0.9, valid: true };
    let out = normalize_resolution(&seq).unwrap();
    assert_eq!((out.frames[0][0].x, out.frames[0][0].y), (0.5, 0.5));
    assert_eq!((out.frames[0][1].x, out.frames[0][1].y), (0.0, 0.0));
    assert_eq!((out.frames[0][2].x, out.frames[0][2].y), (1.0, 1.0));
}

#[test]
fn normalize_rejects_out_of_bounds() {
    let mut seq = constant_sequence(1, 25);
    seq.frames[0][3].x = 1282.0;
    assert!(matches!(normalize_resolution(&seq), Err(PoseError::OutOfBounds { .. })));
}

#[test]
fn downsample_block_indices_match_formula() {
    assert_eq!(retained_block_indices(25, 10), vec![0, 2, 5, 7, 10, 12, 15, 17, 20, 22]);
}

#[test]
fn downsample_counts_and_identity() {
    let seq = constant_sequence(100, 25);
    let down = downsample(&seq, 10).unwrap();
    assert_eq!(down.fps, 10);
    assert_eq!(down.frames.len(), 40); // 10 of every 25 over 4 blocks

    let same = downsample(&seq, 25).unwrap();
    assert_eq!(same.frames.len(), 100);

    assert!(matches!(downsample(&seq, 30), Err(PoseError::Upsample { .. })));
}

#[test]
fn downsample_retains_target_count_for_all_rate_pairs() {
    let rates = [5u32, 10, 15, 20, 25];
    for &s in &rates {
        let seq = constant_sequence(3 * s as usize, s);
        for &t in rates.iter().filter(|&&t| t <= s) {
            let down = downsample(&seq, t).unwrap();
            assert_eq!(down.frames.len(), 3 * t as usize, "{s} -> {t}");
            let idx = retained_block_indices(s, t);
            assert_eq!(idx.len(), t as usize);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            assert!(idx.iter().all(|&i| i < s as usize));
        }
    }
}

#[test]
fn normalization_and_downsampling_commute() {
    let mut seq = constant_sequence(60, 25);
    for (t, frame) in seq.frames.iter_mut().enumerate() {
        for (i, k) in frame.iter_mut().enumerate() {
            k.x = ((t * 31 + i * 7) % 1280) as f64;
            k.y = ((t * 17 + i * 13) % 720) as f64;
        }
    }
    let a = downsample(&normalize_resolution(&seq).unwrap(), 10).unwrap();
    let b = normalize_resolution(&downsample(&seq, 10).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn window_examples() {
    let (clips, notice) = window_clips(&constant_sequence(160, 25), 75, 75);
    assert_eq!(clips.len(), 2);
    assert!(notice.is_none());
    assert_eq!(clips[0].source.start_frame, 0);
    assert_eq!(clips[1].source.start_frame, 75);

    let (clips, notice) = window_clips(&constant_sequence(74, 25), 75, 75);
    assert!(clips.is_empty());
    let notice = notice.unwrap();
    assert_eq!(notice.n_frames, 74);
    assert_eq!(notice.required, 75);

    let (clips, _) = window_clips(&constant_sequence(75, 25), 75, 75);
    assert_eq!(clips.len(), 1);
    assert_eq!(clips[0].matrix.shape(), [50, 75]);
}

proptest! {
    #[test]
    fn window_count_formula(n in 1usize..400, length in 1usize..100, stride in 1usize..100) {
        let (clips, _) = window_clips(&constant_sequence(n, 25), length, stride);
        let expected = if n >= length { (n - length) / stride + 1 } else { 0 };
        prop_assert_eq!(clips.len(), expected);
    }
}

#[test]
fn partition_sizes_and_travelling_order() {
    let parts = partition_parts(&constant_clip());
    assert_eq!(parts.part_sizes, [7, 3, 3, 6, 6]);
    assert_eq!(parts.part_sizes.iter().sum::<usize>(), 25);
    // Right wrist (keypoint 4) is the last entry of the right arm.
    assert_eq!(PART_ORDER[1], &[2, 3, 4]);
    assert_eq!(PART_NAMES[1], "right_arm");
}

#[test]
fn partition_permutation_roundtrip() {
    let clip = constant_clip();
    let parts = partition_parts(&clip);
    // Concatenate blocks and invert the permutation; the clip must come
    // back exactly.
    let mut rebuilt = clip.matrix.clone();
    let mut row = 0;
    for block in &parts.blocks {
        for r in 0..block.rows() {
            let dst = parts.row_perm[row];
            for t in 0..block.cols() {
                rebuilt.set(dst, t, block.get(r, t));
            }
            row += 1;
        }
    }
    assert_eq!(rebuilt, clip.matrix);
    let mut seen = parts.row_perm.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..50).collect::<Vec<_>>());
}

#[test]
fn every_keypoint_has_a_part() {
    for kp in 0..N_KEYPOINTS {
        let p = part_of(kp);
        assert!(PART_ORDER[p].contains(&kp));
    }
}

#[test]
fn flip_is_involution_with_fixed_midline() {
    let mut clip = constant_clip();
    // Nose at x = 0.5 stays put; right wrist value lands in the left
    // wrist slot reflected. Hand-set entries go through the same grid
    // quantization window_clips applies.
    clip.matrix.set(0, 0, 0.5);
    clip.matrix.set(1, 0, quantize01(0.3));
    clip.matrix.set(8, 0, quantize01(0.2)); // keypoint 4 x
    clip.matrix.set(9, 0, quantize01(0.4)); // keypoint 4 y
    let flipped = flip_horizontal(&clip);
    assert_eq!(flipped.matrix.get(0, 0), 0.5);
    assert_eq!(flipped.matrix.get(1, 0), quantize01(0.3));
    assert!((flipped.matrix.get(14, 0) - 0.8).abs() < 1e-9); // keypoint 7 x
    assert_eq!(flipped.matrix.get(15, 0), quantize01(0.4));
    assert_eq!(flipped.label, clip.label);
    assert_eq!(flipped.matrix.shape(), [50, 75]);

    let back = flip_horizontal(&flipped);
    assert_eq!(back, clip);
}

proptest! {
    #[test]
    fn flip_involution_on_arbitrary_grid_clips(vals in proptest::collection::vec(0.0f64..=1.0, 50)) {
        let mut clip = constant_clip();
        for (i, v) in vals.iter().enumerate() {
            for t in 0..75 {
                clip.matrix.set(i, t, quantize01(*v));
            }
        }
        let twice = flip_horizontal(&flip_horizontal(&clip));
        prop_assert_eq!(twice, clip);
    }
}

#[test]
fn mirror_map_is_an_involution() {
    for (i, &m) in MIRROR_MAP.iter().enumerate() {
        assert_eq!(MIRROR_MAP[m], i);
    }
    for mid in [0, 1, 8] {
        assert_eq!(MIRROR_MAP[mid], mid);
    }
}

fn labeled_clips(n_chorea: usize, n_dystonia: usize) -> Vec<SkeletonClip> {
    let base = constant_clip();
    let mut clips = Vec::new();
    for i in 0..n_chorea + n_dystonia {
        let mut c = base.clone();
        c.label = if i < n_chorea { Label::Chorea } else { Label::Dystonia };
        c.source.video_id = format!("v{i}");
        clips.push(c);
    }
    clips
}

#[test]
fn split_largest_remainder_example() {
    let clips = labeled_clips(6, 4);
    let split = stratified_split(clips, (0.8, 0.1, 0.1), 1, false).unwrap();
    let count = |cs: &[SkeletonClip], l: Label| cs.iter().filter(|c| c.label == l).count();
    assert_eq!(count(&split.train, Label::Chorea), 5);
    assert_eq!(count(&split.train, Label::Dystonia), 3);
    assert_eq!(split.train.len() + split.validation.len() + split.test.len(), 10);
}

#[test]
fn split_is_deterministic_and_degenerate_ratio_works() {
    let a = stratified_split(labeled_clips(8, 5), (0.8, 0.1, 0.1), 42, false).unwrap();
    let b = stratified_split(labeled_clips(8, 5), (0.8, 0.1, 0.1), 42, false).unwrap();
    let ids = |cs: &[SkeletonClip]| cs.iter().map(|c| c.source.video_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&a.train), ids(&b.train));
    assert_eq!(ids(&a.validation), ids(&b.validation));
    assert_eq!(ids(&a.test), ids(&b.test));

    let all = stratified_split(labeled_clips(3, 3), (1.0, 0.0, 0.0), 7, false).unwrap();
    assert_eq!(all.train.len(), 6);
    assert!(all.validation.is_empty() && all.test.is_empty());
}

#[test]
fn split_rejects_missing_class() {
    let clips = labeled_clips(4, 0);
    assert!(matches!(
        stratified_split(clips, (0.8, 0.1, 0.1), 1, false),
        Err(PoseError::MissingClass { class: Label::Dystonia })
    ));
}

#[test]
fn split_groups_videos_when_asked() {
    let base = constant_clip();
    let mut clips = Vec::new();
    for v in 0..6 {
        for w in 0..3 {
            let mut c = base.clone();
            c.label = if v < 3 { Label::Chorea } else { Label::Dystonia };
            c.source.video_id = format!("v{v}");
            c.source.start_frame = w * 75;
            clips.push(c);
        }
    }
    let split = stratified_split(clips, (0.6, 0.2, 0.2), 5, true).unwrap();
    let subsets = [&split.train, &split.validation, &split.test];
    for (si, subset) in subsets.iter().enumerate() {
        for clip in subset.iter() {
            let elsewhere = subsets
                .iter()
                .enumerate()
                .filter(|(sj, _)| *sj != si)
                .any(|(_, s)| s.iter().any(|c| c.source.video_id == clip.source.video_id));
            assert!(!elsewhere, "video {} leaked across subsets", clip.source.video_id);
        }
    }
}

proptest! {
    #[test]
    fn split_subsets_partition_input(n0 in 1usize..40, n1 in 1usize..40, seed in 0u64..1000) {
        let clips = labeled_clips(n0, n1);
        let split = stratified_split(clips, (0.8, 0.1, 0.1), seed, false).unwrap();
        let total = split.train.len() + split.validation.len() + split.test.len();
        prop_assert_eq!(total, n0 + n1);
        for (class, n) in [(Label::Chorea, n0), (Label::Dystonia, n1)] {
            for (subset, ratio) in [(&split.train, 0.8), (&split.validation, 0.1), (&split.test, 0.1)] {
                let got = subset.iter().filter(|c| c.label == class).count() as f64;
                prop_assert!((got - ratio * n as f64).abs() <= 1.0 + 1e-9,
                    "class {:?}: got {} of {} at ratio {}", class, got, n, ratio);
            }
        }
    }
}

#[test]
fn oversample_balances_paper_counts() {
    let clips = labeled_clips(31, 19);
    let out = bootstrap_oversample(clips, 9).unwrap();
    let n_chorea = out.iter().filter(|c| c.label == Label::Chorea).count();
    let n_dystonia = out.len() - n_chorea;
    assert_eq!((n_chorea, n_dystonia), (31, 31));
}

#[test]
fn oversample_balanced_input_is_permutation() {
    let clips = labeled_clips(5, 5);
    let mut before: Vec<String> = clips.iter().map(|c| c.source.video_id.clone()).collect();
    let out = bootstrap_oversample(clips, 3).unwrap();
    let mut after: Vec<String> = out.iter().map(|c| c.source.video_id.clone()).collect();
    before.sort();
    after.sort();
    assert_eq!(before, after);
}

#[test]
fn oversample_draws_from_input_minority_set() {
    let clips = labeled_clips(9, 3);
    let minority_ids: Vec<String> = clips
        .iter()
        .filter(|c| c.label == Label::Dystonia)
        .map(|c| c.source.video_id.clone())
        .collect();
    let out = bootstrap_oversample(clips, 11).unwrap();
    for c in out.iter().filter(|c| c.label == Label::Dystonia) {
        assert!(minority_ids.contains(&c.source.video_id));
    }
    let rerun = bootstrap_oversample(labeled_clips(9, 3), 11).unwrap();
    let ids = |cs: &[SkeletonClip]| cs.iter().map(|c| c.source.video_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&out), ids(&rerun));
}

#[test]
fn oversample_rejects_single_class() {
    let clips = labeled_clips(4, 0);
    assert!(bootstrap_oversample(clips, 1).is_err());
}

#[test]
fn clip_archive_roundtrip() {
    let clips = labeled_clips(2, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clips.ndjson");
    write_clips(&clips, &path).unwrap();
    let back = read_clips(&path).unwrap();
    assert_eq!(back, clips);
}
