//! Stratified dataset splitting and minority-class oversampling.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetSplit, Label, PoseError, SkeletonClip};
use crate::seed::mix;

/// Largest-remainder apportionment of `total` items to `ratios` buckets.
/// Remainder ties break to the lowest bucket index.
pub(crate) fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for i in 0..total - assigned {
        counts[order[i % ratios.len()]] += 1;
    }
    counts
}

/// Splits clips into train/validation/test with per-class shuffled
/// assignment and largest-remainder rounding. With `group_by_video` every
/// clip of one video lands in the same subset.
pub fn stratified_split(
    clips: Vec<SkeletonClip>,
    ratios: (f64, f64, f64),
    seed: u64,
    group_by_video: bool,
) -> Result<DatasetSplit, PoseError> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|&x| x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(PoseError::Invalid(format!("ratios {r:?} must be non-negative and sum to 1")));
    }
    for class in Label::BOTH {
        if !clips.iter().any(|c| c.label == class) {
            return Err(PoseError::MissingClass { class });
        }
    }

    // The unit of assignment: a clip index, or a whole video's clip indices.
    let mut units: Vec<(Label, Vec<usize>)> = Vec::new();
    if group_by_video {
        let mut by_video: Vec<(String, Label, Vec<usize>)> = Vec::new();
        for (i, clip) in clips.iter().enumerate() {
            match by_video.iter_mut().find(|(v, _, _)| *v == clip.source.video_id) {
                Some((_, _, idxs)) => idxs.push(i),
                None => by_video.push((clip.source.video_id.clone(), clip.label, vec![i])),
            }
        }
        units.extend(by_video.into_iter().map(|(_, l, idxs)| (l, idxs)));
    } else {
        units.extend(clips.iter().enumerate().map(|(i, c)| (c.label, vec![i])));
    }

    let mut buckets: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for class in Label::BOTH {
        let mut class_units: Vec<Vec<usize>> = units
            .iter()
            .filter(|(l, _)| *l == class)
            .map(|(_, idxs)| idxs.clone())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, class.index() as u64));
        class_units.shuffle(&mut rng);
        let counts = largest_remainder(class_units.len(), &r);
        let mut cursor = 0;
        for (bucket, &n) in buckets.iter_mut().zip(&counts) {
            for unit in &class_units[cursor..cursor + n] {
                bucket.extend_from_slice(unit);
            }
            cursor += n;
        }
    }

    let mut pools: Vec<Option<SkeletonClip>> = clips.into_iter().map(Some).collect();
    let mut take = |idxs: &[usize]| -> Vec<SkeletonClip> {
        let mut sorted = idxs.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|&i| pools[i].take().expect("disjoint buckets")).collect()
    };
    let train = take(&buckets[0]);
    let validation = take(&buckets[1]);
    let test = take(&buckets[2]);
    Ok(DatasetSplit { train, validation, test, seed })
}

/// Resamples the minority class with replacement until class counts are
/// equal, keeps every original clip, and shuffles the result
/// deterministically. Single-class input is an error.
pub fn bootstrap_oversample(
    clips: Vec<SkeletonClip>,
    seed: u64,
) -> Result<Vec<SkeletonClip>, PoseError> {
    let n_chorea = clips.iter().filter(|c| c.label == Label::Chorea).count();
    let n_dystonia = clips.len() - n_chorea;
    if n_chorea == 0 || n_dystonia == 0 {
        let class = if n_chorea == 0 { Label::Chorea } else { Label::Dystonia };
        return Err(PoseError::MissingClass { class });
    }
    let minority = if n_chorea < n_dystonia { Label::Chorea } else { Label::Dystonia };
    let deficit = n_chorea.abs_diff(n_dystonia);

    let minority_idx: Vec<usize> = clips
        .iter()
        .enumerate()
        .filter(|(_, c)| c.label == minority)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = clips.clone();
    for _ in 0..deficit {
        let chosen = minority_idx[rng.gen_range(0..minority_idx.len())];
        out.push(clips[chosen].clone());
    }
    out.shuffle(&mut rng);
    Ok(out)
}
