//! Dataset construction: stratified frame selection, video-atomic
//! train/validation/test splitting, inter-rater frame sampling and
//! training-set subsampling.
//!
//! Every operation is a pure function of its inputs and the plan's seed.

use crate::error::{Error, Result};
use crate::model::{DatasetManifest, FrameMeta, Setup, Split, VideoMeta};
use crate::rng::{rng_for, stable_hash};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

const SHARE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitShares {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitShares {
    fn default() -> Self {
        SplitShares { train: 0.72, validation: 0.08, test: 0.20 }
    }
}

impl SplitShares {
    pub fn get(&self, split: Split) -> f64 {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationPlan {
    pub total_frames: usize,
    pub setup_shares: BTreeMap<Setup, f64>,
    pub challenging_share: f64,
    pub split_shares: SplitShares,
    pub seed: u64,
}

impl Default for StratificationPlan {
    fn default() -> Self {
        StratificationPlan {
            total_frames: 20_000,
            setup_shares: default_setup_shares(),
            challenging_share: 0.20,
            split_shares: SplitShares::default(),
            seed: 0,
        }
    }
}

pub fn default_setup_shares() -> BTreeMap<Setup, f64> {
    [
        (Setup::StandardizedHospital, 0.40),
        (Setup::HomeSmartphone, 0.40),
        (Setup::LessStandardizedHospital, 0.20),
    ]
    .into()
}

impl StratificationPlan {
    pub fn validate(&self) -> Result<()> {
        let setup_sum: f64 = self.setup_shares.values().sum();
        if (setup_sum - 1.0).abs() > SHARE_TOLERANCE || self.setup_shares.values().any(|s| *s < 0.0) {
            return Err(Error::InvalidInput(format!("setup shares must be non-negative and sum to 1, got {setup_sum}")));
        }
        let s = self.split_shares;
        let split_sum = s.train + s.validation + s.test;
        if (split_sum - 1.0).abs() > SHARE_TOLERANCE || [s.train, s.validation, s.test].iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput(format!("split shares must be non-negative and sum to 1, got {split_sum}")));
        }
        if !(0.0..=1.0).contains(&self.challenging_share) {
            return Err(Error::InvalidInput(format!("challenging share {} outside [0, 1]", self.challenging_share)));
        }
        Ok(())
    }

    fn setup_share(&self, setup: Setup) -> f64 {
        self.setup_shares.get(&setup).copied().unwrap_or(0.0)
    }
}

fn setup_index(setup: Setup) -> u64 {
    Setup::ALL.iter().position(|s| *s == setup).expect("listed") as u64
}

/// Splits `want` across buckets of the given capacities as evenly as
/// possible, in order; earlier buckets take the remainder.
fn even_quotas(capacities: &[usize], want: usize) -> Option<Vec<usize>> {
    if capacities.iter().sum::<usize>() < want {
        return None;
    }
    let mut quotas = vec![0; capacities.len()];
    let mut remaining = want;
    while remaining > 0 {
        let open: Vec<usize> = (0..capacities.len()).filter(|&i| quotas[i] < capacities[i]).collect();
        let per = remaining / open.len();
        let extra = remaining % open.len();
        for (j, &i) in open.iter().enumerate() {
            let add = (per + usize::from(j < extra)).min(capacities[i] - quotas[i]);
            quotas[i] += add;
            remaining -= add;
        }
    }
    Some(quotas)
}

/// Selects `plan.total_frames` frames stratified by recording setup.
///
/// Within each setup, the random share comes from untagged frames with an
/// equal number per video (videos that run out hand their share to the
/// rest); the challenging share comes from frames tagged challenging.
pub fn stratify_frames(pool: &[FrameMeta], plan: &StratificationPlan) -> Result<Vec<FrameMeta>> {
    plan.validate()?;
    let mut selected = Vec::with_capacity(plan.total_frames);
    for setup in Setup::ALL {
        let count = (plan.total_frames as f64 * plan.setup_share(setup)).round() as usize;
        let n_challenging = (count as f64 * plan.challenging_share).round() as usize;
        let n_random = count - n_challenging;
        let class = setup_index(setup);

        let mut by_video: BTreeMap<&str, Vec<&FrameMeta>> = BTreeMap::new();
        let mut challenging: Vec<&FrameMeta> = Vec::new();
        for f in pool.iter().filter(|f| f.setup == setup) {
            if f.pose_class.is_challenging() {
                challenging.push(f);
            } else {
                by_video.entry(f.video_id.as_str()).or_default().push(f);
            }
        }

        let mut videos: Vec<(&str, Vec<&FrameMeta>)> = by_video.into_iter().collect();
        videos.shuffle(&mut rng_for(plan.seed, &[class, 1]));
        let capacities: Vec<usize> = videos.iter().map(|(_, f)| f.len()).collect();
        let quotas = even_quotas(&capacities, n_random).ok_or_else(|| {
            Error::InsufficientFrames(format!(
                "{setup:?} needs {n_random} random frames, pool has {}",
                capacities.iter().sum::<usize>()
            ))
        })?;
        for ((video, mut frames), quota) in videos.into_iter().zip(quotas) {
            frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
            frames.shuffle(&mut rng_for(plan.seed, &[class, 2, stable_hash(video)]));
            selected.extend(frames.into_iter().take(quota).cloned());
        }

        if challenging.len() < n_challenging {
            return Err(Error::InsufficientFrames(format!(
                "{setup:?} needs {n_challenging} challenging frames, pool has {}",
                challenging.len()
            )));
        }
        challenging.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        challenging.shuffle(&mut rng_for(plan.seed, &[class, 3]));
        selected.extend(challenging.into_iter().take(n_challenging).cloned());
    }
    selected.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    Ok(selected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitWarning {
    /// Fewer than three videos, so at least one split stays empty.
    TooFewVideos { videos: usize },
    EmptySplit { split: Split },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub manifest: DatasetManifest,
    pub warnings: Vec<SplitWarning>,
}

/// Assigns whole videos to train/validation/test.
///
/// Videos are visited in seeded-shuffled order and each goes to the split
/// currently furthest below its target frame count. No split ends more than
/// one video's worth of frames away from its target.
pub fn split_dataset(frames: &[FrameMeta], known_videos: &[VideoMeta], plan: &StratificationPlan) -> Result<SplitOutcome> {
    plan.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to split".into()));
    }
    let mut by_video: BTreeMap<&str, Vec<&FrameMeta>> = BTreeMap::new();
    for f in frames {
        if f.video_id.is_empty() {
            return Err(Error::InvalidInput(format!("frame {} has no video", f.frame_id)));
        }
        by_video.entry(f.video_id.as_str()).or_default().push(f);
    }
    let mut order: Vec<(&str, Vec<&FrameMeta>)> = by_video.into_iter().collect();
    order.shuffle(&mut rng_for(plan.seed, &[4]));

    let total = frames.len() as f64;
    let targets = Split::ALL.map(|s| plan.split_shares.get(s) * total);
    let mut counts = [0usize; 3];
    let mut splits = BTreeMap::new();
    for (_, video_frames) in &order {
        let split = Split::ALL
            .into_iter()
            .max_by(|a, b| {
                let da = targets[a.index()] - counts[a.index()] as f64;
                let db = targets[b.index()] - counts[b.index()] as f64;
                // Reversed index comparison keeps the earliest split on ties.
                da.total_cmp(&db).then(b.index().cmp(&a.index()))
            })
            .expect("three splits");
        counts[split.index()] += video_frames.len();
        for f in video_frames {
            splits.insert(f.frame_id.clone(), split);
        }
    }

    let mut warnings = Vec::new();
    if order.len() < 3 {
        warnings.push(SplitWarning::TooFewVideos { videos: order.len() });
    }
    for s in Split::ALL {
        if counts[s.index()] == 0 {
            warnings.push(SplitWarning::EmptySplit { split: s });
        }
    }

    let known: BTreeMap<&str, &VideoMeta> = known_videos.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let mut video_ids: Vec<&str> = order.iter().map(|(v, _)| *v).collect();
    video_ids.sort_unstable();
    let videos = video_ids
        .into_iter()
        .map(|id| match known.get(id) {
            Some(v) => (*v).clone(),
            None => VideoMeta {
                video_id: id.to_string(),
                site: String::new(),
                country: String::new(),
                setup: order.iter().find(|(v, _)| *v == id).expect("present").1[0].setup,
            },
        })
        .collect();
    let mut frames = frames.to_vec();
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    let manifest = DatasetManifest { videos, frames, splits, interrater_frames: BTreeSet::new() };
    manifest.validate()?;
    Ok(SplitOutcome { manifest, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDeviation {
    pub split: Split,
    pub frames: usize,
    pub target: f64,
    /// |frames − target|, in frames.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    /// Videos whose frames land in more than one split.
    pub atomicity_violations: Vec<String>,
    pub empty_splits: Vec<Split>,
    pub unassigned_frames: Vec<String>,
    pub deviations: Vec<SplitDeviation>,
    pub setup_shares: BTreeMap<Setup, f64>,
    pub largest_video: usize,
}

impl SplitReport {
    pub fn is_clean(&self) -> bool {
        self.atomicity_violations.is_empty() && self.empty_splits.is_empty() && self.unassigned_frames.is_empty()
    }
}

pub fn validate_split(manifest: &DatasetManifest, shares: &SplitShares) -> SplitReport {
    let mut video_splits: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    let mut video_sizes: BTreeMap<&str, usize> = BTreeMap::new();
    let mut counts = [0usize; 3];
    let mut setups: BTreeMap<Setup, usize> = BTreeMap::new();
    let mut unassigned = Vec::new();
    for f in &manifest.frames {
        *video_sizes.entry(f.video_id.as_str()).or_default() += 1;
        *setups.entry(f.setup).or_default() += 1;
        match manifest.splits.get(&f.frame_id) {
            Some(&s) => {
                counts[s.index()] += 1;
                video_splits.entry(f.video_id.as_str()).or_default().insert(s);
            }
            None => unassigned.push(f.frame_id.clone()),
        }
    }
    let total = manifest.frames.len() as f64;
    SplitReport {
        atomicity_violations: video_splits
            .into_iter()
            .filter(|(_, s)| s.len() > 1)
            .map(|(v, _)| v.to_string())
            .collect(),
        empty_splits: Split::ALL.into_iter().filter(|s| counts[s.index()] == 0).collect(),
        unassigned_frames: unassigned,
        deviations: Split::ALL
            .into_iter()
            .map(|s| {
                let target = shares.get(s) * total;
                let frames = counts[s.index()];
                SplitDeviation { split: s, frames, target, deviation: (frames as f64 - target).abs() }
            })
            .collect(),
        setup_shares: setups.into_iter().map(|(s, n)| (s, n as f64 / total)).collect(),
        largest_video: video_sizes.values().copied().max().unwrap_or(0),
    }
}

/// Distributes `size` across classes in proportion to `counts`, by largest
/// remainder, so each class is within one frame of its exact share.
fn proportional_quotas(counts: &[usize], size: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let exact: Vec<f64> = counts.iter().map(|&c| size as f64 * c as f64 / total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = size - quotas.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        quotas[i] += 1;
    }
    quotas
}

/// Samples `count` inter-rater frames with the given setup distribution.
pub fn select_interrater(
    frames: &[FrameMeta],
    count: usize,
    setup_shares: &BTreeMap<Setup, f64>,
    seed: u64,
) -> Result<BTreeSet<String>> {
    let weights: Vec<usize> = Setup::ALL
        .iter()
        .map(|s| (setup_shares.get(s).copied().unwrap_or(0.0) * 1e9).round() as usize)
        .collect();
    let quotas = proportional_quotas(&weights, count);
    let mut chosen = BTreeSet::new();
    for (setup, quota) in Setup::ALL.into_iter().zip(quotas) {
        let mut pool: Vec<&FrameMeta> = frames.iter().filter(|f| f.setup == setup).collect();
        if pool.len() < quota {
            return Err(Error::InsufficientFrames(format!(
                "{setup:?} needs {quota} inter-rater frames, has {}",
                pool.len()
            )));
        }
        pool.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
        pool.shuffle(&mut rng_for(seed, &[5, setup_index(setup)]));
        chosen.extend(pool.into_iter().take(quota).map(|f| f.frame_id.clone()));
    }
    Ok(chosen)
}

/// Draws an independent subset of the training frames for every requested
/// size, keeping each setup's share within one frame of the full set's.
pub fn build_training_subsets(train: &[FrameMeta], sizes: &[usize], seed: u64) -> Result<BTreeMap<usize, BTreeSet<String>>> {
    let mut classes: Vec<Vec<&FrameMeta>> = Setup::ALL
        .iter()
        .map(|s| train.iter().filter(|f| f.setup == *s).collect())
        .collect();
    for class in &mut classes {
        class.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    }
    let counts: Vec<usize> = classes.iter().map(Vec::len).collect();
    let mut out = BTreeMap::new();
    for &size in sizes {
        if size > train.len() {
            return Err(Error::InsufficientFrames(format!(
                "subset of {size} requested from {} training frames",
                train.len()
            )));
        }
        let quotas = proportional_quotas(&counts, size);
        let mut subset = BTreeSet::new();
        for (ci, (class, quota)) in classes.iter().zip(quotas).enumerate() {
            let mut pool = class.clone();
            pool.shuffle(&mut rng_for(seed, &[6, size as u64, ci as u64]));
            subset.extend(pool.into_iter().take(quota).map(|f| f.frame_id.clone()));
        }
        out.insert(size, subset);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChallengeCriterion, PoseClass};

    fn pool(videos: usize, per_video: usize, setup: Setup, prefix: &str) -> Vec<FrameMeta> {
        (0..videos)
            .flat_map(|v| {
                (0..per_video).map(move |i| FrameMeta::new(format!("{prefix}{v:03}_{i:04}"), format!("{prefix}{v:03}"), 640, 480, setup))
            })
            .collect()
    }

    #[test]
    fn even_quotas_water_fill() {
        assert_eq!(even_quotas(&[100, 100, 100], 90), Some(vec![30, 30, 30]));
        assert_eq!(even_quotas(&[100, 100, 100], 91), Some(vec![31, 30, 30]));
        assert_eq!(even_quotas(&[5, 100, 100], 90), Some(vec![5, 43, 42]));
        assert_eq!(even_quotas(&[5, 5], 11), None);
        assert_eq!(even_quotas(&[], 0), Some(vec![]));
    }

    #[test]
    fn single_video_small_total() {
        let frames = pool(1, 20, Setup::HomeSmartphone, "h");
        let plan = StratificationPlan {
            total_frames: 10,
            setup_shares: [(Setup::HomeSmartphone, 1.0)].into(),
            challenging_share: 0.0,
            ..Default::default()
        };
        let out = stratify_frames(&frames, &plan).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|f| f.video_id == "h000"));
    }

    #[test]
    fn equal_frames_per_video_for_many_seeds() {
        let frames = pool(3, 100, Setup::StandardizedHospital, "s");
        for seed in 0..20 {
            let plan = StratificationPlan {
                total_frames: 90,
                setup_shares: [(Setup::StandardizedHospital, 1.0)].into(),
                challenging_share: 0.0,
                seed,
                ..Default::default()
            };
            let out = stratify_frames(&frames, &plan).unwrap();
            let mut per: BTreeMap<&str, usize> = BTreeMap::new();
            for f in &out {
                *per.entry(f.video_id.as_str()).or_default() += 1;
            }
            assert_eq!(per.values().copied().collect::<Vec<_>>(), vec![30, 30, 30], "seed {seed}");
        }
    }

    #[test]
    fn insufficient_frames_are_reported() {
        let mut frames = pool(2, 5, Setup::HomeSmartphone, "h");
        let plan = StratificationPlan {
            total_frames: 20,
            setup_shares: [(Setup::HomeSmartphone, 1.0)].into(),
            challenging_share: 0.0,
            ..Default::default()
        };
        assert!(matches!(stratify_frames(&frames, &plan), Err(Error::InsufficientFrames(_))));
        frames.extend(pool(4, 5, Setup::HomeSmartphone, "x"));
        let plan = StratificationPlan { challenging_share: 0.5, ..plan };
        assert!(matches!(stratify_frames(&frames, &plan), Err(Error::InsufficientFrames(_))));
    }

    #[test]
    fn challenging_frames_come_from_tags() {
        let mut frames = pool(4, 20, Setup::HomeSmartphone, "h");
        for f in frames.iter_mut().step_by(4) {
            f.pose_class = PoseClass::Challenging(ChallengeCriterion::Crossing);
        }
        let plan = StratificationPlan {
            total_frames: 40,
            setup_shares: [(Setup::HomeSmartphone, 1.0)].into(),
            challenging_share: 0.25,
            ..Default::default()
        };
        let out = stratify_frames(&frames, &plan).unwrap();
        assert_eq!(out.iter().filter(|f| f.pose_class.is_challenging()).count(), 10);
        assert_eq!(out, stratify_frames(&frames, &plan).unwrap());
    }

    #[test]
    fn plan_validation() {
        let mut plan = StratificationPlan::default();
        plan.validate().unwrap();
        plan.setup_shares.insert(Setup::HomeSmartphone, 0.5);
        assert!(plan.validate().is_err());
        let plan = StratificationPlan {
            split_shares: SplitShares { train: 0.7, validation: 0.1, test: 0.1 },
            ..Default::default()
        };
        assert!(plan.validate().is_err());
        let plan = StratificationPlan { challenging_share: 1.5, ..Default::default() };
        assert!(plan.validate().is_err());
    }

    #[test]
    fn one_video_lands_in_one_split_with_warning() {
        let frames = pool(1, 30, Setup::HomeSmartphone, "h");
        let out = split_dataset(&frames, &[], &StratificationPlan::default()).unwrap();
        let splits: BTreeSet<_> = out.manifest.splits.values().collect();
        assert_eq!(splits.len(), 1);
        assert!(out.warnings.contains(&SplitWarning::TooFewVideos { videos: 1 }));
        assert_eq!(out.warnings.iter().filter(|w| matches!(w, SplitWarning::EmptySplit { .. })).count(), 2);
    }

    #[test]
    fn equal_videos_hit_exact_shares() {
        let frames = pool(100, 10, Setup::HomeSmartphone, "h");
        for seed in 0..10 {
            let plan = StratificationPlan { seed, ..Default::default() };
            let out = split_dataset(&frames, &[], &plan).unwrap();
            assert!(out.warnings.is_empty());
            let report = validate_split(&out.manifest, &plan.split_shares);
            assert!(report.is_clean());
            let frames: Vec<usize> = report.deviations.iter().map(|d| d.frames).collect();
            assert_eq!(frames, vec![720, 80, 200]);
        }
    }

    #[test]
    fn moved_frame_is_an_atomicity_violation() {
        let frames = pool(20, 10, Setup::HomeSmartphone, "h");
        let plan = StratificationPlan::default();
        let mut manifest = split_dataset(&frames, &[], &plan).unwrap().manifest;
        assert!(validate_split(&manifest, &plan.split_shares).is_clean());
        let (frame_id, video_id) = manifest
            .frames
            .iter()
            .find(|f| manifest.splits[&f.frame_id] == Split::Train)
            .map(|f| (f.frame_id.clone(), f.video_id.clone()))
            .unwrap();
        manifest.splits.insert(frame_id, Split::Test);
        let report = validate_split(&manifest, &plan.split_shares);
        assert_eq!(report.atomicity_violations, vec![video_id]);
    }

    #[test]
    fn split_is_deterministic_bytes() {
        let frames = pool(30, 7, Setup::HomeSmartphone, "h");
        let plan = StratificationPlan { seed: 11, ..Default::default() };
        let a = split_dataset(&frames, &[], &plan).unwrap().manifest.to_json().unwrap();
        let b = split_dataset(&frames, &[], &plan).unwrap().manifest.to_json().unwrap();
        assert_eq!(a, b);
        assert!(split_dataset(&[], &[], &plan).is_err());
    }

    #[test]
    fn subsets_follow_train_shares() {
        let mut train = pool(4, 10, Setup::StandardizedHospital, "s");
        train.extend(pool(4, 10, Setup::HomeSmartphone, "h"));
        train.extend(pool(2, 10, Setup::LessStandardizedHospital, "l"));
        let subsets = build_training_subsets(&train, &[10, 100], 3).unwrap();
        let by_setup = |ids: &BTreeSet<String>| {
            Setup::ALL.map(|s| train.iter().filter(|f| f.setup == s && ids.contains(&f.frame_id)).count())
        };
        assert_eq!(by_setup(&subsets[&10]), [4, 4, 2]);
        assert_eq!(subsets[&100].len(), 100);
        assert!(build_training_subsets(&train, &[101], 3).is_err());
    }

    #[test]
    fn interrater_selection_follows_setup_shares() {
        let mut frames = pool(10, 20, Setup::StandardizedHospital, "s");
        frames.extend(pool(10, 20, Setup::HomeSmartphone, "h"));
        frames.extend(pool(10, 20, Setup::LessStandardizedHospital, "l"));
        let chosen = select_interrater(&frames, 100, &default_setup_shares(), 1).unwrap();
        assert_eq!(chosen.len(), 100);
        let count = |p: &str| chosen.iter().filter(|id| id.starts_with(p)).count();
        assert_eq!((count("s"), count("h"), count("l")), (40, 40, 20));
    }
}
