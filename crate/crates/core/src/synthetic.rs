//! Synthetic ground truth, raters and model predictions.
//!
//! Scenes contain one supine skeleton per frame. Raters add isotropic
//! Gaussian jitter; models additionally swap left/right pairs (inversions)
//! and relocate keypoints uniformly within the frame (misses).

use crate::error::{Error, Result};
use crate::model::{
    DatasetManifest, FrameMeta, KeypointId, Point, Pose, PoseAnnotation, PredictionSet, Setup, Split, VideoMeta,
    NUM_KEYPOINTS,
};
use crate::rng::{rng_for, stable_hash};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Frames per synthetic video.
pub const FRAMES_PER_VIDEO: usize = 10;

/// Annotator id carried by generated ground truth.
pub const GROUND_TRUTH_ID: &str = "gt";

const MAX_PLACEMENT_ATTEMPTS: usize = 500;
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// Per-axis standard deviation in pixels, indexed by keypoint ordinal − 1.
    pub per_keypoint_sigma: [f64; NUM_KEYPOINTS],
    pub inversion_rate: f64,
    pub miss_rate: f64,
    /// Keypoints whose left/right pair may be swapped; both members of a
    /// pair need not be listed. Defaults to every lateral pair.
    #[serde(default = "all_lateral")]
    pub invertible: Vec<KeypointId>,
    pub seed: u64,
}

fn all_lateral() -> Vec<KeypointId> {
    KeypointId::ALL.into_iter().filter(|k| k.mirror().is_some()).collect()
}

impl NoiseProfile {
    pub fn jitter(sigma: f64, seed: u64) -> Self {
        Self::per_keypoint([sigma; NUM_KEYPOINTS], seed)
    }

    pub fn per_keypoint(per_keypoint_sigma: [f64; NUM_KEYPOINTS], seed: u64) -> Self {
        NoiseProfile {
            per_keypoint_sigma,
            inversion_rate: 0.0,
            miss_rate: 0.0,
            invertible: all_lateral(),
            seed,
        }
    }

    pub fn with_inversions(mut self, rate: f64) -> Self {
        self.inversion_rate = rate;
        self
    }

    pub fn with_misses(mut self, rate: f64) -> Self {
        self.miss_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_keypoint_sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidInput("sigmas must be finite and non-negative".into()));
        }
        for (name, r) in [("inversion_rate", self.inversion_rate), ("miss_rate", self.miss_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidInput(format!("{name} {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Skeleton in body coordinates: unit = trunk length (upper chest to mid
/// pelvis), +y from chest toward pelvis, the infant's right side at −x.
fn body_pose(rng: &mut ChaCha8Rng) -> Pose {
    use KeypointId::*;
    let mut p = Pose::default();
    let turn = rng.random_range(-0.08..0.08);

    p[UpperChest] = Point::new(0.0, 0.0);
    p[RightShoulder] = Point::new(-0.32, 0.0);
    p[LeftShoulder] = Point::new(0.32, 0.0);
    p[UpperNeck] = Point::new(0.0, -0.18);
    p[Nose] = Point::new(turn, -0.40);
    p[HeadTop] = Point::new(0.5 * turn, -0.62);
    p[RightEar] = Point::new(-0.16 + 0.5 * turn, -0.42);
    p[LeftEar] = Point::new(0.16 + 0.5 * turn, -0.42);
    p[MidPelvis] = Point::new(0.0, 1.0);
    p[RightPelvis] = Point::new(-0.18, 1.0);
    p[LeftPelvis] = Point::new(0.18, 1.0);

    // Limb chains: (root, middle, end, proximal length, distal length,
    // proximal angle range, maximum bend). Angles are measured from +y,
    // positive turning away from the midline.
    let chains = [
        (RightShoulder, RightElbow, RightWrist, 0.38, 0.32, (0.1 * PI, 0.9 * PI), 0.8 * PI, -1.0),
        (LeftShoulder, LeftElbow, LeftWrist, 0.38, 0.32, (0.1 * PI, 0.9 * PI), 0.8 * PI, 1.0),
        (RightPelvis, RightKnee, RightAnkle, 0.42, 0.38, (-0.1 * PI, 0.5 * PI), 0.7 * PI, -1.0),
        (LeftPelvis, LeftKnee, LeftAnkle, 0.42, 0.38, (-0.1 * PI, 0.5 * PI), 0.7 * PI, 1.0),
    ];
    for (root, mid, end, l1, l2, (lo, hi), max_bend, side) in chains {
        let a1: f64 = rng.random_range(lo..hi);
        let bend: f64 = rng.random_range(-max_bend..max_bend);
        let dir = |a: f64| Point::new(side * a.sin(), a.cos());
        let d1 = dir(a1);
        let d2 = dir(a1 + bend);
        p[mid] = Point::new(p[root].x + l1 * d1.x, p[root].y + l1 * d1.y);
        p[end] = Point::new(p[mid].x + l2 * d2.x, p[mid].y + l2 * d2.y);
    }
    p
}

/// Places a random skeleton inside `width × height`, with trunk length
/// between a quarter and a half of the diagonal.
fn place_skeleton(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Result<Pose> {
    let (w, h) = (width as f64, height as f64);
    let diagonal = w.hypot(h);
    let trunk_lo = 0.25 * diagonal;
    if trunk_lo < 10.0 {
        return Err(Error::InvalidInput(format!("{width}×{height} is too small to place a skeleton")));
    }
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let body = body_pose(rng);
        let angle: f64 = rng.random_range(-PI..PI);
        let (sin, cos) = angle.sin_cos();
        let rotated = body.map(|_, p| Point::new(cos * p.x - sin * p.y, sin * p.x + cos * p.y));
        let (min_x, max_x, min_y, max_y) = rotated.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), (_, p)| (a.min(p.x), b.max(p.x), c.min(p.y), d.max(p.y)),
        );
        // One pixel of margin on each side absorbs rounding.
        let fit = ((w - 2.0) / (max_x - min_x)).min((h - 2.0) / (max_y - min_y));
        let trunk_hi = fit.min(0.5 * diagonal);
        if trunk_hi < trunk_lo {
            continue;
        }
        let trunk = rng.random_range(trunk_lo..=trunk_hi);
        let tx = rng.random_range(1.0 - min_x * trunk..=w - 1.0 - max_x * trunk);
        let ty = rng.random_range(1.0 - min_y * trunk..=h - 1.0 - max_y * trunk);
        return Ok(rotated.map(|_, p| Point::new(p.x * trunk + tx, p.y * trunk + ty)));
    }
    Err(Error::InvalidInput(format!(
        "could not fit a skeleton into {width}×{height} after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )))
}

fn setup_for_video(index: usize) -> Setup {
    // 40 / 40 / 20 over every five videos.
    match index % 5 {
        0 | 2 => Setup::StandardizedHospital,
        1 | 3 => Setup::HomeSmartphone,
        _ => Setup::LessStandardizedHospital,
    }
}

pub fn frame_id(index: usize) -> String {
    format!("f{index:06}")
}

/// Generates `n_frames` frames with one ground-truth pose each. Frames are
/// grouped into videos of ten, all assigned to the test split.
pub fn gen_scene(n_frames: usize, width: u32, height: u32, seed: u64) -> Result<(DatasetManifest, Vec<PoseAnnotation>)> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("frame dimensions must be positive".into()));
    }
    let n_videos = n_frames.div_ceil(FRAMES_PER_VIDEO);
    let videos: Vec<VideoMeta> = (0..n_videos)
        .map(|v| VideoMeta {
            video_id: format!("v{v:05}"),
            site: "synthetic".into(),
            country: String::new(),
            setup: setup_for_video(v),
        })
        .collect();
    let mut frames = Vec::with_capacity(n_frames);
    let mut poses = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let video = &videos[i / FRAMES_PER_VIDEO];
        let id = frame_id(i);
        let mut rng = rng_for(seed, &[i as u64]);
        poses.push(PoseAnnotation {
            frame_id: id.clone(),
            annotator_id: GROUND_TRUTH_ID.into(),
            points: place_skeleton(&mut rng, width, height)?,
        });
        frames.push(FrameMeta::new(id, video.video_id.clone(), width, height, video.setup));
    }
    let splits = frames.iter().map(|f| (f.frame_id.clone(), Split::Test)).collect();
    Ok((
        DatasetManifest { videos, frames, splits, interrater_frames: Default::default() },
        poses,
    ))
}

/// Adds jitter to one point, resampling until it lands inside the frame.
fn jitter_point(rng: &mut ChaCha8Rng, p: Point, sigma: f64, frame: &FrameMeta) -> Point {
    if sigma == 0.0 {
        return p;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for _ in 0..MAX_RESAMPLES {
        let q = Point::new(p.x + normal.sample(rng), p.y + normal.sample(rng));
        if frame.contains(q) {
            return q;
        }
    }
    p
}

fn jitter_pose(rng: &mut ChaCha8Rng, pose: &Pose, profile: &NoiseProfile, frame: &FrameMeta) -> Pose {
    pose.map(|k, p| jitter_point(rng, p, profile.per_keypoint_sigma[k.index()], frame))
}

/// Simulates one rater's annotation of a frame. Only the jitter part of the
/// profile is used.
pub fn perturb_rater(gt: &PoseAnnotation, frame: &FrameMeta, profile: &NoiseProfile, annotator_id: &str) -> Result<PoseAnnotation> {
    profile.validate()?;
    if gt.frame_id != frame.frame_id {
        return Err(Error::FrameMismatch { pose: gt.frame_id.clone(), frame: frame.frame_id.clone() });
    }
    let mut rng = rng_for(profile.seed, &[stable_hash(&gt.frame_id), stable_hash(annotator_id)]);
    Ok(PoseAnnotation {
        frame_id: gt.frame_id.clone(),
        annotator_id: annotator_id.into(),
        points: jitter_pose(&mut rng, &gt.points, profile, frame),
    })
}

/// Simulates a model: jitter, then left/right inversions, then misses.
pub fn perturb_model(
    gts: &[PoseAnnotation],
    manifest: &DatasetManifest,
    profile: &NoiseProfile,
    model_id: &str,
) -> Result<PredictionSet> {
    profile.validate()?;
    let frames = manifest.frame_map();
    let mut set = PredictionSet::new(model_id);
    let pairs: Vec<(KeypointId, KeypointId)> = {
        let mut pairs: Vec<_> = profile
            .invertible
            .iter()
            .filter_map(|&k| k.mirror().map(|m| if k < m { (k, m) } else { (m, k) }))
            .collect();
        pairs.sort();
        pairs.dedup();
        pairs
    };
    for gt in gts {
        let frame = frames
            .get(gt.frame_id.as_str())
            .ok_or_else(|| Error::UnknownFrame(gt.frame_id.clone()))?;
        let mut rng = rng_for(profile.seed, &[stable_hash(&gt.frame_id), stable_hash(model_id)]);
        let mut pose = jitter_pose(&mut rng, &gt.points, profile, frame);
        for &(a, b) in &pairs {
            if rng.random_bool(profile.inversion_rate) {
                let tmp = pose[a];
                pose[a] = pose[b];
                pose[b] = tmp;
            }
        }
        for k in KeypointId::ALL {
            if rng.random_bool(profile.miss_rate) {
                pose[k] = Point::new(
                    rng.random_range(0.0..=frame.width as f64),
                    rng.random_range(0.0..=frame.height as f64),
                );
            }
        }
        set.poses.insert(gt.frame_id.clone(), pose);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_pose;

    #[test]
    fn empty_scene() {
        let (m, poses) = gen_scene(0, 800, 600, 1).unwrap();
        assert!(m.frames.is_empty() && poses.is_empty() && m.videos.is_empty());
    }

    #[test]
    fn scenes_are_deterministic_and_valid() {
        let a = gen_scene(50, 800, 600, 9).unwrap();
        assert_eq!(a, gen_scene(50, 800, 600, 9).unwrap());
        assert_ne!(a.1, gen_scene(50, 800, 600, 10).unwrap().1);
        a.0.validate().unwrap();
        for (pose, frame) in a.1.iter().zip(&a.0.frames) {
            assert!(validate_pose(pose, frame).unwrap().is_empty());
            let trunk = pose.points[KeypointId::UpperChest].distance(pose.points[KeypointId::MidPelvis]);
            assert!((250.0 - 1e-9..=500.0 + 1e-9).contains(&trunk), "trunk {trunk}");
        }
    }

    #[test]
    fn anatomical_midpoints_hold() {
        let (_, poses) = gen_scene(20, 640, 480, 3).unwrap();
        for p in poses.iter().map(|a| &a.points) {
            let mid = |a: KeypointId, b: KeypointId| Point::new((p[a].x + p[b].x) / 2.0, (p[a].y + p[b].y) / 2.0);
            let chest = mid(KeypointId::RightShoulder, KeypointId::LeftShoulder);
            assert!(chest.distance(p[KeypointId::UpperChest]) < 1e-9);
            let pelvis = mid(KeypointId::RightPelvis, KeypointId::LeftPelvis);
            assert!(pelvis.distance(p[KeypointId::MidPelvis]) < 1e-9);
        }
    }

    #[test]
    fn tiny_frames_are_rejected() {
        assert!(gen_scene(1, 20, 10, 0).is_err());
        assert!(gen_scene(1, 0, 10, 0).is_err());
    }

    #[test]
    fn zero_sigma_rater_is_identity() {
        let (m, poses) = gen_scene(5, 800, 600, 2).unwrap();
        let profile = NoiseProfile::jitter(0.0, 4);
        for (gt, frame) in poses.iter().zip(&m.frames) {
            let r = perturb_rater(gt, frame, &profile, "r1").unwrap();
            assert_eq!(r.points, gt.points);
            assert_eq!(r.annotator_id, "r1");
        }
    }

    #[test]
    fn rater_noise_is_seeded_per_rater() {
        let (m, poses) = gen_scene(1, 800, 600, 2).unwrap();
        let profile = NoiseProfile::jitter(3.0, 4);
        let a = perturb_rater(&poses[0], &m.frames[0], &profile, "r1").unwrap();
        assert_eq!(a, perturb_rater(&poses[0], &m.frames[0], &profile, "r1").unwrap());
        assert_ne!(a.points, perturb_rater(&poses[0], &m.frames[0], &profile, "r2").unwrap().points);
        assert!(validate_pose(&a, &m.frames[0]).unwrap().is_empty());
    }

    #[test]
    fn noiseless_model_equals_truth() {
        let (m, poses) = gen_scene(10, 800, 600, 2).unwrap();
        let preds = perturb_model(&poses, &m, &NoiseProfile::jitter(0.0, 1), "m").unwrap();
        for gt in &poses {
            assert_eq!(preds.poses[&gt.frame_id], gt.points);
        }
    }

    #[test]
    fn forced_wrist_inversion_swaps_wrists() {
        let (m, poses) = gen_scene(10, 800, 600, 2).unwrap();
        let mut profile = NoiseProfile::jitter(0.0, 1).with_inversions(1.0);
        profile.invertible = vec![KeypointId::RightWrist];
        let preds = perturb_model(&poses, &m, &profile, "m").unwrap();
        for gt in &poses {
            let p = &preds.poses[&gt.frame_id];
            let sep = gt.points[KeypointId::RightWrist].distance(gt.points[KeypointId::LeftWrist]);
            assert_eq!(p[KeypointId::RightWrist].distance(gt.points[KeypointId::RightWrist]), sep);
            assert_eq!(p[KeypointId::LeftWrist].distance(gt.points[KeypointId::LeftWrist]), sep);
            assert_eq!(p[KeypointId::RightElbow], gt.points[KeypointId::RightElbow]);
        }
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        assert!(NoiseProfile::jitter(-1.0, 0).validate().is_err());
        assert!(NoiseProfile::jitter(1.0, 0).with_misses(1.5).validate().is_err());
    }
}
