//! Domain types: the 19-keypoint infant skeleton, frames, poses and the
//! dataset manifest.
//!
//! Coordinates are image pixels with the origin in the top-left corner, x to
//! the right and y downward. Frame bounds are inclusive on all edges.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

/// Number of keypoints in the skeleton.
pub const NUM_KEYPOINTS: usize = 19;

/// Body keypoints, numbered 1 to 19 in annotation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum KeypointId {
    HeadTop = 1,
    Nose = 2,
    RightEar = 3,
    LeftEar = 4,
    UpperNeck = 5,
    RightShoulder = 6,
    RightElbow = 7,
    RightWrist = 8,
    UpperChest = 9,
    LeftShoulder = 10,
    LeftElbow = 11,
    LeftWrist = 12,
    MidPelvis = 13,
    RightPelvis = 14,
    RightKnee = 15,
    RightAnkle = 16,
    LeftPelvis = 17,
    LeftKnee = 18,
    LeftAnkle = 19,
}

impl KeypointId {
    /// All keypoints in ordinal order.
    pub const ALL: [KeypointId; NUM_KEYPOINTS] = [
        KeypointId::HeadTop,
        KeypointId::Nose,
        KeypointId::RightEar,
        KeypointId::LeftEar,
        KeypointId::UpperNeck,
        KeypointId::RightShoulder,
        KeypointId::RightElbow,
        KeypointId::RightWrist,
        KeypointId::UpperChest,
        KeypointId::LeftShoulder,
        KeypointId::LeftElbow,
        KeypointId::LeftWrist,
        KeypointId::MidPelvis,
        KeypointId::RightPelvis,
        KeypointId::RightKnee,
        KeypointId::RightAnkle,
        KeypointId::LeftPelvis,
        KeypointId::LeftKnee,
        KeypointId::LeftAnkle,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    /// Zero-based position, for indexing per-keypoint arrays.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_ordinal(ordinal: u8) -> Option<Self> {
        match ordinal {
            1..=19 => Some(Self::ALL[ordinal as usize - 1]),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KeypointId::HeadTop => "head_top",
            KeypointId::Nose => "nose",
            KeypointId::RightEar => "right_ear",
            KeypointId::LeftEar => "left_ear",
            KeypointId::UpperNeck => "upper_neck",
            KeypointId::RightShoulder => "right_shoulder",
            KeypointId::RightElbow => "right_elbow",
            KeypointId::RightWrist => "right_wrist",
            KeypointId::UpperChest => "upper_chest",
            KeypointId::LeftShoulder => "left_shoulder",
            KeypointId::LeftElbow => "left_elbow",
            KeypointId::LeftWrist => "left_wrist",
            KeypointId::MidPelvis => "mid_pelvis",
            KeypointId::RightPelvis => "right_pelvis",
            KeypointId::RightKnee => "right_knee",
            KeypointId::RightAnkle => "right_ankle",
            KeypointId::LeftPelvis => "left_pelvis",
            KeypointId::LeftKnee => "left_knee",
            KeypointId::LeftAnkle => "left_ankle",
        }
    }

    /// Human-readable label as used in report tables ("Right shoulder").
    pub fn label(self) -> &'static str {
        match self {
            KeypointId::HeadTop => "Head top",
            KeypointId::Nose => "Nose",
            KeypointId::RightEar => "Right ear",
            KeypointId::LeftEar => "Left ear",
            KeypointId::UpperNeck => "Upper neck",
            KeypointId::RightShoulder => "Right shoulder",
            KeypointId::RightElbow => "Right elbow",
            KeypointId::RightWrist => "Right wrist",
            KeypointId::UpperChest => "Upper chest",
            KeypointId::LeftShoulder => "Left shoulder",
            KeypointId::LeftElbow => "Left elbow",
            KeypointId::LeftWrist => "Left wrist",
            KeypointId::MidPelvis => "Mid pelvis",
            KeypointId::RightPelvis => "Right pelvis",
            KeypointId::RightKnee => "Right knee",
            KeypointId::RightAnkle => "Right ankle",
            KeypointId::LeftPelvis => "Left pelvis",
            KeypointId::LeftKnee => "Left knee",
            KeypointId::LeftAnkle => "Left ankle",
        }
    }

    /// The contralateral keypoint for left/right pairs; `None` on the midline.
    pub fn mirror(self) -> Option<Self> {
        use KeypointId::*;
        Some(match self {
            RightEar => LeftEar,
            LeftEar => RightEar,
            RightShoulder => LeftShoulder,
            LeftShoulder => RightShoulder,
            RightElbow => LeftElbow,
            LeftElbow => RightElbow,
            RightWrist => LeftWrist,
            LeftWrist => RightWrist,
            RightPelvis => LeftPelvis,
            LeftPelvis => RightPelvis,
            RightKnee => LeftKnee,
            LeftKnee => RightKnee,
            RightAnkle => LeftAnkle,
            LeftAnkle => RightAnkle,
            HeadTop | Nose | UpperNeck | UpperChest | MidPelvis => return None,
        })
    }
}

impl fmt::Display for KeypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KeypointId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown keypoint name {s:?}")))
    }
}

/// An image position in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A complete skeleton: one point per keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose(pub [Point; NUM_KEYPOINTS]);

impl Pose {
    pub fn iter(&self) -> impl Iterator<Item = (KeypointId, Point)> + '_ {
        KeypointId::ALL.iter().map(move |&k| (k, self[k]))
    }

    pub fn map(&self, mut f: impl FnMut(KeypointId, Point) -> Point) -> Pose {
        let mut out = *self;
        for k in KeypointId::ALL {
            out[k] = f(k, self[k]);
        }
        out
    }

    /// Builds a pose from an ordinal-indexed partial map, naming every gap.
    pub fn from_partial(points: &[Option<Point>; NUM_KEYPOINTS]) -> std::result::Result<Pose, Vec<KeypointId>> {
        let missing: Vec<_> = KeypointId::ALL
            .iter()
            .copied()
            .filter(|k| points[k.index()].is_none())
            .collect();
        if !missing.is_empty() {
            return Err(missing);
        }
        let mut pose = Pose::default();
        for k in KeypointId::ALL {
            pose[k] = points[k.index()].unwrap();
        }
        Ok(pose)
    }
}

impl Index<KeypointId> for Pose {
    type Output = Point;
    fn index(&self, k: KeypointId) -> &Point {
        &self.0[k.index()]
    }
}

impl IndexMut<KeypointId> for Pose {
    fn index_mut(&mut self, k: KeypointId) -> &mut Point {
        &mut self.0[k.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    StandardizedHospital,
    HomeSmartphone,
    LessStandardizedHospital,
}

impl Setup {
    pub const ALL: [Setup; 3] = [
        Setup::StandardizedHospital,
        Setup::HomeSmartphone,
        Setup::LessStandardizedHospital,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChallengeCriterion {
    LegsTowardUpperBody,
    Overlap,
    Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseClass {
    Random,
    Challenging(ChallengeCriterion),
}

impl PoseClass {
    pub fn is_challenging(self) -> bool {
        matches!(self, PoseClass::Challenging(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_id: String,
    pub video_id: String,
    pub width: u32,
    pub height: u32,
    pub setup: Setup,
    pub pose_class: PoseClass,
    /// Location of the frame image; never read by the metric code.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

impl FrameMeta {
    pub fn new(frame_id: impl Into<String>, video_id: impl Into<String>, width: u32, height: u32, setup: Setup) -> Self {
        FrameMeta {
            frame_id: frame_id.into(),
            video_id: video_id.into(),
            width,
            height,
            setup,
            pose_class: PoseClass::Random,
            image_path: None,
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.is_finite() && (0.0..=self.width as f64).contains(&p.x) && (0.0..=self.height as f64).contains(&p.y)
    }
}

/// One rater's complete annotation of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseAnnotation {
    pub frame_id: String,
    pub annotator_id: String,
    pub points: Pose,
}

/// One model's predictions plus declared (not measured) complexity figures.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_id: String,
    pub poses: BTreeMap<String, Pose>,
    #[serde(default)]
    pub declared_params: Option<u64>,
    #[serde(default)]
    pub declared_flops: Option<u64>,
    #[serde(default)]
    pub declared_resolution: Option<(u32, u32)>,
}

impl PredictionSet {
    pub fn new(model_id: impl Into<String>) -> Self {
        PredictionSet {
            model_id: model_id.into(),
            ..Default::default()
        }
    }

    pub fn check_against(&self, manifest: &DatasetManifest) -> Result<()> {
        let frames = manifest.frame_map();
        for (frame_id, pose) in &self.poses {
            let frame = frames
                .get(frame_id.as_str())
                .ok_or_else(|| Error::UnknownFrame(frame_id.clone()))?;
            for (k, p) in pose.iter() {
                if !p.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "model {}: non-finite prediction for {k} in frame {}",
                        self.model_id, frame.frame_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    #[serde(default)]
    pub site: String,
    #[serde(default)]
    pub country: String,
    pub setup: Setup,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub videos: Vec<VideoMeta>,
    pub frames: Vec<FrameMeta>,
    #[serde(default)]
    pub splits: BTreeMap<String, Split>,
    #[serde(default, rename = "interrater", alias = "interrater_frames")]
    pub interrater_frames: BTreeSet<String>,
}

impl DatasetManifest {
    pub fn frame_map(&self) -> HashMap<&str, &FrameMeta> {
        self.frames.iter().map(|f| (f.frame_id.as_str(), f)).collect()
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameMeta> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = &FrameMeta> {
        self.frames
            .iter()
            .filter(move |f| self.splits.get(&f.frame_id) == Some(&split))
    }

    /// Checks the structural invariants of a manifest.
    pub fn validate(&self) -> Result<()> {
        let videos: BTreeSet<&str> = self.videos.iter().map(|v| v.video_id.as_str()).collect();
        if videos.len() != self.videos.len() {
            return Err(Error::InvalidManifest("duplicate video_id".into()));
        }
        let mut seen = BTreeSet::new();
        for f in &self.frames {
            if f.video_id.is_empty() {
                return Err(Error::InvalidManifest(format!("frame {} has an empty video_id", f.frame_id)));
            }
            if f.width == 0 || f.height == 0 {
                return Err(Error::InvalidManifest(format!("frame {} has zero size", f.frame_id)));
            }
            if !seen.insert(f.frame_id.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate frame_id {}", f.frame_id)));
            }
            if !videos.contains(f.video_id.as_str()) {
                return Err(Error::InvalidManifest(format!(
                    "frame {} references unknown video {}",
                    f.frame_id, f.video_id
                )));
            }
            if !self.splits.contains_key(&f.frame_id) {
                return Err(Error::InvalidManifest(format!("frame {} has no split", f.frame_id)));
            }
        }
        if let Some(extra) = self.splits.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(Error::InvalidManifest(format!("split entry for unknown frame {extra}")));
        }
        if let Some(extra) = self.interrater_frames.iter().find(|k| !seen.contains(k.as_str())) {
            return Err(Error::InvalidManifest(format!("inter-rater frame {extra} is not in the manifest")));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_slice(bytes)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A single invariant violation found by [`validate_pose`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PoseViolation {
    OutOfBounds { keypoint: KeypointId, x: f64, y: f64 },
    NonFinite { keypoint: KeypointId },
}

/// Lists every violated invariant of `pose` on `frame`; empty means valid.
pub fn validate_pose(pose: &PoseAnnotation, frame: &FrameMeta) -> Result<Vec<PoseViolation>> {
    if pose.frame_id != frame.frame_id {
        return Err(Error::FrameMismatch {
            pose: pose.frame_id.clone(),
            frame: frame.frame_id.clone(),
        });
    }
    Ok(pose
        .points
        .iter()
        .filter_map(|(keypoint, p)| {
            if !p.is_finite() {
                Some(PoseViolation::NonFinite { keypoint })
            } else if !frame.contains(p) {
                Some(PoseViolation::OutOfBounds { keypoint, x: p.x, y: p.y })
            } else {
                None
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> FrameMeta {
        FrameMeta::new("f1", "v1", 800, 600, Setup::HomeSmartphone)
    }

    fn pose_at(p: Point) -> PoseAnnotation {
        PoseAnnotation {
            frame_id: "f1".into(),
            annotator_id: "a".into(),
            points: Pose([p; NUM_KEYPOINTS]),
        }
    }

    #[test]
    fn ordinals_and_names_are_bijective() {
        for (i, k) in KeypointId::ALL.iter().enumerate() {
            assert_eq!(k.ordinal() as usize, i + 1);
            assert_eq!(KeypointId::from_ordinal(k.ordinal()), Some(*k));
            assert_eq!(k.name().parse::<KeypointId>().unwrap(), *k);
        }
        let names: BTreeSet<_> = KeypointId::ALL.iter().map(|k| k.name()).collect();
        assert_eq!(names.len(), NUM_KEYPOINTS);
        assert_eq!(KeypointId::from_ordinal(0), None);
        assert_eq!(KeypointId::from_ordinal(20), None);
        assert!("elbow".parse::<KeypointId>().is_err());
    }

    #[test]
    fn mirror_is_an_involution_on_pairs() {
        let mut paired = 0;
        for k in KeypointId::ALL {
            if let Some(m) = k.mirror() {
                paired += 1;
                assert_ne!(m, k);
                assert_eq!(m.mirror(), Some(k));
            }
        }
        assert_eq!(paired, 14);
    }

    #[test]
    fn diagonal_is_recomputed_from_dimensions() {
        let mut f = frame();
        assert_eq!(f.diagonal(), 1000.0);
        f.width = 3;
        f.height = 4;
        assert_eq!(f.diagonal(), 5.0);
        for (w, h) in [(1920u32, 1080u32), (1, 1), (4096, 2160)] {
            let f = FrameMeta::new("x", "v", w, h, Setup::HomeSmartphone);
            let d = f.diagonal();
            assert!((d * d - (w as f64 * w as f64 + h as f64 * h as f64)).abs() <= 1e-6);
        }
    }

    #[test]
    fn validate_pose_reports_bounds() {
        let f = frame();
        assert!(validate_pose(&pose_at(Point::new(10.0, 10.0)), &f).unwrap().is_empty());
        // Edges are inclusive.
        assert!(validate_pose(&pose_at(Point::new(800.0, 600.0)), &f).unwrap().is_empty());
        assert!(validate_pose(&pose_at(Point::new(0.0, 0.0)), &f).unwrap().is_empty());

        let mut p = pose_at(Point::new(10.0, 10.0));
        p.points[KeypointId::LeftKnee] = Point::new(-1.0, 5.0);
        let report = validate_pose(&p, &f).unwrap();
        assert_eq!(
            report,
            vec![PoseViolation::OutOfBounds { keypoint: KeypointId::LeftKnee, x: -1.0, y: 5.0 }]
        );

        p.points[KeypointId::Nose] = Point::new(f64::NAN, 5.0);
        assert_eq!(validate_pose(&p, &f).unwrap().len(), 2);
    }

    #[test]
    fn validate_pose_rejects_other_frames() {
        let mut p = pose_at(Point::new(1.0, 1.0));
        p.frame_id = "f2".into();
        assert!(matches!(validate_pose(&p, &frame()), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn from_partial_names_the_gaps() {
        let mut pts = [Some(Point::new(1.0, 1.0)); NUM_KEYPOINTS];
        pts[KeypointId::RightAnkle.index()] = None;
        assert_eq!(Pose::from_partial(&pts).unwrap_err(), vec![KeypointId::RightAnkle]);
        pts[KeypointId::RightAnkle.index()] = Some(Point::new(2.0, 3.0));
        assert_eq!(Pose::from_partial(&pts).unwrap()[KeypointId::RightAnkle], Point::new(2.0, 3.0));
    }

    #[test]
    fn manifest_validation() {
        let mut m = DatasetManifest {
            videos: vec![VideoMeta {
                video_id: "v1".into(),
                site: "s".into(),
                country: "NO".into(),
                setup: Setup::HomeSmartphone,
            }],
            frames: vec![frame()],
            splits: [("f1".to_string(), Split::Test)].into(),
            interrater_frames: ["f1".to_string()].into(),
        };
        m.validate().unwrap();
        let json = m.to_json().unwrap();
        assert!(json.contains("\"interrater\""));
        assert_eq!(DatasetManifest::from_json(json.as_bytes()).unwrap(), m);

        m.interrater_frames.insert("nope".into());
        assert!(m.validate().is_err());
        m.interrater_frames.clear();
        m.splits.clear();
        assert!(m.validate().is_err());
    }
}
