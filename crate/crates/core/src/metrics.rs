//! Precision metrics for one model against single-rater ground truth.
//!
//! All distances are normalized by the frame diagonal unless stated
//! otherwise; millimeter figures assume a diagonal of exactly one meter.
//! Per-frame errors are always reduced in frame_id order so results are
//! bit-identical regardless of input order.

use crate::agreement::HumanBaseline;
use crate::error::{Error, Result};
use crate::model::{DatasetManifest, FrameMeta, KeypointId, Point, Pose, PoseAnnotation, PredictionSet, NUM_KEYPOINTS};
use crate::stats::{median, OrderStats};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Millimeters per unit of normalized distance.
pub const MM_PER_DIAGONAL: f64 = 1000.0;

/// Default PCK_h thresholds as fractions of the head length.
pub const DEFAULT_TAUS: [f64; 4] = [1.0, 0.5, 0.3, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub model_id: String,
    pub frame_id: String,
    pub keypoint: KeypointId,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckConfig {
    pub taus: Vec<f64>,
}

impl Default for PckConfig {
    fn default() -> Self {
        PckConfig { taus: DEFAULT_TAUS.to_vec() }
    }
}

impl PckConfig {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() || taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidInput(format!("thresholds must be positive, got {taus:?}")));
        }
        Ok(PckConfig { taus })
    }
}

/// A value per keypoint plus their unweighted mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointScores {
    pub per_keypoint: [f64; NUM_KEYPOINTS],
    pub overall: f64,
}

impl KeypointScores {
    pub fn from_per_keypoint(per_keypoint: [f64; NUM_KEYPOINTS]) -> Self {
        let overall = per_keypoint.iter().sum::<f64>() / NUM_KEYPOINTS as f64;
        KeypointScores { per_keypoint, overall }
    }

    pub fn get(&self, k: KeypointId) -> f64 {
        self.per_keypoint[k.index()]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_per_keypoint(self.per_keypoint.map(|v| v * factor))
    }
}

pub fn normalized_distance(pred: Point, gt: Point, frame: &FrameMeta) -> Result<f64> {
    let diagonal = frame.diagonal();
    if !(diagonal > 0.0) {
        return Err(Error::Degenerate(format!("frame {} has a zero diagonal", frame.frame_id)));
    }
    Ok(pred.distance(gt) / diagonal)
}

/// Distance from head top to upper neck in pixels.
pub fn head_length(gt: &Pose) -> Result<f64> {
    let l = gt[KeypointId::HeadTop].distance(gt[KeypointId::UpperNeck]);
    if l > 0.0 {
        Ok(l)
    } else {
        Err(Error::Degenerate("head top and upper neck coincide".into()))
    }
}

/// Per-frame errors of one model, in canonical frame order.
struct FrameErrors<'a> {
    frame_id: &'a str,
    normalized: [f64; NUM_KEYPOINTS],
    pixels: [f64; NUM_KEYPOINTS],
    head_length: Option<f64>,
}

fn frame_errors<'a>(
    preds: &PredictionSet,
    gts: &'a [PoseAnnotation],
    manifest: &DatasetManifest,
) -> Result<Vec<FrameErrors<'a>>> {
    let frames = manifest.frame_map();
    let mut by_frame: BTreeMap<&str, &PoseAnnotation> = BTreeMap::new();
    for gt in gts {
        if by_frame.insert(gt.frame_id.as_str(), gt).is_some() {
            return Err(Error::InvalidInput(format!("more than one ground truth for frame {}", gt.frame_id)));
        }
    }
    by_frame
        .into_iter()
        .map(|(frame_id, gt)| {
            let frame = frames.get(frame_id).ok_or_else(|| Error::UnknownFrame(frame_id.to_string()))?;
            let pred = preds
                .poses
                .get(frame_id)
                .ok_or_else(|| Error::MissingPrediction { frame_id: frame_id.to_string() })?;
            let mut normalized = [0.0; NUM_KEYPOINTS];
            let mut pixels = [0.0; NUM_KEYPOINTS];
            for k in KeypointId::ALL {
                pixels[k.index()] = pred[k].distance(gt.points[k]);
                normalized[k.index()] = normalized_distance(pred[k], gt.points[k], frame)?;
            }
            Ok(FrameErrors {
                frame_id,
                normalized,
                pixels,
                head_length: head_length(&gt.points).ok(),
            })
        })
        .collect()
}

/// Every per-keypoint error, ordered by frame_id then keypoint ordinal.
pub fn error_samples(preds: &PredictionSet, gts: &[PoseAnnotation], manifest: &DatasetManifest) -> Result<Vec<ErrorSample>> {
    Ok(frame_errors(preds, gts, manifest)?
        .iter()
        .flat_map(|f| {
            KeypointId::ALL.iter().map(|&k| ErrorSample {
                model_id: preds.model_id.clone(),
                frame_id: f.frame_id.to_string(),
                keypoint: k,
                d: f.normalized[k.index()],
            })
        })
        .collect())
}

fn require_frames(errors: &[FrameErrors<'_>]) -> Result<()> {
    if errors.is_empty() {
        Err(Error::EmptySample)
    } else {
        Ok(())
    }
}

fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Mean normalized error per keypoint.
pub fn mean_error(preds: &PredictionSet, gts: &[PoseAnnotation], manifest: &DatasetManifest) -> Result<KeypointScores> {
    let errors = frame_errors(preds, gts, manifest)?;
    require_frames(&errors)?;
    let mut sums = [0.0; NUM_KEYPOINTS];
    for f in &errors {
        for (s, d) in sums.iter_mut().zip(f.normalized) {
            *s += d;
        }
    }
    let s = errors.len() as f64;
    Ok(KeypointScores::from_per_keypoint(sums.map(|v| v / s)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauScores {
    pub tau: f64,
    pub scores: KeypointScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckhResult {
    pub by_tau: Vec<TauScores>,
    /// Frames left out because their ground-truth head length is zero.
    pub degenerate_frames: Vec<String>,
}

impl PckhResult {
    pub fn at(&self, tau: f64) -> Option<&KeypointScores> {
        self.by_tau.iter().find(|t| t.tau == tau).map(|t| &t.scores)
    }
}

/// Percentage of predictions within `tau` head lengths (inclusive).
pub fn pckh(
    preds: &PredictionSet,
    gts: &[PoseAnnotation],
    manifest: &DatasetManifest,
    config: &PckConfig,
) -> Result<PckhResult> {
    let errors = frame_errors(preds, gts, manifest)?;
    require_frames(&errors)?;
    let (valid, degenerate): (Vec<_>, Vec<_>) = errors.iter().partition(|f| f.head_length.is_some());
    if valid.is_empty() {
        return Err(Error::Degenerate("every frame has a zero head length".into()));
    }
    let by_tau = config
        .taus
        .iter()
        .map(|&tau| {
            let mut hits = [0usize; NUM_KEYPOINTS];
            for f in &valid {
                let limit = tau * f.head_length.expect("partitioned on head length");
                for (h, px) in hits.iter_mut().zip(f.pixels) {
                    *h += usize::from(px <= limit);
                }
            }
            TauScores {
                tau,
                scores: KeypointScores::from_per_keypoint(hits.map(|h| percent(h, valid.len()))),
            }
        })
        .collect();
    Ok(PckhResult {
        by_tau,
        degenerate_frames: degenerate.iter().map(|f| f.frame_id.to_string()).collect(),
    })
}

/// Percentage of predictions within the human 95th-percentile spread of
/// their keypoint (inclusive).
pub fn pck_human(
    preds: &PredictionSet,
    gts: &[PoseAnnotation],
    manifest: &DatasetManifest,
    baseline: &HumanBaseline,
) -> Result<KeypointScores> {
    let errors = frame_errors(preds, gts, manifest)?;
    require_frames(&errors)?;
    let mut hits = [0usize; NUM_KEYPOINTS];
    for f in &errors {
        for k in KeypointId::ALL {
            hits[k.index()] += usize::from(f.normalized[k.index()] <= baseline.get(k).h95);
        }
    }
    Ok(KeypointScores::from_per_keypoint(hits.map(|h| percent(h, errors.len()))))
}

/// Order statistics of the normalized error of each keypoint.
pub fn error_distribution(
    preds: &PredictionSet,
    gts: &[PoseAnnotation],
    manifest: &DatasetManifest,
) -> Result<Vec<(KeypointId, OrderStats)>> {
    let errors = frame_errors(preds, gts, manifest)?;
    require_frames(&errors)?;
    KeypointId::ALL
        .iter()
        .map(|&k| {
            let sample: Vec<f64> = errors.iter().map(|f| f.normalized[k.index()]).collect();
            Ok((k, OrderStats::of(&sample)?))
        })
        .collect()
}

/// Sliding per-coordinate median. Near the ends the window shrinks
/// symmetrically so it stays centred on each sample.
pub fn median_filter(trajectory: &[Point], window: usize) -> Result<Vec<Point>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!("median window must be odd and positive, got {window}")));
    }
    if trajectory.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = trajectory.len();
    (0..n)
        .map(|i| {
            let half = (window / 2).min(i).min(n - 1 - i);
            let span = &trajectory[i - half..=i + half];
            let xs: Vec<f64> = span.iter().map(|p| p.x).collect();
            let ys: Vec<f64> = span.iter().map(|p| p.y).collect();
            Ok(Point::new(median(&xs)?, median(&ys)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointMetrics {
    pub me: f64,
    pub me_mm: f64,
    pub pckh: Vec<(f64, f64)>,
    #[serde(default)]
    pub pck_human95: Option<f64>,
}

/// Full precision summary of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub me: KeypointScores,
    pub pckh: Vec<TauScores>,
    #[serde(default)]
    pub pck_human95: Option<KeypointScores>,
    #[serde(default)]
    pub degenerate_frames: Vec<String>,
    pub n_frames: usize,
}

impl MetricReport {
    fn metrics_with(&self, pick: impl Fn(&KeypointScores) -> f64) -> KeypointMetrics {
        let me = pick(&self.me);
        KeypointMetrics {
            me,
            me_mm: me * MM_PER_DIAGONAL,
            pckh: self.pckh.iter().map(|t| (t.tau, pick(&t.scores))).collect(),
            pck_human95: self.pck_human95.as_ref().map(&pick),
        }
    }

    pub fn keypoint(&self, k: KeypointId) -> KeypointMetrics {
        self.metrics_with(|s| s.get(k))
    }

    pub fn overall(&self) -> KeypointMetrics {
        self.metrics_with(|s| s.overall)
    }

    pub fn me_mm(&self) -> KeypointScores {
        self.me.scaled(MM_PER_DIAGONAL)
    }

    pub fn pckh_at(&self, tau: f64) -> Option<&KeypointScores> {
        self.pckh.iter().find(|t| t.tau == tau).map(|t| &t.scores)
    }
}

/// Computes every metric for one model. PCK@Human95 needs a baseline.
pub fn evaluate(
    preds: &PredictionSet,
    gts: &[PoseAnnotation],
    manifest: &DatasetManifest,
    baseline: Option<&HumanBaseline>,
    config: &PckConfig,
) -> Result<MetricReport> {
    let me = mean_error(preds, gts, manifest)?;
    let pckh = pckh(preds, gts, manifest, config)?;
    let pck_human95 = baseline.map(|b| pck_human(preds, gts, manifest, b)).transpose()?;
    Ok(MetricReport {
        model_id: preds.model_id.clone(),
        me,
        pckh: pckh.by_tau,
        pck_human95,
        degenerate_frames: pckh.degenerate_frames,
        n_frames: gts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agreement::KeypointSpread;
    use crate::model::{Setup, Split, VideoMeta};

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            videos: vec![VideoMeta { video_id: "v".into(), site: String::new(), country: String::new(), setup: Setup::HomeSmartphone }],
            frames: (0..n).map(|i| FrameMeta::new(format!("f{i}"), "v", 800, 600, Setup::HomeSmartphone)).collect(),
            splits: (0..n).map(|i| (format!("f{i}"), Split::Test)).collect(),
            interrater_frames: Default::default(),
        }
    }

    /// A pose with head length 100 px and every other point at (400, 300).
    fn gt_pose() -> Pose {
        let mut p = Pose([Point::new(400.0, 300.0); NUM_KEYPOINTS]);
        p[KeypointId::HeadTop] = Point::new(400.0, 100.0);
        p[KeypointId::UpperNeck] = Point::new(400.0, 200.0);
        p
    }

    fn gt(i: usize, pose: Pose) -> PoseAnnotation {
        PoseAnnotation { frame_id: format!("f{i}"), annotator_id: "gt".into(), points: pose }
    }

    fn shifted_all(pose: &Pose, dx: f64) -> Pose {
        pose.map(|_, p| Point::new(p.x + dx, p.y))
    }

    #[test]
    fn normalized_distance_fixtures() {
        let frame = FrameMeta::new("f", "v", 800, 600, Setup::HomeSmartphone);
        assert_eq!(normalized_distance(Point::new(30.0, 40.0), Point::new(0.0, 0.0), &frame).unwrap(), 0.05);
        assert_eq!(normalized_distance(Point::new(3.0, 4.0), Point::new(3.0, 4.0), &frame).unwrap(), 0.0);
        let zero = FrameMeta::new("z", "v", 0, 0, Setup::HomeSmartphone);
        assert!(normalized_distance(Point::default(), Point::default(), &zero).is_err());
    }

    #[test]
    fn head_length_fixtures() {
        assert_eq!(head_length(&gt_pose()).unwrap(), 100.0);
        let flat = Pose([Point::new(1.0, 1.0); NUM_KEYPOINTS]);
        assert!(matches!(head_length(&flat), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mean_error_is_arithmetic_mean() {
        let m = manifest(2);
        let gts = vec![gt(0, gt_pose()), gt(1, gt_pose())];
        let mut preds = PredictionSet::new("m");
        preds.poses.insert("f0".into(), shifted_all(&gt_pose(), 10.0));
        preds.poses.insert("f1".into(), shifted_all(&gt_pose(), 30.0));
        let me = mean_error(&preds, &gts, &m).unwrap();
        for v in me.per_keypoint {
            assert!((v - 0.02).abs() < 1e-15);
        }
        assert!((me.overall * MM_PER_DIAGONAL - 20.0).abs() < 1e-12);

        preds.poses.remove("f1");
        assert!(matches!(mean_error(&preds, &gts, &m), Err(Error::MissingPrediction { .. })));
    }

    #[test]
    fn pckh_threshold_is_inclusive() {
        let m = manifest(3);
        let gts: Vec<_> = (0..3).map(|i| gt(i, gt_pose())).collect();
        let mut preds = PredictionSet::new("m");
        for (i, dx) in [49.0, 51.0, 50.0].into_iter().enumerate() {
            let mut p = gt_pose();
            p[KeypointId::Nose].x += dx;
            preds.poses.insert(format!("f{i}"), p);
        }
        let r = pckh(&preds, &gts, &m, &PckConfig::new(vec![0.5]).unwrap()).unwrap();
        let nose = r.at(0.5).unwrap().get(KeypointId::Nose);
        assert_eq!(nose, percent(2, 3));
        assert_eq!(r.at(0.5).unwrap().get(KeypointId::LeftKnee), 100.0);
    }

    #[test]
    fn degenerate_head_length_only_affects_pckh() {
        let m = manifest(2);
        let flat = Pose([Point::new(400.0, 300.0); NUM_KEYPOINTS]);
        let gts = vec![gt(0, gt_pose()), gt(1, flat)];
        let mut preds = PredictionSet::new("m");
        preds.poses.insert("f0".into(), gt_pose());
        preds.poses.insert("f1".into(), shifted_all(&flat, 500.0));
        let r = pckh(&preds, &gts, &m, &PckConfig::default()).unwrap();
        assert_eq!(r.degenerate_frames, vec!["f1".to_string()]);
        assert!(r.by_tau.iter().all(|t| t.scores.overall == 100.0));
        assert!(mean_error(&preds, &gts, &m).unwrap().overall > 0.0);

        let only_flat = vec![gt(1, flat)];
        assert!(matches!(pckh(&preds, &only_flat, &m, &PckConfig::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn pck_human_counts_at_threshold() {
        let m = manifest(3);
        let gts: Vec<_> = (0..3).map(|i| gt(i, gt_pose())).collect();
        let baseline = HumanBaseline {
            per_keypoint: [KeypointSpread { h: 0.005, h95: 0.01 }; NUM_KEYPOINTS],
            n_raters: 10,
            n_frames: 100,
        };
        let mut preds = PredictionSet::new("m");
        // Diagonal is 1000 px, so normalized errors are px / 1000.
        for (i, dx) in [5.0, 9.0, 20.0].into_iter().enumerate() {
            preds.poses.insert(format!("f{i}"), shifted_all(&gt_pose(), dx));
        }
        let r = pck_human(&preds, &gts, &m, &baseline).unwrap();
        assert_eq!(r.overall, 200.0 / 3.0);

        preds.poses.insert("f2".into(), shifted_all(&gt_pose(), 10.0));
        assert_eq!(pck_human(&preds, &gts, &m, &baseline).unwrap().overall, 100.0);
    }

    #[test]
    fn perfect_predictor() {
        let m = manifest(4);
        let gts: Vec<_> = (0..4).map(|i| gt(i, gt_pose())).collect();
        let mut preds = PredictionSet::new("m");
        for g in &gts {
            preds.poses.insert(g.frame_id.clone(), g.points);
        }
        let baseline = HumanBaseline {
            per_keypoint: [KeypointSpread { h: 0.001, h95: 0.002 }; NUM_KEYPOINTS],
            n_raters: 2,
            n_frames: 1,
        };
        let report = evaluate(&preds, &gts, &m, Some(&baseline), &PckConfig::default()).unwrap();
        assert_eq!(report.me.overall, 0.0);
        assert!(report.pckh.iter().all(|t| t.scores.per_keypoint.iter().all(|v| *v == 100.0)));
        assert_eq!(report.pck_human95.unwrap().overall, 100.0);
        assert_eq!(report.overall().me_mm, 0.0);
    }

    #[test]
    fn error_distribution_fixtures() {
        let m = manifest(5);
        let gts: Vec<_> = (0..5).map(|i| gt(i, gt_pose())).collect();
        let mut preds = PredictionSet::new("m");
        for i in 0..5 {
            preds.poses.insert(format!("f{i}"), shifted_all(&gt_pose(), (i + 1) as f64));
        }
        let dist = error_distribution(&preds, &gts, &m).unwrap();
        assert_eq!(dist.len(), NUM_KEYPOINTS);
        assert_eq!(dist[0].1.median, 0.003);
        assert_eq!(dist[0].1.min, 0.001);
        assert_eq!(dist[0].1.max, 0.005);
        assert!(matches!(error_distribution(&preds, &[], &m), Err(Error::EmptySample)));
    }

    #[test]
    fn median_filter_fixtures() {
        let xs = |v: &[f64]| v.iter().map(|&x| Point::new(x, 1.0)).collect::<Vec<_>>();
        let out = median_filter(&xs(&[0.0, 0.0, 9.0, 0.0, 0.0]), 3).unwrap();
        assert_eq!(out, xs(&[0.0; 5]));
        let constant = xs(&[4.0; 7]);
        for w in [1, 3, 5, 7, 9] {
            assert_eq!(median_filter(&constant, w).unwrap(), constant);
        }
        let ramp = xs(&[1.0, 5.0, 2.0]);
        assert_eq!(median_filter(&ramp, 1).unwrap(), ramp);
        assert!(median_filter(&ramp, 4).is_err());
        assert!(median_filter(&ramp, 0).is_err());
        assert!(median_filter(&[], 3).is_err());
    }
}
