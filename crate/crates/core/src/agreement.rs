//! Inter-rater statistics.
//!
//! The annotation spread of a keypoint is the mean distance between each
//! rater's point and the across-rater mean point, normalized by the frame
//! diagonal and pooled over all raters and inter-rater frames. The mean
//! includes the rater's own annotation, so for N raters with isotropic
//! per-axis noise σ the expected spread is `σ·sqrt(π(N−1)/(2N))`.
//!
//! Intraclass correlation uses the single-measure two-way forms: ICC(C,1)
//! for consistency and ICC(A,1) for absolute agreement.

use crate::error::{Error, Result};
use crate::model::{DatasetManifest, KeypointId, Point, Pose, PoseAnnotation, NUM_KEYPOINTS};
use crate::stats::{f_quantile, percentile};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

/// Coordinate-wise mean of two or more annotations of the same frame.
pub fn consensus_pose(annotations: &[PoseAnnotation]) -> Result<Pose> {
    if annotations.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "consensus needs at least 2 annotations, got {}",
            annotations.len()
        )));
    }
    let frame_id = &annotations[0].frame_id;
    if let Some(other) = annotations.iter().find(|a| &a.frame_id != frame_id) {
        return Err(Error::FrameMismatch {
            pose: other.frame_id.clone(),
            frame: frame_id.clone(),
        });
    }
    let n = annotations.len() as f64;
    Ok(Pose::default().map(|k, _| {
        let (sx, sy) = annotations
            .iter()
            .fold((0.0, 0.0), |(sx, sy), a| (sx + a.points[k].x, sy + a.points[k].y));
        Point::new(sx / n, sy / n)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KeypointSpread {
    /// Mean normalized deviation from the consensus.
    pub h: f64,
    /// 95th percentile of the pooled normalized deviations.
    pub h95: f64,
}

/// Human annotation precision per keypoint, in diagonal-normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanBaseline {
    pub per_keypoint: [KeypointSpread; NUM_KEYPOINTS],
    pub n_raters: usize,
    pub n_frames: usize,
}

impl HumanBaseline {
    pub fn get(&self, k: KeypointId) -> KeypointSpread {
        self.per_keypoint[k.index()]
    }

    /// Unweighted mean of the per-keypoint spreads.
    pub fn mean_h(&self) -> f64 {
        self.per_keypoint.iter().map(|s| s.h).sum::<f64>() / NUM_KEYPOINTS as f64
    }

    pub fn h_values(&self) -> [f64; NUM_KEYPOINTS] {
        self.per_keypoint.map(|s| s.h)
    }
}

/// Groups annotations by frame, each group sorted by annotator.
pub fn group_by_frame(annotations: impl IntoIterator<Item = PoseAnnotation>) -> BTreeMap<String, Vec<PoseAnnotation>> {
    let mut out: BTreeMap<String, Vec<PoseAnnotation>> = BTreeMap::new();
    for a in annotations {
        out.entry(a.frame_id.clone()).or_default().push(a);
    }
    for group in out.values_mut() {
        group.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id));
    }
    out
}

/// Computes the human baseline from frames annotated by every rater.
///
/// Frames are visited in frame_id order and raters in annotator_id order, so
/// the result does not depend on input ordering.
pub fn annotation_spread(
    interrater: &BTreeMap<String, Vec<PoseAnnotation>>,
    manifest: &DatasetManifest,
) -> Result<HumanBaseline> {
    if interrater.is_empty() {
        return Err(Error::InvalidInput("no inter-rater frames".into()));
    }
    let frames = manifest.frame_map();
    let mut n_raters = None;
    let mut deviations: Vec<Vec<f64>> = vec![Vec::new(); NUM_KEYPOINTS];

    for (frame_id, group) in interrater {
        let frame = frames
            .get(frame_id.as_str())
            .ok_or_else(|| Error::UnknownFrame(frame_id.clone()))?;
        let mut group: Vec<&PoseAnnotation> = group.iter().collect();
        group.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id));
        let raters: BTreeSet<&str> = group.iter().map(|a| a.annotator_id.as_str()).collect();
        if raters.len() != group.len() {
            return Err(Error::InvalidInput(format!("frame {frame_id} has duplicate raters")));
        }
        match n_raters {
            None => n_raters = Some(group.len()),
            Some(n) if n != group.len() => {
                return Err(Error::InvalidInput(format!(
                    "frame {frame_id} has {} raters, expected {n}",
                    group.len()
                )))
            }
            _ => {}
        }
        let owned: Vec<PoseAnnotation> = group.iter().map(|a| (*a).clone()).collect();
        let mean = consensus_pose(&owned)?;
        let diagonal = frame.diagonal();
        for a in &group {
            for (k, p) in a.points.iter() {
                deviations[k.index()].push(p.distance(mean[k]) / diagonal);
            }
        }
    }

    let n_raters = n_raters.unwrap_or(0);
    if n_raters < 2 {
        return Err(Error::InvalidInput("annotation spread needs at least 2 raters".into()));
    }
    let mut per_keypoint = [KeypointSpread::default(); NUM_KEYPOINTS];
    for (slot, sample) in per_keypoint.iter_mut().zip(&deviations) {
        slot.h = sample.iter().sum::<f64>() / sample.len() as f64;
        slot.h95 = percentile(sample, 0.95)?;
    }
    Ok(HumanBaseline {
        per_keypoint,
        n_raters,
        n_frames: interrater.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    pub icc_a1: f64,
    pub icc_c1: f64,
    #[serde(default)]
    pub ci_a1: Option<Interval>,
    #[serde(default)]
    pub ci_c1: Option<Interval>,
    pub ms_rows: f64,
    pub ms_cols: f64,
    pub ms_err: f64,
    pub n_subjects: usize,
    pub k_raters: usize,
}

/// Two-way ANOVA point estimates for an `n × k` matrix (rows are subjects).
pub fn icc(ratings: &[Vec<f64>]) -> Result<IccResult> {
    let n = ratings.len();
    let k = ratings.first().map_or(0, Vec::len);
    if n < 2 || k < 2 {
        return Err(Error::InvalidInput(format!("icc needs at least 2×2 ratings, got {n}×{k}")));
    }
    if ratings.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidInput("ragged rating matrix".into()));
    }
    if ratings.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite rating".into()));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = ratings.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = ratings.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| ratings.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();

    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_err: f64 = ratings
        .iter()
        .zip(&row_means)
        .flat_map(|(r, rm)| r.iter().zip(&col_means).map(move |(x, cm)| (x - rm - cm + grand).powi(2)))
        .sum();

    let ms_rows = ss_rows / (nf - 1.0);
    let ms_cols = ss_cols / (kf - 1.0);
    let ms_err = ss_err / ((nf - 1.0) * (kf - 1.0));
    if ms_rows <= f64::MIN_POSITIVE && ms_err <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate("no variance between subjects or residuals".into()));
    }

    let icc_c1 = (ms_rows - ms_err) / (ms_rows + (kf - 1.0) * ms_err);
    let icc_a1 = (ms_rows - ms_err) / (ms_rows + (kf - 1.0) * ms_err + kf / nf * (ms_cols - ms_err));
    Ok(IccResult {
        icc_a1,
        icc_c1,
        ci_a1: None,
        ci_c1: None,
        ms_rows,
        ms_cols,
        ms_err,
        n_subjects: n,
        k_raters: k,
    })
}

/// Adds `1 − alpha` confidence intervals to both coefficients.
///
/// ICC(C,1) uses the exact F interval on MS_R/MS_E; ICC(A,1) uses the
/// Satterthwaite approximation for the denominator degrees of freedom.
/// `alpha = 1` yields zero-width intervals at the point estimates.
pub fn icc_confidence(result: &IccResult, alpha: f64) -> Result<IccResult> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside (0, 1]")));
    }
    let IccResult { ms_rows: msr, ms_cols: msc, ms_err: mse, .. } = *result;
    if msr <= f64::MIN_POSITIVE && mse <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate("no variance between subjects or residuals".into()));
    }
    let mut out = result.clone();
    if alpha == 1.0 {
        out.ci_a1 = Some(Interval { lo: result.icc_a1, hi: result.icc_a1 });
        out.ci_c1 = Some(Interval { lo: result.icc_c1, hi: result.icc_c1 });
        return Ok(out);
    }

    let n = result.n_subjects as f64;
    let k = result.k_raters as f64;
    let q = 1.0 - alpha / 2.0;
    let df1 = n - 1.0;
    let df2 = (n - 1.0) * (k - 1.0);

    out.ci_c1 = Some(if mse <= f64::MIN_POSITIVE {
        Interval { lo: 1.0, hi: 1.0 }
    } else {
        let f = msr / mse;
        let f_lo = f / f_quantile(q, df1, df2)?;
        let f_hi = f * f_quantile(q, df2, df1)?;
        Interval {
            lo: (f_lo - 1.0) / (f_lo + k - 1.0),
            hi: (f_hi - 1.0) / (f_hi + k - 1.0),
        }
    });

    let icc_a = result.icc_a1;
    out.ci_a1 = Some(if icc_a >= 1.0 {
        Interval { lo: 1.0, hi: 1.0 }
    } else {
        let a = k * icc_a / (n * (1.0 - icc_a));
        let b = 1.0 + k * icc_a * (n - 1.0) / (n * (1.0 - icc_a));
        let v = (a * msc + b * mse).powi(2) / ((a * msc).powi(2) / (k - 1.0) + (b * mse).powi(2) / df2);
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Degenerate(format!("agreement interval degrees of freedom {v}")));
        }
        let f_lo = f_quantile(q, df1, v)?;
        let f_hi = f_quantile(q, v, df1)?;
        let spread = k * msc + (k * n - k - n) * mse;
        let lo = n * (msr - f_lo * mse) / (f_lo * spread + n * msr);
        let hi = n * (f_hi * msr - mse) / (spread + n * f_hi * msr);
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Degenerate(format!("agreement interval [{lo}, {hi}] is not finite")));
        }
        Interval { lo, hi }
    });
    Ok(out)
}

/// ICC between a model's per-keypoint mean error and the human spread,
/// treating keypoints as subjects and {model, human} as raters. Both inputs
/// must be in the same (normalized) units.
pub fn model_vs_human_icc(model_me: &[f64; NUM_KEYPOINTS], human_h: &[f64; NUM_KEYPOINTS]) -> Result<IccResult> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m, h) = (mean(model_me), mean(human_h));
    if m > 0.0 && h > 0.0 && (m / h > 100.0 || h / m > 100.0) {
        return Err(Error::InvalidInput(format!(
            "unit mismatch: mean model error {m} vs mean human spread {h}"
        )));
    }
    let matrix: Vec<Vec<f64>> = model_me.iter().zip(human_h).map(|(&a, &b)| vec![a, b]).collect();
    icc_confidence(&icc(&matrix)?, 0.05)
}

const BASELINE_HEADER: [&str; 5] = ["keypoint", "h", "h95", "n", "s"];

/// Writes the baseline table: `keypoint,h,h95,n,s`, one row per keypoint.
pub fn write_baseline<W: Write>(sink: W, baseline: &HumanBaseline) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(BASELINE_HEADER)?;
    for k in KeypointId::ALL {
        let s = baseline.get(k);
        w.write_record([
            k.name(),
            &s.h.to_string(),
            &s.h95.to_string(),
            &baseline.n_raters.to_string(),
            &baseline.n_frames.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_baseline<R: Read>(source: R) -> Result<HumanBaseline> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    if r.headers()?.iter().ne(BASELINE_HEADER) {
        return Err(Error::MalformedRow { row: 1, message: "expected header keypoint,h,h95,n,s".into() });
    }
    let mut seen = [None; NUM_KEYPOINTS];
    let mut counts = None;
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let bad = |message: String| Error::MalformedRow { row, message };
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", rec.len())));
        }
        let k: KeypointId = rec[0].parse().map_err(|_| bad(format!("unknown keypoint {:?}", &rec[0])))?;
        let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0);
        let (Some(h), Some(h95)) = (num(&rec[1]), num(&rec[2])) else {
            return Err(bad("spread values must be finite and non-negative".into()));
        };
        let (Ok(n), Ok(s)) = (rec[3].parse::<usize>(), rec[4].parse::<usize>()) else {
            return Err(bad("n and s must be counts".into()));
        };
        if counts.is_some_and(|c| c != (n, s)) {
            return Err(bad("n and s differ between rows".into()));
        }
        counts = Some((n, s));
        if seen[k.index()].replace(KeypointSpread { h, h95 }).is_some() {
            return Err(bad(format!("duplicate keypoint {k}")));
        }
    }
    let missing: Vec<KeypointId> = KeypointId::ALL.into_iter().filter(|k| seen[k.index()].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!("baseline is missing {missing:?}")));
    }
    let (n_raters, n_frames) = counts.unwrap_or_default();
    if n_raters < 2 || n_frames < 1 {
        return Err(Error::InvalidInput(format!("baseline needs N ≥ 2 and S ≥ 1, got N={n_raters}, S={n_frames}")));
    }
    Ok(HumanBaseline {
        per_keypoint: seen.map(|s| s.expect("checked above")),
        n_raters,
        n_frames,
    })
}
