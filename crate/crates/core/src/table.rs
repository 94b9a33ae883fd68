//! The annotation and prediction tables.
//!
//! Both are comma-separated with one keypoint per row:
//!
//! ```text
//! frame_id,annotator_id,keypoint,x,y     (annotations)
//! frame_id,model_id,keypoint,x,y         (predictions)
//! ```
//!
//! Rows are written sorted by frame, source and keypoint ordinal. Coordinates
//! use the shortest decimal that round-trips to the same `f64`, so a written
//! table parses back bit-identically.

use crate::error::{Error, Result};
use crate::model::{DatasetManifest, KeypointId, Point, Pose, PoseAnnotation, PredictionSet, NUM_KEYPOINTS};
use std::collections::BTreeMap;
use std::io::{Read, Write};

const ANNOTATION_HEADER: [&str; 5] = ["frame_id", "annotator_id", "keypoint", "x", "y"];
const PREDICTION_HEADER: [&str; 5] = ["frame_id", "model_id", "keypoint", "x", "y"];

type Partial = [Option<Point>; NUM_KEYPOINTS];

/// Reads a table into complete poses keyed by (frame_id, source_id).
fn read_table<R: Read>(
    source: R,
    header: &[&str; 5],
    manifest: Option<&DatasetManifest>,
) -> Result<BTreeMap<(String, String), Pose>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let found = reader.headers()?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::MalformedRow {
            row: 1,
            message: format!("expected header {:?}, found {:?}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let frames = manifest.map(|m| m.frame_map());
    let mut partial: BTreeMap<(String, String), Partial> = BTreeMap::new();

    for (i, record) in reader.records().enumerate() {
        // Header is line 1, so data record i sits on line i + 2 unless the
        // reader knows better.
        let row = i + 2;
        let record = record.map_err(|e| Error::MalformedRow { row, message: e.to_string() })?;
        let row = record.position().map_or(row, |p| p.line() as usize);
        let bad = |message: String| Error::MalformedRow { row, message };

        if record.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", record.len())));
        }
        let frame_id = &record[0];
        let source_id = &record[1];
        if frame_id.is_empty() || source_id.is_empty() {
            return Err(bad("empty identifier".into()));
        }
        let keypoint: KeypointId = record[2]
            .parse()
            .map_err(|_| bad(format!("unknown keypoint name {:?}", &record[2])))?;
        let coord = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("non-numeric coordinate {s:?}")))
        };
        let point = Point::new(coord(&record[3])?, coord(&record[4])?);

        if let Some(frames) = &frames {
            let frame = frames.get(frame_id).ok_or_else(|| Error::UnknownFrame(frame_id.to_string()))?;
            if !frame.contains(point) {
                return Err(Error::OutOfBounds {
                    frame_id: frame_id.to_string(),
                    keypoint,
                    x: point.x,
                    y: point.y,
                });
            }
        }

        let slot = &mut partial
            .entry((frame_id.to_string(), source_id.to_string()))
            .or_insert([None; NUM_KEYPOINTS])[keypoint.index()];
        if slot.is_some() {
            return Err(bad(format!("duplicate {keypoint} for frame {frame_id} / {source_id}")));
        }
        *slot = Some(point);
    }

    partial
        .into_iter()
        .map(|((frame_id, source_id), points)| match Pose::from_partial(&points) {
            Ok(pose) => Ok(((frame_id, source_id), pose)),
            Err(missing) => Err(Error::IncompletePose { frame_id, source_id, missing }),
        })
        .collect()
}

fn write_table<W: Write>(sink: W, header: &[&str; 5], rows: &[(&str, &str, &Pose)]) -> Result<()> {
    let mut sorted: Vec<_> = rows.to_vec();
    sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(header)?;
    for (frame_id, source_id, pose) in sorted {
        for (k, p) in pose.iter() {
            writer.write_record([frame_id, source_id, k.name(), &p.x.to_string(), &p.y.to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Parses an annotation table. Any malformed row rejects the whole stream.
///
/// When `manifest` is given, every frame must exist in it and every point
/// must lie within its frame.
pub fn parse_annotations<R: Read>(source: R, manifest: Option<&DatasetManifest>) -> Result<Vec<PoseAnnotation>> {
    Ok(read_table(source, &ANNOTATION_HEADER, manifest)?
        .into_iter()
        .map(|((frame_id, annotator_id), points)| PoseAnnotation { frame_id, annotator_id, points })
        .collect())
}

pub fn write_annotations<W: Write>(sink: W, records: &[PoseAnnotation]) -> Result<()> {
    let rows: Vec<_> = records
        .iter()
        .map(|r| (r.frame_id.as_str(), r.annotator_id.as_str(), &r.points))
        .collect();
    write_table(sink, &ANNOTATION_HEADER, &rows)
}

pub fn annotations_to_string(records: &[PoseAnnotation]) -> String {
    let mut buf = Vec::new();
    write_annotations(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Parses a prediction table; one [`PredictionSet`] per distinct model_id,
/// ordered by model_id. Declared complexity figures are left unset.
pub fn parse_predictions<R: Read>(source: R, manifest: Option<&DatasetManifest>) -> Result<Vec<PredictionSet>> {
    let mut sets: BTreeMap<String, PredictionSet> = BTreeMap::new();
    for ((frame_id, model_id), pose) in read_table(source, &PREDICTION_HEADER, manifest)? {
        sets.entry(model_id.clone())
            .or_insert_with(|| PredictionSet::new(model_id))
            .poses
            .insert(frame_id, pose);
    }
    Ok(sets.into_values().collect())
}

pub fn write_predictions<W: Write>(sink: W, sets: &[PredictionSet]) -> Result<()> {
    let rows: Vec<_> = sets
        .iter()
        .flat_map(|s| s.poses.iter().map(move |(f, p)| (f.as_str(), s.model_id.as_str(), p)))
        .collect();
    write_table(sink, &PREDICTION_HEADER, &rows)
}
