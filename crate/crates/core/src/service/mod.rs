//! Multi-rater annotation collection.
//!
//! Inter-rater frames are annotated by every annotator on the roster; every
//! other frame is claimed by exactly one annotator. All state changes go
//! through a single append-only [`log::Log`] and the in-memory index is a pure
//! function of its records, so replay after a restart reproduces it exactly.

pub mod http;
pub mod log;

use crate::agreement::{annotation_spread, HumanBaseline};
use crate::error::{Error, Result};
use crate::model::{validate_pose, DatasetManifest, PoseAnnotation};
use crate::table::annotations_to_string;
use log::{Log, Record};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "annotations.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Pending,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub frame_id: String,
    pub annotator_id: String,
    pub status: TaskStatus,
    pub assigned_at_ms: u64,
    pub interrater: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSnapshot {
    pub baseline: HumanBaseline,
    pub complete_frames: usize,
    pub partial_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotators: usize,
    pub interrater_frames: usize,
    pub interrater_complete: usize,
    pub interrater_partial: usize,
    pub regular_frames: usize,
    pub regular_claimed: usize,
    pub regular_submitted: usize,
    pub submissions: usize,
}

/// Reads a roster file: one annotator id per line, blank lines and `#`
/// comments ignored.
pub fn read_roster(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let roster: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if roster.is_empty() {
        return Err(Error::InvalidInput("roster is empty".into()));
    }
    Ok(roster)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

type Key = (String, String);

pub struct AnnotationService {
    data_dir: PathBuf,
    manifest: DatasetManifest,
    roster: BTreeSet<String>,
    log: Log,
    /// (frame, annotator) -> assignment time, for every handed-out task.
    assigned: BTreeMap<Key, u64>,
    /// Regular frame -> claiming annotator.
    claims: BTreeMap<String, String>,
    /// Latest submission per (frame, annotator).
    latest: BTreeMap<Key, PoseAnnotation>,
    submissions: usize,
}

impl AnnotationService {
    /// Opens the service over `data_dir`, which must contain the dataset
    /// manifest; the log is created there on first use.
    pub fn open(data_dir: impl AsRef<Path>, roster: Vec<String>) -> Result<Self> {
        let data_dir = data_dir.as_ref().to_path_buf();
        let manifest = DatasetManifest::from_json(&std::fs::read(data_dir.join(MANIFEST_FILE))?)?;
        Self::with_manifest(data_dir, manifest, roster)
    }

    pub fn with_manifest(data_dir: impl AsRef<Path>, manifest: DatasetManifest, roster: Vec<String>) -> Result<Self> {
        manifest.validate()?;
        let roster: BTreeSet<String> = roster.into_iter().collect();
        if roster.is_empty() {
            return Err(Error::InvalidInput("roster is empty".into()));
        }
        let data_dir = data_dir.as_ref().to_path_buf();
        let (log, records) = Log::open(data_dir.join(LOG_FILE))?;
        let mut service = AnnotationService {
            data_dir,
            manifest,
            roster,
            log,
            assigned: BTreeMap::new(),
            claims: BTreeMap::new(),
            latest: BTreeMap::new(),
            submissions: 0,
        };
        for r in records {
            service.apply(r);
        }
        Ok(service)
    }

    fn apply(&mut self, record: Record) {
        match record {
            Record::Assign { frame_id, annotator_id, at_ms } => {
                if !self.manifest.interrater_frames.contains(&frame_id) {
                    self.claims.insert(frame_id.clone(), annotator_id.clone());
                }
                self.assigned.entry((frame_id, annotator_id)).or_insert(at_ms);
            }
            Record::Submit { annotation, .. } => {
                self.submissions += 1;
                self.latest.insert((annotation.frame_id.clone(), annotation.annotator_id.clone()), annotation);
            }
        }
    }

    fn commit(&mut self, record: Record) -> Result<()> {
        self.log.append(&record)?;
        self.apply(record);
        Ok(())
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn roster(&self) -> impl Iterator<Item = &str> {
        self.roster.iter().map(String::as_str)
    }

    fn task(&self, frame_id: &str, annotator_id: &str) -> AnnotationTask {
        let key = (frame_id.to_string(), annotator_id.to_string());
        AnnotationTask {
            frame_id: frame_id.into(),
            annotator_id: annotator_id.into(),
            status: if self.latest.contains_key(&key) { TaskStatus::Submitted } else { TaskStatus::Pending },
            assigned_at_ms: self.assigned.get(&key).copied().unwrap_or(0),
            interrater: self.manifest.interrater_frames.contains(frame_id),
        }
    }

    /// Returns the annotator's next pending task, claiming a fresh regular
    /// frame only when nothing is pending. Repeated calls without a
    /// submission return the same task.
    pub fn assign_next_frame(&mut self, annotator_id: &str) -> Result<Option<AnnotationTask>> {
        if !self.roster.contains(annotator_id) {
            return Err(Error::UnknownAnnotator(annotator_id.into()));
        }
        let done = |s: &Self, f: &str| s.latest.contains_key(&(f.to_string(), annotator_id.to_string()));

        // Inter-rater tasks first: an already handed-out one, else the first open one.
        let open: Vec<&String> = self.manifest.interrater_frames.iter().filter(|f| !done(self, f)).collect();
        let handed = open
            .iter()
            .filter_map(|f| self.assigned.get(&((*f).clone(), annotator_id.to_string())).map(|t| (*t, *f)))
            .min();
        if let Some((_, f)) = handed {
            return Ok(Some(self.task(f, annotator_id)));
        }
        if let Some(f) = open.first().map(|f| (*f).clone()) {
            self.commit(Record::Assign { frame_id: f.clone(), annotator_id: annotator_id.into(), at_ms: now_ms() })?;
            return Ok(Some(self.task(&f, annotator_id)));
        }

        let pending_claim = self
            .claims
            .iter()
            .filter(|(f, a)| a.as_str() == annotator_id && !done(self, f))
            .map(|(f, _)| (self.assigned[&(f.clone(), annotator_id.to_string())], f))
            .min();
        if let Some((_, f)) = pending_claim {
            return Ok(Some(self.task(f, annotator_id)));
        }

        let fresh = self
            .manifest
            .frames
            .iter()
            .map(|f| &f.frame_id)
            .filter(|f| !self.manifest.interrater_frames.contains(*f) && !self.claims.contains_key(*f))
            .min()
            .cloned();
        match fresh {
            Some(f) => {
                self.commit(Record::Assign { frame_id: f.clone(), annotator_id: annotator_id.into(), at_ms: now_ms() })?;
                Ok(Some(self.task(&f, annotator_id)))
            }
            None => Ok(None),
        }
    }

    /// Validates and durably records a submission. Resubmission by the same
    /// annotator replaces the earlier pose.
    pub fn submit_annotation(&mut self, annotation: PoseAnnotation) -> Result<AnnotationTask> {
        let (frame_id, annotator_id) = (annotation.frame_id.clone(), annotation.annotator_id.clone());
        if !self.roster.contains(&annotator_id) {
            return Err(Error::UnknownAnnotator(annotator_id));
        }
        let frame = self.manifest.frame(&frame_id).ok_or_else(|| Error::UnknownFrame(frame_id.clone()))?;
        let owned = if self.manifest.interrater_frames.contains(&frame_id) {
            self.assigned.contains_key(&(frame_id.clone(), annotator_id.clone()))
        } else {
            self.claims.get(&frame_id) == Some(&annotator_id)
        };
        if !owned {
            return Err(Error::UnknownTask { frame_id, annotator_id });
        }
        let violations = validate_pose(&annotation, frame)?;
        if !violations.is_empty() {
            return Err(Error::PoseRejected { frame_id, violations });
        }
        self.commit(Record::Submit { annotation, at_ms: now_ms() })?;
        Ok(self.task(&frame_id, &annotator_id))
    }

    /// Latest-wins view ordered by frame, annotator, keypoint ordinal.
    pub fn latest_annotations(&self) -> Vec<PoseAnnotation> {
        self.latest.values().cloned().collect()
    }

    pub fn export_annotations(&self) -> String {
        annotations_to_string(&self.latest_annotations())
    }

    fn interrater_groups(&self) -> (BTreeMap<String, Vec<PoseAnnotation>>, usize) {
        let mut complete = BTreeMap::new();
        let mut partial = 0;
        for f in &self.manifest.interrater_frames {
            let group: Vec<PoseAnnotation> = self
                .roster
                .iter()
                .filter_map(|a| self.latest.get(&(f.clone(), a.clone())).cloned())
                .collect();
            if group.len() == self.roster.len() {
                complete.insert(f.clone(), group);
            } else if !group.is_empty() {
                partial += 1;
            }
        }
        (complete, partial)
    }

    /// Human baseline over inter-rater frames that every roster annotator
    /// has submitted; partially annotated frames are only counted.
    pub fn agreement_snapshot(&self) -> Result<AgreementSnapshot> {
        let (complete, partial) = self.interrater_groups();
        if complete.is_empty() {
            return Err(Error::InsufficientFrames(format!(
                "0 complete inter-rater frames ({partial} partial)"
            )));
        }
        Ok(AgreementSnapshot {
            baseline: annotation_spread(&complete, &self.manifest)?,
            complete_frames: complete.len(),
            partial_frames: partial,
        })
    }

    pub fn progress(&self) -> Progress {
        let (complete, partial) = self.interrater_groups();
        let regular_frames = self.manifest.frames.len() - self.manifest.interrater_frames.len();
        let regular_submitted = self
            .claims
            .iter()
            .filter(|(f, a)| self.latest.contains_key(&((*f).clone(), (*a).clone())))
            .count();
        Progress {
            annotators: self.roster.len(),
            interrater_frames: self.manifest.interrater_frames.len(),
            interrater_complete: complete.len(),
            interrater_partial: partial,
            regular_frames,
            regular_claimed: self.claims.len(),
            regular_submitted,
            submissions: self.submissions,
        }
    }

    /// Path of the frame's image, resolved against the data directory.
    pub fn image_path(&self, frame_id: &str) -> Result<PathBuf> {
        let frame = self.manifest.frame(frame_id).ok_or_else(|| Error::UnknownFrame(frame_id.into()))?;
        let rel = frame
            .image_path
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("frame {frame_id} has no image")))?;
        Ok(self.data_dir.join(rel))
    }
}
