use crate::model::{KeypointId, PoseViolation};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("incomplete pose for frame {frame_id} / {source_id}: missing {missing:?}")]
    IncompletePose {
        frame_id: String,
        source_id: String,
        missing: Vec<KeypointId>,
    },

    #[error("frame {frame_id}: {keypoint} at ({x}, {y}) lies outside the frame")]
    OutOfBounds {
        frame_id: String,
        keypoint: KeypointId,
        x: f64,
        y: f64,
    },

    #[error("unknown frame {0}")]
    UnknownFrame(String),

    #[error("frame {frame_id} has ground truth but no prediction")]
    MissingPrediction { frame_id: String },

    #[error("pose belongs to frame {pose} but was checked against frame {frame}")]
    FrameMismatch { pose: String, frame: String },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty sample")]
    EmptySample,

    #[error("insufficient frames: {0}")]
    InsufficientFrames(String),

    #[error("predictor: {0}")]
    Predictor(String),

    #[error("predictor timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),

    #[error("no task for frame {frame_id} assigned to {annotator_id}")]
    UnknownTask { frame_id: String, annotator_id: String },

    #[error("pose for frame {frame_id} rejected: {violations:?}")]
    PoseRejected {
        frame_id: String,
        violations: Vec<PoseViolation>,
    },

    #[error("corrupt log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
