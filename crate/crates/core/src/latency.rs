//! Inference latency of an external predictor.
//!
//! A run sends every supplied frame once, in batches, and is timed from the
//! first request to the last response. The reported figure is the median run
//! time divided by the images in a run. The clock therefore includes the
//! wire protocol, not only the model's forward pass.
//!
//! Wire protocol (line-delimited, both directions):
//!
//! ```text
//! > PREDICT <batch_id> <n>
//! > <path 1>
//! > ...
//! < RESULT <batch_id>
//! < x1 y1 x2 y2 ... x19 y19      (n lines)
//! ```

use crate::error::{Error, Result};
use crate::model::{Point, Pose, NUM_KEYPOINTS};
use crate::stats::median;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    /// Shell command; the predictor speaks the protocol on stdin/stdout.
    Command(String),
    /// TCP address of a running predictor.
    Socket(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub runs: usize,
    pub warmup_runs: usize,
    pub timeout: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { batch_size: 10, runs: 10, warmup_runs: 1, timeout: Duration::from_secs(60) }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.runs == 0 {
            return Err(Error::InvalidInput("batch_size and runs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub median_latency_ms_per_image: f64,
    pub median_run_ms: f64,
    pub per_run_ms: Vec<f64>,
    pub images_per_run: usize,
}

pub trait Predictor {
    fn predict(&mut self, batch_id: u64, paths: &[String]) -> Result<Vec<Pose>>;
}

pub trait Clock {
    fn now(&self) -> Duration;
}

pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

pub fn measure_latency(frames: &[String], config: &BenchConfig, predictor: &mut dyn Predictor) -> Result<BenchResult> {
    measure_latency_with_clock(frames, config, predictor, &SystemClock::default())
}

pub fn measure_latency_with_clock(
    frames: &[String],
    config: &BenchConfig,
    predictor: &mut dyn Predictor,
    clock: &dyn Clock,
) -> Result<BenchResult> {
    config.validate()?;
    if frames.len() < config.batch_size {
        return Err(Error::InvalidInput(format!(
            "{} frames supplied, fewer than one batch of {}",
            frames.len(),
            config.batch_size
        )));
    }
    let mut batch_id = 0u64;
    let mut per_run_ms = Vec::with_capacity(config.runs);
    for run in 0..config.warmup_runs + config.runs {
        let start = clock.now();
        for batch in frames.chunks(config.batch_size) {
            let poses = predictor.predict(batch_id, batch)?;
            if poses.len() != batch.len() {
                return Err(Error::Predictor(format!(
                    "batch {batch_id}: {} poses for {} frames",
                    poses.len(),
                    batch.len()
                )));
            }
            batch_id += 1;
        }
        let elapsed = clock.now().saturating_sub(start);
        if run >= config.warmup_runs {
            per_run_ms.push(elapsed.as_secs_f64() * 1000.0);
        }
    }
    let median_run_ms = median(&per_run_ms)?;
    Ok(BenchResult {
        median_latency_ms_per_image: median_run_ms / frames.len() as f64,
        median_run_ms,
        per_run_ms,
        images_per_run: frames.len(),
    })
}

/// Parses one response line of 38 decimals.
pub fn parse_pose_line(line: &str) -> Result<Pose> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Predictor(format!("bad number {t:?}"))))
        .collect::<Result<_>>()?;
    if values.len() != 2 * NUM_KEYPOINTS {
        return Err(Error::Predictor(format!("expected {} values, got {}", 2 * NUM_KEYPOINTS, values.len())));
    }
    let mut pose = Pose([Point::new(0.0, 0.0); NUM_KEYPOINTS]);
    for (i, xy) in values.chunks(2).enumerate() {
        pose.0[i] = Point::new(xy[0], xy[1]);
    }
    Ok(pose)
}

pub fn format_pose_line(pose: &Pose) -> String {
    pose.0.iter().map(|p| format!("{} {}", p.x, p.y)).collect::<Vec<_>>().join(" ")
}

/// Client for a predictor speaking the line protocol over a byte stream.
/// Lines are read on a helper thread so a stalled predictor surfaces as
/// [`Error::Timeout`] instead of blocking forever.
pub struct LinePredictor {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    child: Option<Child>,
}

impl LinePredictor {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        match endpoint {
            Endpoint::Command(cmd) => Self::spawn(cmd, timeout),
            Endpoint::Socket(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| Error::Predictor(format!("cannot reach predictor at {addr}: {e}")))?;
                let reader = stream.try_clone()?;
                Ok(Self::from_streams(Box::new(stream), reader, timeout, None))
            }
        }
    }

    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Predictor(format!("cannot start predictor {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self::from_streams(Box::new(stdin), stdout, timeout, Some(child)))
    }

    fn from_streams(
        writer: Box<dyn Write + Send>,
        reader: impl Read + Send + 'static,
        timeout: Duration,
        child: Option<Child>,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        LinePredictor { writer, lines: rx, timeout, child }
    }

    fn next_line(&self, deadline: Instant) -> Result<String> {
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(wait) {
            Ok(line) => Ok(line?),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Predictor("predictor closed its output".into())),
        }
    }
}

impl Predictor for LinePredictor {
    fn predict(&mut self, batch_id: u64, paths: &[String]) -> Result<Vec<Pose>> {
        let mut request = format!("PREDICT {batch_id} {}\n", paths.len());
        for p in paths {
            if p.contains('\n') {
                return Err(Error::InvalidInput(format!("frame path contains a newline: {p:?}")));
            }
            request.push_str(p);
            request.push('\n');
        }
        self.writer
            .write_all(request.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Predictor(format!("cannot send batch {batch_id}: {e}")))?;

        let deadline = Instant::now() + self.timeout;
        let header = self.next_line(deadline)?;
        if header.trim() != format!("RESULT {batch_id}") {
            return Err(Error::Predictor(format!("expected \"RESULT {batch_id}\", got {header:?}")));
        }
        (0..paths.len()).map(|_| parse_pose_line(&self.next_line(deadline)?)).collect()
    }
}

impl Drop for LinePredictor {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;
    use std::rc::Rc;

    /// Advances a shared fake clock by a planted amount per batch.
    struct Planted {
        clock: Rc<Cell<Duration>>,
        per_batch_ms: Vec<u64>,
        calls: usize,
    }

    impl Predictor for Planted {
        fn predict(&mut self, _: u64, paths: &[String]) -> Result<Vec<Pose>> {
            let ms = self.per_batch_ms[self.calls % self.per_batch_ms.len()];
            self.calls += 1;
            self.clock.set(self.clock.get() + Duration::from_millis(ms));
            Ok(vec![Pose([Point::new(0.0, 0.0); NUM_KEYPOINTS]); paths.len()])
        }
    }

    struct FakeClock(Rc<Cell<Duration>>);

    impl Clock for FakeClock {
        fn now(&self) -> Duration {
            self.0.get()
        }
    }

    fn frames(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i}.png")).collect()
    }

    #[test]
    fn planted_runs_give_exact_median() {
        let clock = Rc::new(Cell::new(Duration::ZERO));
        // Warmup batch first (999 ms, excluded), then ten planted runs.
        let mut planted = vec![999];
        planted.extend((1..=10).map(|i| i * 10));
        let mut p = Planted { clock: clock.clone(), per_batch_ms: planted, calls: 0 };
        let r = measure_latency_with_clock(&frames(10), &BenchConfig::default(), &mut p, &FakeClock(clock)).unwrap();
        assert_eq!(r.per_run_ms.len(), 10);
        assert_eq!(r.median_run_ms, 55.0);
        assert_eq!(r.median_latency_ms_per_image, 5.5);
    }

    #[test]
    fn single_run_is_its_own_median() {
        let clock = Rc::new(Cell::new(Duration::ZERO));
        let mut p = Planted { clock: clock.clone(), per_batch_ms: vec![40], calls: 0 };
        let cfg = BenchConfig { runs: 1, warmup_runs: 0, ..Default::default() };
        // Two full batches and a partial one per run.
        let r = measure_latency_with_clock(&frames(25), &cfg, &mut p, &FakeClock(clock)).unwrap();
        assert_eq!(r.per_run_ms, vec![120.0]);
        assert_eq!(r.median_run_ms, 120.0);
        assert_eq!(r.images_per_run, 25);
    }

    #[test]
    fn config_and_frame_count_checked() {
        let clock = Rc::new(Cell::new(Duration::ZERO));
        let mut p = Planted { clock: clock.clone(), per_batch_ms: vec![1], calls: 0 };
        let bad = BenchConfig { batch_size: 0, ..Default::default() };
        assert!(measure_latency(&frames(10), &bad, &mut p).is_err());
        assert!(measure_latency(&frames(9), &BenchConfig::default(), &mut p).is_err());
    }

    #[test]
    fn pose_line_round_trip() {
        let mut pose = Pose([Point::new(0.0, 0.0); NUM_KEYPOINTS]);
        for (i, p) in pose.0.iter_mut().enumerate() {
            *p = Point::new(i as f64 + 0.25, 100.0 - i as f64);
        }
        assert_eq!(parse_pose_line(&format_pose_line(&pose)).unwrap(), pose);
        assert!(parse_pose_line("1 2 3").is_err());
        assert!(parse_pose_line(&"x ".repeat(38)).is_err());
    }
}
