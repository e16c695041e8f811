//! Sequences, tracking runs and the success/precision metrics.

mod synth;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SequenceError};
use crate::features::{Frame, FrameProvider};
use crate::geometry::{center_error, iou, BoundingBox};
use crate::localizer::ScorerHead;
use crate::par;
use crate::pipeline::{TrackerConfig, TrackerState};

pub use synth::{synth_sequence, Motion, SynthSpec};

pub const GROUND_TRUTH_FILE: &str = "groundtruth_rect.txt";
pub const IMAGE_DIR: &str = "img";
/// Success-plot thresholds: 0.00, 0.05, ..., 1.00.
pub const SUCCESS_THRESHOLDS: usize = 21;
pub const DEFAULT_PRECISION_PX: f64 = 20.0;

const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

#[derive(Debug, Clone)]
enum Frames {
    Files(Vec<PathBuf>),
    Memory(Vec<Frame>),
}

/// Frames plus one ground-truth box per frame.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub attributes: Vec<String>,
    ground_truth: Vec<BoundingBox>,
    frames: Frames,
}

impl Sequence {
    pub fn in_memory(
        name: impl Into<String>,
        frames: Vec<Frame>,
        ground_truth: Vec<BoundingBox>,
    ) -> Result<Self> {
        if frames.len() != ground_truth.len() {
            return Err(Error::mismatch(
                "ground-truth boxes",
                frames.len(),
                ground_truth.len(),
            ));
        }
        if frames.is_empty() {
            return Err(Error::InvalidArgument(
                "a sequence needs at least one frame".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            attributes: Vec::new(),
            ground_truth,
            frames: Frames::Memory(frames),
        })
    }

    pub fn len(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground_truth.is_empty()
    }

    pub fn ground_truth(&self) -> &[BoundingBox] {
        &self.ground_truth
    }

    /// Image paths, when the sequence was loaded from disk.
    pub fn frame_paths(&self) -> Option<&[PathBuf]> {
        match &self.frames {
            Frames::Files(p) => Some(p),
            Frames::Memory(_) => None,
        }
    }

    /// Writes the OTB layout: `img/0001.png`, ... and the ground-truth file.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let img = dir.join(IMAGE_DIR);
        fs::create_dir_all(&img).map_err(|e| Error::io(&img, e))?;
        let width = self.len().to_string().len().max(4);
        for i in 0..self.len() {
            let f = self.frame(i)?;
            f.save_png(&img.join(format!("{:0width$}.png", i + 1)))?;
        }
        write_ground_truth(&dir.join(GROUND_TRUTH_FILE), &self.ground_truth)
    }
}

impl FrameProvider for Sequence {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        match &self.frames {
            Frames::Memory(f) => f.as_slice().frame(index),
            Frames::Files(paths) => {
                let p = paths.get(index).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "frame {index} out of range ({} frames)",
                        paths.len()
                    ))
                })?;
                Frame::load(p, index + 1)
            }
        }
    }
}

fn parse_box_line(line: &str) -> std::result::Result<BoundingBox, String> {
    let fields: Vec<&str> = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 values, found {}", fields.len()));
    }
    let mut v = [0.0; 4];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f.parse::<f64>().map_err(|e| format!("{f:?}: {e}"))?;
    }
    BoundingBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).map_err(|e| e.to_string())
}

/// Parses an OTB ground-truth file (1-based pixel origin) into 0-based boxes.
pub fn read_ground_truth(path: &Path) -> Result<Vec<BoundingBox>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::from(SequenceError::Missing {
            path: path.to_path_buf(),
            what: "ground-truth file",
        }),
        _ => Error::io(path, e),
    })?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let b = parse_box_line(line).map_err(|reason| SequenceError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            content: line.to_string(),
            reason,
        })?;
        boxes.push(b);
    }
    Ok(boxes)
}

/// Writes boxes in the OTB convention, one `x,y,w,h` line per frame.
pub fn write_ground_truth(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    let mut text = String::new();
    for b in boxes {
        text.push_str(&format!(
            "{},{},{},{}\n",
            b.x() + 1.0,
            b.y() + 1.0,
            b.width(),
            b.height()
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads `dir/img/*` (sorted by file name) with `dir/groundtruth_rect.txt`.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let img = dir.join(IMAGE_DIR);
    if !img.is_dir() {
        return Err(SequenceError::Missing {
            path: img,
            what: "image directory",
        }
        .into());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&img)
        .map_err(|e| Error::io(&img, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    let gt_path = dir.join(GROUND_TRUTH_FILE);
    let ground_truth = read_ground_truth(&gt_path)?;
    if paths.is_empty() {
        return Err(SequenceError::Missing {
            path: img,
            what: "frame images",
        }
        .into());
    }
    if paths.len() != ground_truth.len() {
        return Err(SequenceError::CountMismatch {
            path: gt_path,
            frames: paths.len(),
            boxes: ground_truth.len(),
        }
        .into());
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(Sequence {
        name,
        attributes: Vec::new(),
        ground_truth,
        frames: Frames::Files(paths),
    })
}

/// Subdirectories of `dir` that hold an OTB sequence, sorted by name.
pub fn list_sequences(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUND_TRUTH_FILE).is_file())
        .collect();
    out.sort();
    Ok(out)
}

/// Output of tracking one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    /// One box per frame; frame 1 is the initialization box.
    pub predicted: Vec<BoundingBox>,
    pub low_confidence: Vec<bool>,
    pub init_seconds: f64,
    /// Wall time of each tracked frame after the first.
    pub frame_seconds: Vec<f64>,
}

impl TrackResult {
    pub fn fps(&self) -> Result<f64> {
        fps(&self.frame_seconds)
    }
}

/// Tracks `seq` from its first ground-truth box.
pub fn run_sequence(
    seq: &Sequence,
    config: &TrackerConfig,
    head: Option<ScorerHead>,
) -> Result<TrackResult> {
    let first = seq.frame(0)?;
    let gt = seq.ground_truth()[0];
    let t0 = Instant::now();
    let mut tracker = TrackerState::init(&first, gt, config.clone(), head)?;
    let init_seconds = t0.elapsed().as_secs_f64();
    let mut predicted = vec![gt];
    let mut low_confidence = vec![false];
    let mut frame_seconds = Vec::with_capacity(seq.len().saturating_sub(1));
    for i in 1..seq.len() {
        let frame = seq.frame(i)?;
        let t = Instant::now();
        let out = tracker.step(&frame)?;
        frame_seconds.push(t.elapsed().as_secs_f64());
        predicted.push(out.state.bbox);
        low_confidence.push(out.low_confidence);
    }
    Ok(TrackResult {
        predicted,
        low_confidence,
        init_seconds,
        frame_seconds,
    })
}

/// Tracks several sequences concurrently, one tracker each. Results come
/// back in input order.
pub fn run_many(
    seqs: &[Sequence],
    config: &TrackerConfig,
    head: Option<&ScorerHead>,
) -> Vec<Result<TrackResult>> {
    par::map(seqs, |s| run_sequence(s, config, head.cloned()))
}

fn check_lengths(predicted: &[BoundingBox], truth: &[BoundingBox]) -> Result<()> {
    if predicted.len() != truth.len() {
        return Err(Error::mismatch(
            "predicted boxes",
            truth.len(),
            predicted.len(),
        ));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    Ok(())
}

/// Fraction of frames with `iou > t` for each of the 21 thresholds.
pub fn success_curve(predicted: &[BoundingBox], truth: &[BoundingBox]) -> Result<Vec<f64>> {
    check_lengths(predicted, truth)?;
    let ious: Vec<f64> = predicted
        .iter()
        .zip(truth)
        .map(|(p, g)| iou(p, g))
        .collect();
    Ok((0..SUCCESS_THRESHOLDS)
        .map(|k| {
            let t = k as f64 / (SUCCESS_THRESHOLDS - 1) as f64;
            ious.iter().filter(|&&v| v > t).count() as f64 / ious.len() as f64
        })
        .collect())
}

/// Mean of the success curve.
pub fn success_auc(predicted: &[BoundingBox], truth: &[BoundingBox]) -> Result<f64> {
    let curve = success_curve(predicted, truth)?;
    Ok(curve.iter().sum::<f64>() / curve.len() as f64)
}

/// Fraction of frames whose center error is at most `threshold` pixels.
pub fn precision_at(
    predicted: &[BoundingBox],
    truth: &[BoundingBox],
    threshold: f64,
) -> Result<f64> {
    check_lengths(predicted, truth)?;
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(p, g)| center_error(p, g) <= threshold)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

pub fn mean_iou(predicted: &[BoundingBox], truth: &[BoundingBox]) -> Result<f64> {
    check_lengths(predicted, truth)?;
    Ok(predicted
        .iter()
        .zip(truth)
        .map(|(p, g)| iou(p, g))
        .sum::<f64>()
        / truth.len() as f64)
}

/// Frames per second over per-frame wall times.
pub fn fps(frame_seconds: &[f64]) -> Result<f64> {
    if frame_seconds.is_empty() {
        return Err(Error::InvalidTiming("no timed frames".into()));
    }
    if frame_seconds.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidTiming(
            "frame times must be finite and non-negative".into(),
        ));
    }
    let total: f64 = frame_seconds.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidTiming("total tracking time is zero".into()));
    }
    Ok(frame_seconds.len() as f64 / total)
}

/// Serialized tracking result. Contains nothing run-dependent, so equal
/// inputs give byte-identical files; wall times go to [`TimingDocument`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub name: String,
    pub frames: usize,
    pub boxes: Vec<[f64; 4]>,
    pub low_confidence: Vec<bool>,
    pub metrics: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub auc: f64,
    pub precision: f64,
    pub precision_threshold: f64,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingDocument {
    pub name: String,
    pub init_seconds: f64,
    pub frame_seconds: Vec<f64>,
    pub fps: Option<f64>,
}

impl Metrics {
    pub fn compute(
        predicted: &[BoundingBox],
        truth: &[BoundingBox],
        precision_threshold: f64,
    ) -> Result<Self> {
        Ok(Self {
            auc: success_auc(predicted, truth)?,
            precision: precision_at(predicted, truth, precision_threshold)?,
            precision_threshold,
            mean_iou: mean_iou(predicted, truth)?,
        })
    }
}

impl ResultDocument {
    pub fn new(
        name: &str,
        result: &TrackResult,
        truth: Option<&[BoundingBox]>,
        precision_threshold: f64,
    ) -> Result<Self> {
        let metrics = truth
            .map(|t| Metrics::compute(&result.predicted, t, precision_threshold))
            .transpose()?;
        Ok(Self {
            name: name.to_string(),
            frames: result.predicted.len(),
            boxes: result
                .predicted
                .iter()
                .map(|b| [b.x(), b.y(), b.width(), b.height()])
                .collect(),
            low_confidence: result.low_confidence.clone(),
            metrics,
        })
    }

    pub fn predicted(&self) -> Result<Vec<BoundingBox>> {
        self.boxes
            .iter()
            .map(|b| BoundingBox::new(b[0], b[1], b[2], b[3]))
            .collect()
    }
}

impl TimingDocument {
    pub fn new(name: &str, result: &TrackResult) -> Self {
        Self {
            name: name.to_string(),
            init_seconds: result.init_seconds,
            frame_seconds: result.frame_seconds.clone(),
            fps: result.fps().ok(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("document serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}
