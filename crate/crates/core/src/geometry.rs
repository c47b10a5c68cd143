//! Temporal interval geometry.
//!
//! All quantities are in seconds. For two segments `a` and `b`:
//!
//! - tIoU is `|a ∩ b| / |a ∪ b|`,
//! - tND is the squared distance between the centers divided by the squared
//!   length of the smallest interval covering both,
//! - DIoU is `tIoU - tND`.

use serde::{Deserialize, Serialize};

use crate::error::{AplError, Result};

/// A closed temporal interval `[start, end]` with `0 <= start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Segment {
    start: f64,
    end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(AplError::InvalidSegment {
                start,
                end,
                reason: "bounds must be finite",
            });
        }
        if start < 0.0 {
            return Err(AplError::InvalidSegment {
                start,
                end,
                reason: "start must be non-negative",
            });
        }
        if start >= end {
            return Err(AplError::InvalidSegment {
                start,
                end,
                reason: "start must be strictly before end",
            });
        }
        Ok(Segment { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn intersection(&self, other: &Segment) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }

    pub fn union(&self, other: &Segment) -> f64 {
        self.length() + other.length() - self.intersection(other)
    }

    /// Length of the smallest interval covering both segments.
    pub fn cover(&self, other: &Segment) -> f64 {
        self.end.max(other.end) - self.start.min(other.start)
    }

    pub fn tiou(&self, other: &Segment) -> f64 {
        tiou(self, other)
    }

    pub fn tnd(&self, other: &Segment) -> f64 {
        tnd(self, other)
    }

    pub fn diou(&self, other: &Segment) -> f64 {
        diou(self, other)
    }
}

impl TryFrom<[f64; 2]> for Segment {
    type Error = AplError;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Segment::new(v[0], v[1])
    }
}

impl From<Segment> for [f64; 2] {
    fn from(s: Segment) -> Self {
        [s.start, s.end]
    }
}

pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.intersection(b);
    let union = a.length() + b.length() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn tnd(a: &Segment, b: &Segment) -> f64 {
    let rho = a.center() - b.center();
    let d = a.cover(b);
    let value = (rho * rho) / (d * d);
    debug_assert!(value < 1.0, "tND must stay below 1, got {value}");
    value
}

pub fn diou(a: &Segment, b: &Segment) -> f64 {
    tiou(a, b) - tnd(a, b)
}

/// Left/right offsets from each frame time to the boundaries of `gt`.
pub fn regression_targets(gt: &Segment, frame_times: &[f64]) -> Result<Vec<(f64, f64)>> {
    frame_times
        .iter()
        .map(|&t| {
            if !gt.contains(t) {
                return Err(AplError::FrameOutsideAction {
                    time: t,
                    start: gt.start,
                    end: gt.end,
                });
            }
            Ok((t - gt.start, gt.end - t))
        })
        .collect()
}

/// Localization-quality supervision: per-frame tIoU and tND between the
/// regressed segment and its ground truth, defined on frames inside an action.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameTargets {
    pub tiou: Vec<f64>,
    pub tnd: Vec<f64>,
    pub inside_mask: Vec<bool>,
}

impl FrameTargets {
    pub fn len(&self) -> usize {
        self.inside_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inside_mask.is_empty()
    }

    pub fn positive_frames(&self) -> usize {
        self.inside_mask.iter().filter(|&&m| m).count()
    }
}

pub fn locq_targets(
    predicted: &[Option<Segment>],
    gt: &[Option<Segment>],
    inside_mask: &[bool],
) -> Result<FrameTargets> {
    let n = inside_mask.len();
    if predicted.len() != n {
        return Err(AplError::LengthMismatch {
            what: "predicted segments vs mask",
            expected: n,
            found: predicted.len(),
        });
    }
    if gt.len() != n {
        return Err(AplError::LengthMismatch {
            what: "ground-truth segments vs mask",
            expected: n,
            found: gt.len(),
        });
    }

    let mut targets = FrameTargets {
        tiou: vec![0.0; n],
        tnd: vec![0.0; n],
        inside_mask: inside_mask.to_vec(),
    };
    for t in (0..n).filter(|&t| inside_mask[t]) {
        let (Some(p), Some(g)) = (&predicted[t], &gt[t]) else {
            return Err(AplError::InvalidArgument(format!(
                "frame {t} is inside an action but has no predicted or ground-truth segment"
            )));
        };
        targets.tiou[t] = tiou(p, g);
        targets.tnd[t] = tnd(p, g);
    }
    Ok(targets)
}

pub fn frame_time(index: usize, fps: f64) -> f64 {
    index as f64 / fps
}

/// Times of frames `0..n` on a grid of `fps` frames per second.
pub fn frame_times(n: usize, fps: f64) -> Vec<f64> {
    (0..n).map(|i| frame_time(i, fps)).collect()
}

/// Indices of the grid frames whose time lies inside `segment`.
pub fn frames_inside(segment: &Segment, n_frames: usize, fps: f64) -> std::ops::Range<usize> {
    let first = (segment.start * fps).ceil().max(0.0) as usize;
    let last = ((segment.end * fps).floor() as usize + 1).min(n_frames);
    first.min(last)..last
}
