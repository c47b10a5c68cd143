//! Label-quality scoring and loss terms.
//!
//! The detector's classification head gives per-class sigmoid scores and two
//! auxiliary heads predict, per frame, the tIoU and tND of the regressed
//! segment. Their clamped difference is a class-independent localization
//! reliability that multiplies the class scores into a joint score.

use serde::{Deserialize, Serialize};

use crate::error::{AplError, Result};
use crate::geometry::{self, FrameTargets, Segment};

/// Clamp applied to probabilities before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// Per-frame detector outputs on a single temporal grid of `T` frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePredictions {
    /// `cls[k][t]`: sigmoid score of class `k` at frame `t`.
    pub cls: Vec<Vec<f64>>,
    pub tiou_hat: Vec<f64>,
    pub tnd_hat: Vec<f64>,
    /// Left/right offsets (seconds) from each frame to the regressed boundaries.
    pub offsets: Vec<(f64, f64)>,
}

impl FramePredictions {
    pub fn new(cls: Vec<Vec<f64>>, tiou_hat: Vec<f64>, tnd_hat: Vec<f64>, offsets: Vec<(f64, f64)>) -> Result<Self> {
        let preds = FramePredictions {
            cls,
            tiou_hat,
            tnd_hat,
            offsets,
        };
        preds.validate()?;
        Ok(preds)
    }

    pub fn empty(num_classes: usize) -> Self {
        FramePredictions {
            cls: vec![Vec::new(); num_classes],
            tiou_hat: Vec::new(),
            tnd_hat: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cls.len()
    }

    pub fn num_frames(&self) -> usize {
        self.tiou_hat.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.tiou_hat.len();
        let check_len = |what, found: usize| {
            if found != t {
                Err(AplError::LengthMismatch {
                    what,
                    expected: t,
                    found,
                })
            } else {
                Ok(())
            }
        };
        check_len("tnd_hat frames", self.tnd_hat.len())?;
        check_len("offset frames", self.offsets.len())?;
        for row in &self.cls {
            check_len("class score frames", row.len())?;
        }
        let in_unit = |v: &f64| (0.0..=1.0).contains(v);
        if !self.cls.iter().flatten().all(in_unit)
            || !self.tiou_hat.iter().all(in_unit)
            || !self.tnd_hat.iter().all(in_unit)
        {
            return Err(AplError::InvalidArgument("prediction scores must lie in [0, 1]".into()));
        }
        if !self
            .offsets
            .iter()
            .all(|&(l, r)| l >= 0.0 && r >= 0.0 && l.is_finite() && r.is_finite())
        {
            return Err(AplError::InvalidArgument(
                "regression offsets must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Clamped localization reliability of frame `t`.
    pub fn reliability(&self, t: usize, epsilon: f64) -> f64 {
        (self.tiou_hat[t] - self.tnd_hat[t]).max(epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Floor for the tIoU - tND difference.
    pub epsilon: f64,
    pub focal_gamma: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            epsilon: 0.01,
            focal_gamma: 2.0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(AplError::Config("scoring.epsilon must be > 0".into()));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(AplError::Config("scoring.focal_gamma must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the unsupervised branch.
    pub beta: f64,
    pub lambda_reg: f64,
    pub lambda_locq: f64,
    pub lambda_acp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 2.0,
            lambda_reg: 1.0,
            lambda_locq: 0.1,
            lambda_acp: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.beta, self.lambda_reg, self.lambda_locq, self.lambda_acp];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(AplError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Loss components of one branch (supervised or unsupervised).
///
/// `cls`, `reg` and `locq` are sums over frames, not yet divided by `n_pos`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub cls: f64,
    pub reg: f64,
    pub locq: f64,
    pub acp: f64,
    pub icd: f64,
    pub n_pos: usize,
    pub total: f64,
}

impl LossReport {
    /// Builds a report whose `total` is the branch loss under `weights`,
    /// counting the discriminator term.
    pub fn new(cls: f64, reg: f64, locq: f64, acp: f64, icd: f64, n_pos: usize, weights: &LossWeights) -> Result<Self> {
        let mut report = LossReport {
            cls,
            reg,
            locq,
            acp,
            icd,
            n_pos,
            total: 0.0,
        };
        report.total = report.branch_loss(weights, true)?;
        Ok(report)
    }

    pub fn branch_loss(&self, w: &LossWeights, include_icd: bool) -> Result<f64> {
        let frame_terms = self.cls + w.lambda_reg * self.reg + w.lambda_locq * self.locq;
        let normalized = if self.n_pos == 0 {
            for (term, v) in [("cls", self.cls), ("reg", self.reg), ("locq", self.locq)] {
                if v != 0.0 {
                    return Err(AplError::DegeneratePositiveCount { term });
                }
            }
            0.0
        } else {
            frame_terms / self.n_pos as f64
        };
        let icd = if include_icd { self.icd } else { 0.0 };
        Ok(normalized + w.lambda_acp * self.acp + icd)
    }

    /// Whether `total` matches a re-assembly from the components.
    pub fn is_consistent(&self, weights: &LossWeights) -> bool {
        self.branch_loss(weights, true)
            .map(|t| (t - self.total).abs() <= 1e-9 * t.abs().max(1.0))
            .unwrap_or(false)
    }
}

/// Joint score `max(tiou_hat - tnd_hat, epsilon) * cls`, shape `K x T`.
pub fn joint_score(preds: &FramePredictions, cfg: &ScoringConfig) -> Vec<Vec<f64>> {
    let reliability: Vec<f64> = (0..preds.num_frames())
        .map(|t| preds.reliability(t, cfg.epsilon))
        .collect();
    preds
        .cls
        .iter()
        .map(|row| row.iter().zip(&reliability).map(|(c, r)| c * r).collect())
        .collect()
}

/// DIoU-based soft classification target: zero everywhere except the true
/// class, which carries the clamped `tiou - tnd`.
pub fn soft_label(
    class_index: usize,
    targets: (f64, f64),
    num_classes: usize,
    cfg: &ScoringConfig,
) -> Result<Vec<f64>> {
    if class_index >= num_classes {
        return Err(AplError::ClassOutOfRange {
            index: class_index,
            classes: num_classes,
        });
    }
    let mut label = vec![0.0; num_classes];
    label[class_index] = (targets.0 - targets.1).max(cfg.epsilon);
    Ok(label)
}

/// Soft-target binary cross entropy with the prediction clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Quality focal loss, summed over classes: `sum |y - p|^gamma * BCE(p, y)`.
///
/// For `gamma > 0` the loss vanishes exactly when `pred == target`; with
/// `gamma = 0` it is plain soft-target BCE.
pub fn focal_loss(pred: &[f64], target: &[f64], gamma: f64) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(AplError::LengthMismatch {
            what: "focal loss prediction vs target",
            expected: target.len(),
            found: pred.len(),
        });
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| (y - p).abs().powf(gamma) * bce(p, y))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocqLoss {
    pub value: f64,
    /// Set when the mask selects no frame; `value` is then 0.
    pub no_positive_frames: bool,
}

/// Mean over masked frames of `BCE(tiou_hat, tiou) + BCE(tnd_hat, tnd)`.
pub fn locq_loss(preds: &FramePredictions, targets: &FrameTargets) -> Result<LocqLoss> {
    let t = targets.len();
    if preds.num_frames() != t || targets.tiou.len() != t || targets.tnd.len() != t {
        return Err(AplError::LengthMismatch {
            what: "localization-quality predictions vs targets",
            expected: t,
            found: preds.num_frames(),
        });
    }
    let sum = locq_loss_sum(preds, targets);
    let n = targets.positive_frames();
    if n == 0 {
        return Ok(LocqLoss {
            value: 0.0,
            no_positive_frames: true,
        });
    }
    Ok(LocqLoss {
        value: sum / n as f64,
        no_positive_frames: false,
    })
}

/// Un-normalized sum of the per-frame localization-quality loss.
pub fn locq_loss_sum(preds: &FramePredictions, targets: &FrameTargets) -> f64 {
    (0..targets.len())
        .filter(|&t| targets.inside_mask[t])
        .map(|t| bce(preds.tiou_hat[t], targets.tiou[t]) + bce(preds.tnd_hat[t], targets.tnd[t]))
        .sum()
}

pub fn diou_loss(pred: &Segment, gt: &Segment) -> f64 {
    1.0 - geometry::diou(pred, gt)
}

/// Total objective: supervised branch (with the discriminator term) plus
/// `beta` times the unsupervised branch (without it).
pub fn assemble_total_loss(sup: &LossReport, unsup: &LossReport, w: &LossWeights) -> Result<f64> {
    Ok(sup.branch_loss(w, true)? + w.beta * unsup.branch_loss(w, false)?)
}
