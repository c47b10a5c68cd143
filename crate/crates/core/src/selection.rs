//! From frame-level predictions to a partitioned pseudo-label set.
//!
//! Each frame regresses a segment and carries a joint score per class.
//! Decoding turns frames into scored instances, Gaussian Soft-NMS decays
//! overlapping same-class duplicates, and the dynamic partition splits the
//! survivors into positives, candidates and rejected instances using a
//! threshold derived from the score distribution itself.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AplError, Result};
use crate::geometry::{self, Segment};
use crate::quality::{joint_score, FramePredictions, ScoringConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub segment: Segment,
    pub class_index: usize,
    pub score: f64,
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_frame: Option<usize>,
}

impl Instance {
    pub fn new(segment: Segment, class_index: usize, score: f64, video_id: impl Into<String>) -> Self {
        Instance {
            segment,
            class_index,
            score,
            video_id: video_id.into(),
            source_frame: None,
        }
    }

    pub fn with_source_frame(mut self, frame: usize) -> Self {
        self.source_frame = Some(frame);
        self
    }

    /// Stable identifier: video, source frame (or start time) and class.
    pub fn key(&self) -> String {
        match self.source_frame {
            Some(f) => format!("{}/f{}/c{}", self.video_id, f, self.class_index),
            None => format!(
                "{}/s{:.6}-{:.6}/c{}",
                self.video_id,
                self.segment.start(),
                self.segment.end(),
                self.class_index
            ),
        }
    }
}

/// Total order used everywhere instances are ranked: score descending, then
/// start ascending, video id, class index.
pub fn rank_order(a: &Instance, b: &Instance) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.segment.start().total_cmp(&b.segment.start()))
        .then_with(|| a.video_id.cmp(&b.video_id))
        .then(a.class_index.cmp(&b.class_index))
        .then(a.segment.end().total_cmp(&b.segment.end()))
        .then(a.source_frame.cmp(&b.source_frame))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Instances scoring at or below this are rejected outright.
    pub tau_neg: f64,
    /// Gaussian Soft-NMS bandwidth.
    pub nms_sigma: f64,
    /// Instances decayed below this score are dropped.
    pub nms_floor: f64,
    pub pre_nms_topk: usize,
    /// `tau_pos = mean + multiplier * std` over the survivors.
    pub tau_pos_multiplier: f64,
    /// Replaces the dynamic threshold with a constant when set.
    pub fixed_tau_pos: Option<f64>,
    /// Decode every class above `nms_floor` per frame instead of the argmax.
    pub multi_class: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            tau_neg: 0.15,
            nms_sigma: 0.5,
            nms_floor: 0.001,
            pre_nms_topk: 2000,
            tau_pos_multiplier: 1.0,
            fixed_tau_pos: None,
            multi_class: false,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau_neg) {
            return Err(AplError::Config("selection.tau_neg must lie in [0, 1)".into()));
        }
        if !(self.nms_sigma > 0.0) {
            return Err(AplError::Config("selection.nms_sigma must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.nms_floor) {
            return Err(AplError::Config("selection.nms_floor must lie in [0, 1)".into()));
        }
        if self.pre_nms_topk == 0 {
            return Err(AplError::Config("selection.pre_nms_topk must be positive".into()));
        }
        if let Some(t) = self.fixed_tau_pos {
            if !(t > self.tau_neg && t <= 1.0) {
                return Err(AplError::Config(
                    "selection.fixed_tau_pos must lie in (tau_neg, 1]".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decoded {
    pub instances: Vec<Instance>,
    /// Frames whose regressed segment was empty or invalid.
    pub dropped: usize,
}

/// One instance per frame (at the argmax class, or every class with
/// `multi_class`), segment `[t - left, t + right]` clipped at zero, scored by
/// the joint score. Keeps the `pre_nms_topk` best.
pub fn decode_instances(
    preds: &FramePredictions,
    frame_times: &[f64],
    video_id: &str,
    scoring: &ScoringConfig,
    cfg: &SelectionConfig,
) -> Result<Decoded> {
    if frame_times.len() != preds.num_frames() {
        return Err(AplError::LengthMismatch {
            what: "frame times vs predictions",
            expected: preds.num_frames(),
            found: frame_times.len(),
        });
    }
    let joint = joint_score(preds, scoring);
    let mut out = Decoded::default();

    for (t, &time) in frame_times.iter().enumerate() {
        let (left, right) = preds.offsets[t];
        let segment = match Segment::new((time - left).max(0.0), time + right) {
            Ok(s) => s,
            Err(_) => {
                out.dropped += 1;
                continue;
            }
        };
        let classes: Vec<usize> = if cfg.multi_class {
            (0..preds.num_classes())
                .filter(|&k| joint[k][t] >= cfg.nms_floor)
                .collect()
        } else {
            argmax_class(&joint, t).into_iter().collect()
        };
        for k in classes {
            out.instances
                .push(Instance::new(segment, k, joint[k][t], video_id).with_source_frame(t));
        }
    }

    out.instances.sort_by(rank_order);
    out.instances.truncate(cfg.pre_nms_topk);
    Ok(out)
}

fn argmax_class(joint: &[Vec<f64>], t: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, row) in joint.iter().enumerate() {
        if best.is_none_or(|(_, s)| row[t] > s) {
            best = Some((k, row[t]));
        }
    }
    best.map(|(k, _)| k)
}

/// Per-class Gaussian Soft-NMS.
///
/// Repeatedly takes the best remaining instance of a class and multiplies
/// every other remaining instance of that class by `exp(-tiou^2 / sigma)`.
/// Instances falling below `nms_floor` are dropped. Output is rank-ordered.
pub fn soft_nms(instances: &[Instance], cfg: &SelectionConfig) -> Vec<Instance> {
    let mut remaining: Vec<Instance> = instances.to_vec();
    let mut kept = Vec::with_capacity(remaining.len());

    while !remaining.is_empty() {
        let best_idx = remaining
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| rank_order(a, b))
            .map(|(i, _)| i)
            .expect("non-empty");
        let best = remaining.swap_remove(best_idx);

        remaining.retain_mut(|other| {
            if other.class_index == best.class_index && other.video_id == best.video_id {
                let overlap = geometry::tiou(&best.segment, &other.segment);
                other.score *= (-(overlap * overlap) / cfg.nms_sigma).exp();
            }
            other.score >= cfg.nms_floor
        });
        kept.push(best);
    }

    kept.sort_by(rank_order);
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementAction {
    Kept,
    EapRemoved,
    MppPromoted,
    Unscorable,
}

impl fmt::Display for RefinementAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RefinementAction::Kept => "kept",
            RefinementAction::EapRemoved => "eap_removed",
            RefinementAction::MppPromoted => "mpp_promoted",
            RefinementAction::Unscorable => "unscorable",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementEntry {
    pub instance_id: String,
    pub action: RefinementAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub positives: Vec<Instance>,
    pub candidates: Vec<Instance>,
    pub rejected: Vec<Instance>,
    pub tau_pos: f64,
    pub tau_neg: f64,
    #[serde(default)]
    pub no_survivors: bool,
    #[serde(default)]
    pub refinement_log: Vec<RefinementEntry>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.positives.len() + self.candidates.len() + self.rejected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Instance> {
        self.positives.iter().chain(&self.candidates).chain(&self.rejected)
    }
}

/// Splits NMS survivors into positives (`score >= tau_pos`), candidates
/// (`tau_neg < score < tau_pos`) and rejected (`score <= tau_neg`).
///
/// `tau_pos` is `mean + multiplier * std` (population) of the scores above
/// `tau_neg`, clamped to `(tau_neg, 1]`, unless `fixed_tau_pos` is set.
pub fn dynamic_partition(instances: &[Instance], cfg: &SelectionConfig) -> PseudoLabelSet {
    let mut sorted = instances.to_vec();
    sorted.sort_by(rank_order);

    let (survivors, rejected): (Vec<Instance>, Vec<Instance>) = sorted.into_iter().partition(|i| i.score > cfg.tau_neg);

    if survivors.is_empty() {
        return PseudoLabelSet {
            positives: Vec::new(),
            candidates: Vec::new(),
            rejected,
            tau_pos: 1.0,
            tau_neg: cfg.tau_neg,
            no_survivors: true,
            refinement_log: Vec::new(),
        };
    }

    let tau_pos = match cfg.fixed_tau_pos {
        Some(t) => t,
        None => {
            let scores: Vec<f64> = survivors.iter().map(|i| i.score).collect();
            let (mean, std) = mean_and_population_std(&scores);
            let t = (mean + cfg.tau_pos_multiplier * std).min(1.0);
            // mean > tau_neg already; the guard only matters for negative multipliers.
            if t <= cfg.tau_neg {
                next_up(cfg.tau_neg)
            } else {
                t
            }
        }
    };

    let (positives, candidates) = survivors.into_iter().partition(|i| i.score >= tau_pos);
    PseudoLabelSet {
        positives,
        candidates,
        rejected,
        tau_pos,
        tau_neg: cfg.tau_neg,
        no_survivors: false,
        refinement_log: Vec::new(),
    }
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

/// Mean and population standard deviation, accumulated in sorted order so the
/// result does not depend on input order.
pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn inst(start: f64, end: f64, class: usize, score: f64) -> Instance {
        Instance::new(Segment::new(start, end).unwrap(), class, score, "v")
    }

    #[test]
    fn decode_example() {
        // Frame at t = 5 with offsets (1, 3); class 2 has the best joint score.
        let preds = FramePredictions::new(
            vec![vec![0.1], vec![0.2], vec![0.9]],
            vec![0.8],
            vec![0.1],
            vec![(1.0, 3.0)],
        )
        .unwrap();
        let d = decode_instances(
            &preds,
            &[5.0],
            "v",
            &ScoringConfig::default(),
            &SelectionConfig::default(),
        )
        .unwrap();
        assert_eq!(d.instances.len(), 1);
        let i = &d.instances[0];
        assert_eq!(i.segment, Segment::new(4.0, 8.0).unwrap());
        assert_eq!(i.class_index, 2);
        assert_abs_diff_eq!(i.score, 0.63, epsilon = 1e-12);
        assert_eq!(i.source_frame, Some(0));
    }

    #[test]
    fn decode_drops_zero_length() {
        let preds = FramePredictions::new(vec![vec![0.9]], vec![0.8], vec![0.1], vec![(0.0, 0.0)]).unwrap();
        let d = decode_instances(
            &preds,
            &[5.0],
            "v",
            &ScoringConfig::default(),
            &SelectionConfig::default(),
        )
        .unwrap();
        assert!(d.instances.is_empty());
        assert_eq!(d.dropped, 1);
    }

    #[test]
    fn decode_empty_input() {
        let d = decode_instances(
            &FramePredictions::empty(3),
            &[],
            "v",
            &ScoringConfig::default(),
            &SelectionConfig::default(),
        )
        .unwrap();
        assert!(d.instances.is_empty());
        assert_eq!(d.dropped, 0);
    }

    #[test]
    fn decode_multi_class_and_topk() {
        let preds = FramePredictions::new(
            vec![vec![0.5, 0.6], vec![0.4, 0.0]],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![(1.0, 1.0), (1.0, 1.0)],
        )
        .unwrap();
        let cfg = SelectionConfig {
            multi_class: true,
            pre_nms_topk: 2,
            ..Default::default()
        };
        let d = decode_instances(&preds, &[2.0, 3.0], "v", &ScoringConfig::default(), &cfg).unwrap();
        let scores: Vec<f64> = d.instances.iter().map(|i| i.score).collect();
        assert_eq!(scores, vec![0.6, 0.5]);
    }

    #[test]
    fn soft_nms_decay_fixture() {
        // [0, 8] and [2, 10]: intersection 6, union 10, tIoU 0.6.
        let a = inst(0.0, 8.0, 0, 0.9);
        let b = inst(2.0, 10.0, 0, 0.8);
        assert_abs_diff_eq!(a.segment.tiou(&b.segment), 0.6, epsilon = 1e-12);
        let out = soft_nms(&[b, a], &SelectionConfig::default());
        assert_eq!(out.len(), 2);
        assert_abs_diff_eq!(out[0].score, 0.9, epsilon = 1e-12);
        // 0.8 * exp(-0.36 / 0.5)
        assert_abs_diff_eq!(out[1].score, 0.389402, epsilon = 1e-6);
    }

    #[test]
    fn soft_nms_disjoint_and_cross_class_unchanged() {
        let cfg = SelectionConfig::default();
        let out = soft_nms(&[inst(0., 1., 0, 0.9), inst(5., 6., 0, 0.8)], &cfg);
        assert_eq!(out.iter().map(|i| i.score).collect::<Vec<_>>(), vec![0.9, 0.8]);
        let out = soft_nms(&[inst(0., 4., 0, 0.9), inst(0., 4., 1, 0.8)], &cfg);
        assert_eq!(out.iter().map(|i| i.score).collect::<Vec<_>>(), vec![0.9, 0.8]);
    }

    #[test]
    fn soft_nms_drops_below_floor() {
        let cfg = SelectionConfig {
            nms_floor: 0.2,
            ..Default::default()
        };
        // Identical segments decay by exp(-2).
        let out = soft_nms(&[inst(0., 4., 0, 0.9), inst(0., 4., 0, 0.8)], &cfg);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn partition_fixture() {
        let set = dynamic_partition(
            &[
                inst(0., 1., 0, 0.5),
                inst(1., 2., 0, 0.9),
                inst(2., 3., 0, 0.1),
                inst(3., 4., 0, 0.7),
            ],
            &SelectionConfig::default(),
        );
        assert_abs_diff_eq!(set.tau_pos, 0.7 + (0.08f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(set.tau_pos, 0.863299, epsilon = 1e-6);
        let scores = |v: &[Instance]| v.iter().map(|i| i.score).collect::<Vec<_>>();
        assert_eq!(scores(&set.positives), vec![0.9]);
        assert_eq!(scores(&set.candidates), vec![0.7, 0.5]);
        assert_eq!(scores(&set.rejected), vec![0.1]);
    }

    #[test]
    fn partition_single_survivor() {
        let set = dynamic_partition(&[inst(0., 1., 0, 0.5)], &SelectionConfig::default());
        assert_eq!(set.tau_pos, 0.5);
        assert_eq!(set.positives.len(), 1);
    }

    #[test]
    fn partition_no_survivors() {
        let set = dynamic_partition(
            &[inst(0., 1., 0, 0.15), inst(1., 2., 0, 0.05)],
            &SelectionConfig::default(),
        );
        assert!(set.no_survivors);
        assert_eq!(set.tau_pos, 1.0);
        assert!(set.positives.is_empty() && set.candidates.is_empty());
        assert_eq!(set.rejected.len(), 2);
    }

    #[test]
    fn partition_fixed_threshold() {
        let cfg = SelectionConfig {
            fixed_tau_pos: Some(0.3),
            ..Default::default()
        };
        let set = dynamic_partition(&[inst(0., 1., 0, 0.31), inst(1., 2., 0, 0.2)], &cfg);
        assert_eq!(set.tau_pos, 0.3);
        assert_eq!(set.positives.len(), 1);
        assert_eq!(set.candidates.len(), 1);
    }

    fn instances_strategy() -> impl Strategy<Value = Vec<Instance>> {
        proptest::collection::vec((0.0..50.0f64, 0.5..10.0f64, 0usize..3, 0.0..1.0f64), 0..12)
            .prop_map(|v| v.into_iter().map(|(s, l, c, p)| inst(s, s + l, c, p)).collect())
    }

    proptest! {
        #[test]
        fn partition_exhaustive_exclusive_order_invariant(mut xs in instances_strategy(), seed in 0u64..1000) {
            let cfg = SelectionConfig::default();
            let a = dynamic_partition(&xs, &cfg);
            prop_assert_eq!(a.len(), xs.len());
            for p in &a.positives {
                prop_assert!(p.score >= a.tau_pos);
                for c in &a.candidates {
                    prop_assert!(p.score >= c.score);
                }
            }
            for c in &a.candidates {
                prop_assert!(c.score > a.tau_neg && c.score < a.tau_pos);
            }
            for r in &a.rejected {
                prop_assert!(r.score <= a.tau_neg);
            }
            // Reverse/rotate the input; the partition must not change.
            xs.reverse();
            if !xs.is_empty() {
                let k = (seed as usize) % xs.len();
                xs.rotate_left(k);
            }
            let b = dynamic_partition(&xs, &cfg);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn soft_nms_only_decays(xs in instances_strategy()) {
            let cfg = SelectionConfig::default();
            let out = soft_nms(&xs, &cfg);
            prop_assert!(out.len() <= xs.len());
            for o in &out {
                let src = xs.iter().find(|x| x.segment == o.segment && x.class_index == o.class_index
                    && x.score >= o.score);
                prop_assert!(src.is_some());
            }
            for w in out.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
        }
    }
}
