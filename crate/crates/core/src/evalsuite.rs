//! Detection mAP over tIoU grids and pseudo-label quality metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{AplError, Result};
use crate::geometry::tiou;
use crate::selection::{rank_order, Instance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tiou_grid: Vec<f64>,
    /// A pseudo label counts for Pos Acc when its tIoU is strictly above this.
    pub pos_tiou: f64,
    /// Average quality metrics per video instead of pooling all labels.
    pub per_video: bool,
    /// Let each ground truth explain at most one pseudo label.
    pub exclusive_matching: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self::thumos()
    }
}

impl EvalConfig {
    pub fn thumos() -> Self {
        EvalConfig {
            tiou_grid: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            pos_tiou: 0.5,
            per_video: false,
            exclusive_matching: false,
        }
    }

    pub fn activitynet() -> Self {
        EvalConfig {
            tiou_grid: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            ..Self::thumos()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tiou_grid.is_empty() {
            return Err(AplError::Config("eval.tiou_grid must not be empty".into()));
        }
        if self.tiou_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) || self.tiou_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AplError::Config(
                "eval.tiou_grid must be strictly increasing within (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.pos_tiou) {
            return Err(AplError::Config("eval.pos_tiou must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ranks `preds` and marks each as true or false positive: a prediction takes
/// the highest-tIoU still unmatched ground truth of the same video with tIoU
/// at or above `thresh`.
pub fn greedy_match(preds: &[Instance], gts: &[Instance], thresh: f64) -> Vec<bool> {
    let mut order: Vec<&Instance> = preds.iter().collect();
    order.sort_by(|a, b| rank_order(a, b));
    let mut used = vec![false; gts.len()];
    order
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if used[g] || gt.video_id != p.video_id {
                    continue;
                }
                let o = tiou(&p.segment, &gt.segment);
                if o >= thresh && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, _)) => {
                    used[g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Area under the monotone precision envelope of a ranked TP/FP sequence.
pub fn ap_from_hits(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        tp += usize::from(h);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Single-class AP. `None` when there is neither a prediction nor a ground
/// truth; `Some(0.0)` when only ground truth is missing.
pub fn average_precision(preds: &[Instance], gts: &[Instance], thresh: f64) -> Option<f64> {
    if gts.is_empty() {
        return (!preds.is_empty()).then_some(0.0);
    }
    Some(ap_from_hits(&greedy_match(preds, gts, thresh), gts.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub threshold: f64,
    pub class: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// `(threshold, mAP)` in grid order.
    pub per_threshold: Vec<(f64, f64)>,
    pub per_class: Vec<ClassAp>,
    pub average: f64,
}

impl MapReport {
    /// `threshold,class,ap` rows, with class names when given.
    pub fn to_csv(&self, class_names: Option<&[String]>) -> String {
        let mut out = String::from("threshold,class,ap\n");
        for row in &self.per_class {
            let class = class_names
                .and_then(|n| n.get(row.class).cloned())
                .unwrap_or_else(|| row.class.to_string());
            out.push_str(&format!("{:.2},{},{:.6}\n", row.threshold, class, row.ap));
        }
        out
    }
}

fn by_class(instances: &[Instance]) -> BTreeMap<usize, Vec<Instance>> {
    let mut map: BTreeMap<usize, Vec<Instance>> = BTreeMap::new();
    for i in instances {
        map.entry(i.class_index).or_default().push(i.clone());
    }
    map
}

/// AP per class at each threshold, averaged over classes that have ground
/// truth, then over the grid.
pub fn mean_ap(preds: &[Instance], gts: &[Instance], cfg: &EvalConfig) -> Result<MapReport> {
    cfg.validate()?;
    let gt_by_class = by_class(gts);
    let pred_by_class = by_class(preds);
    let empty = Vec::new();
    let mut per_threshold = Vec::with_capacity(cfg.tiou_grid.len());
    let mut per_class = Vec::new();
    for &t in &cfg.tiou_grid {
        let mut sum = 0.0;
        for (&class, class_gts) in &gt_by_class {
            let class_preds = pred_by_class.get(&class).unwrap_or(&empty);
            let ap = average_precision(class_preds, class_gts, t).unwrap_or(0.0);
            sum += ap;
            per_class.push(ClassAp {
                threshold: t,
                class,
                ap,
            });
        }
        let map = if gt_by_class.is_empty() {
            0.0
        } else {
            sum / gt_by_class.len() as f64
        };
        per_threshold.push((t, map));
    }
    let average = per_threshold.iter().map(|(_, m)| m).sum::<f64>() / per_threshold.len() as f64;
    Ok(MapReport {
        per_threshold,
        per_class,
        average,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityReport {
    pub class_acc: f64,
    pub avg_tiou: f64,
    pub pos_acc: f64,
    pub n_pseudo: usize,
    pub n_gt: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    same_class: usize,
    tiou_sum: f64,
    positive: usize,
    n: usize,
}

impl Tally {
    fn rates(&self) -> (f64, f64, f64) {
        if self.n == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = self.n as f64;
        (self.same_class as f64 / n, self.tiou_sum / n, self.positive as f64 / n)
    }
}

fn tally(pseudo: &[Instance], gts: &[Instance], cfg: &EvalConfig) -> Tally {
    let mut order: Vec<&Instance> = pseudo.iter().collect();
    if cfg.exclusive_matching {
        order.sort_by(|a, b| rank_order(a, b));
    }
    let mut used = vec![false; gts.len()];
    let mut t = Tally::default();
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt.video_id != p.video_id || (cfg.exclusive_matching && used[g]) {
                continue;
            }
            let o = tiou(&p.segment, &gt.segment);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        t.n += 1;
        if let Some((g, o)) = best {
            used[g] = true;
            t.tiou_sum += o;
            if gts[g].class_index == p.class_index {
                t.same_class += 1;
                if o > cfg.pos_tiou {
                    t.positive += 1;
                }
            }
        }
    }
    t
}

/// Each pseudo label is compared with its best-tIoU ground truth in the same
/// video (class-agnostic). Class Acc counts matching classes, Avg tIoU
/// averages the best tIoU, Pos Acc additionally requires tIoU above
/// `pos_tiou`.
pub fn pseudo_label_quality(pseudo: &[Instance], gts: &[Instance], cfg: &EvalConfig) -> QualityReport {
    let (class_acc, avg_tiou, pos_acc) = if cfg.per_video {
        let videos: BTreeSet<&str> = pseudo.iter().map(|p| p.video_id.as_str()).collect();
        let mut sums = (0.0, 0.0, 0.0);
        for v in &videos {
            let p: Vec<Instance> = pseudo.iter().filter(|i| i.video_id == *v).cloned().collect();
            let g: Vec<Instance> = gts.iter().filter(|i| i.video_id == *v).cloned().collect();
            let r = tally(&p, &g, cfg).rates();
            sums = (sums.0 + r.0, sums.1 + r.1, sums.2 + r.2);
        }
        let n = videos.len().max(1) as f64;
        (sums.0 / n, sums.1 / n, sums.2 / n)
    } else {
        tally(pseudo, gts, cfg).rates()
    };
    QualityReport {
        class_acc,
        avg_tiou,
        pos_acc,
        n_pseudo: pseudo.len(),
        n_gt: gts.len(),
    }
}
