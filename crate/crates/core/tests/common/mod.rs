//! Brute-force reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use apl_core::geometry::{tiou, Segment};
use apl_core::selection::{rank_order, Instance};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn seg(s: f64, e: f64) -> Segment {
    Segment::new(s, e).unwrap()
}

pub fn random_instances(rng: &mut ChaCha8Rng, n: usize, videos: usize, classes: usize) -> Vec<Instance> {
    (0..n)
        .map(|_| {
            let s = rng.random_range(0.0..20.0);
            let len = rng.random_range(0.5..8.0);
            Instance::new(
                seg(s, s + len),
                rng.random_range(0..classes),
                rng.random_range(0.01..1.0),
                format!("v{}", rng.random_range(0..videos)),
            )
        })
        .collect()
}

/// Tries every one-to-one assignment of ranked predictions to same-video
/// ground truths at or above `thresh`, and keeps the one whose sequence of
/// (matched, tIoU) in rank order is lexicographically greatest.
pub fn exhaustive_hits(preds: &[Instance], gts: &[Instance], thresh: f64) -> Vec<bool> {
    fn go(
        i: usize,
        preds: &[Instance],
        gts: &[Instance],
        thresh: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<(bool, f64)>,
        best: &mut Option<Vec<(bool, f64)>>,
    ) {
        if i == preds.len() {
            let better = match best {
                None => true,
                Some(b) => cur
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x.0.cmp(&y.0)).then(x.1.total_cmp(&y.1)))
                    .find(|o| o.is_ne())
                    .is_some_and(|o| o.is_gt()),
            };
            if better {
                *best = Some(cur.clone());
            }
            return;
        }
        for g in 0..gts.len() {
            let o = tiou(&preds[i].segment, &gts[g].segment);
            if !used[g] && gts[g].video_id == preds[i].video_id && o >= thresh {
                used[g] = true;
                cur.push((true, o));
                go(i + 1, preds, gts, thresh, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
        cur.push((false, 0.0));
        go(i + 1, preds, gts, thresh, used, cur, best);
        cur.pop();
    }
    let mut ranked = preds.to_vec();
    ranked.sort_by(rank_order);
    let mut best = None;
    go(
        0,
        &ranked,
        gts,
        thresh,
        &mut vec![false; gts.len()],
        &mut Vec::new(),
        &mut best,
    );
    best.unwrap().into_iter().map(|(h, _)| h).collect()
}

/// Each true positive contributes `1 / n_gt` times the best precision at
/// its rank or any later rank.
pub fn reference_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut tp = 0;
    let precision: Vec<f64> = hits
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            tp += usize::from(h);
            tp as f64 / (k + 1) as f64
        })
        .collect();
    hits.iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(k, _)| precision[k..].iter().cloned().fold(0.0, f64::max) / n_gt as f64)
        .sum()
}

/// Keeps an instance unless a kept, higher-ranked instance of the same class
/// and video overlaps it at all.
pub fn hard_nms(instances: &[Instance]) -> Vec<Instance> {
    let mut ranked = instances.to_vec();
    ranked.sort_by(rank_order);
    let mut kept: Vec<Instance> = Vec::new();
    for i in ranked {
        let clash = kept
            .iter()
            .any(|k| k.class_index == i.class_index && k.video_id == i.video_id && tiou(&k.segment, &i.segment) > 0.0);
        if !clash {
            kept.push(i);
        }
    }
    kept
}

/// Integer endpoints on a short grid keep every nonzero tIoU above 1/20,
/// where exp(-tIoU^2 / sigma) at tiny sigma is far below the score floor.
pub fn grid_instances(rng: &mut ChaCha8Rng) -> Vec<Instance> {
    let n = rng.random_range(0..=10);
    (0..n)
        .map(|_| {
            let s = rng.random_range(0..15) as f64;
            let e = s + rng.random_range(1..=5) as f64;
            Instance::new(seg(s, e), rng.random_range(0..2), rng.random_range(0.01..1.0), "v")
        })
        .collect()
}

pub fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
