//! Instance-level consistency discriminator.
//!
//! A two-layer perceptron reads the concatenation of two temporally
//! max-pooled instance features and predicts the probability that both
//! instances belong to the same action class. It is trained on labeled
//! instances with balanced same-class / different-class pairs and then used
//! to score a predicted instance against every labeled instance of its
//! predicted class. The mean probability drives two refinements of a
//! pseudo-label set:
//!
//! - removing positives whose similarity is below `tau_icd`,
//! - promoting candidates whose similarity is above `sigma_icd`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AplError, Result};
use crate::geometry::{frames_inside, Segment};
use crate::rng::stream_rng;
use crate::selection::{rank_order, PseudoLabelSet, RefinementAction, RefinementEntry};

/// Temporal feature of one action instance: `columns[l]` is the `D`-vector at
/// time step `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFeature {
    pub columns: Vec<Vec<f64>>,
    pub class_index: usize,
    pub video_id: String,
}

impl InstanceFeature {
    pub fn new(columns: Vec<Vec<f64>>, class_index: usize, video_id: impl Into<String>) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(AplError::InvalidArgument(
                "instance feature needs at least one time step".into(),
            ));
        };
        let d = first.len();
        if let Some(bad) = columns.iter().find(|c| c.len() != d) {
            return Err(AplError::LengthMismatch {
                what: "instance feature columns",
                expected: d,
                found: bad.len(),
            });
        }
        Ok(InstanceFeature {
            columns,
            class_index,
            video_id: video_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.columns[0].len()
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

/// Feature columns of the frames inside `segment`; the frame nearest to the
/// segment center when none falls inside.
pub fn segment_feature(
    frames: &[Vec<f64>],
    fps: f64,
    segment: &Segment,
    class_index: usize,
    video_id: &str,
) -> Result<InstanceFeature> {
    if frames.is_empty() {
        return Err(AplError::InvalidArgument(format!("video {video_id} has no frames")));
    }
    let range = frames_inside(segment, frames.len(), fps);
    let range = if range.is_empty() {
        let t = ((segment.center() * fps).round() as usize).min(frames.len() - 1);
        t..t + 1
    } else {
        range
    };
    InstanceFeature::new(frames[range].to_vec(), class_index, video_id)
}

/// Elementwise temporal maximum.
pub fn max_pool(feat: &InstanceFeature) -> Vec<f64> {
    let mut out = feat.columns[0].clone();
    for col in &feat.columns[1..] {
        for (o, &v) in out.iter_mut().zip(col) {
            if v > *o {
                *o = v;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcdConfig {
    /// Same-class and different-class partners sampled per anchor.
    pub pairs_per_anchor: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    /// Positives with similarity below this are removed.
    pub tau_icd: f64,
    /// Candidates with similarity above this are promoted.
    pub sigma_icd: f64,
    /// Cap on labeled instances per class used for scoring.
    pub max_labeled_per_class: Option<usize>,
    pub seed: u64,
}

impl Default for IcdConfig {
    fn default() -> Self {
        IcdConfig {
            pairs_per_anchor: 10,
            epochs: 200,
            learning_rate: 0.2,
            hidden_dim: 64,
            tau_icd: 0.3,
            sigma_icd: 0.7,
            max_labeled_per_class: None,
            seed: 7,
        }
    }
}

impl IcdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pairs_per_anchor == 0 {
            return Err(AplError::Config("icd.pairs_per_anchor must be positive".into()));
        }
        if self.hidden_dim == 0 {
            return Err(AplError::Config("icd.hidden_dim must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AplError::Config("icd.learning_rate must be > 0".into()));
        }
        if !(0.0 <= self.tau_icd && self.tau_icd < self.sigma_icd && self.sigma_icd <= 1.0) {
            return Err(AplError::Config(
                "icd thresholds must satisfy 0 <= tau_icd < sigma_icd <= 1".into(),
            ));
        }
        if self.sigma_icd <= 0.5 {
            return Err(AplError::Config("icd.sigma_icd must exceed 0.5".into()));
        }
        Ok(())
    }
}

/// `sigmoid(w2 . relu(w1 [a; b] + b1) + b2)` with `w1` stored row-major `H x 2D`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorModel {
    pub dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub seed: u64,
}

/// Gradient of a loss with respect to every parameter, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    fn zeros(dim: usize, hidden: usize) -> Self {
        Gradients {
            w1: vec![0.0; hidden * 2 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }
}

impl DiscriminatorModel {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        DiscriminatorModel {
            dim,
            hidden,
            w1: vec![0.0; hidden * 2 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            seed: 0,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x1CD);
        let a1 = (6.0 / (2 * dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        let mut m = DiscriminatorModel::zeros(dim, hidden);
        m.seed = seed;
        for w in &mut m.w1 {
            *w = rng.random_range(-a1..a1);
        }
        for w in &mut m.w2 {
            *w = rng.random_range(-a2..a2);
        }
        m
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn check_dims(&self, a: &[f64], b: &[f64]) -> Result<()> {
        for v in [a, b] {
            if v.len() != self.dim {
                return Err(AplError::LengthMismatch {
                    what: "discriminator input",
                    expected: self.dim,
                    found: v.len(),
                });
            }
        }
        Ok(())
    }

    fn hidden_pre(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let two_d = 2 * self.dim;
        (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * two_d..(h + 1) * two_d];
                let (ra, rb) = row.split_at(self.dim);
                self.b1[h] + dot(ra, a) + dot(rb, b)
            })
            .collect()
    }

    fn logit_from_pre(&self, pre: &[f64]) -> f64 {
        self.b2 + pre.iter().zip(&self.w2).map(|(&z, &w)| w * z.max(0.0)).sum::<f64>()
    }

    pub fn logit(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check_dims(a, b)?;
        Ok(self.logit_from_pre(&self.hidden_pre(a, b)))
    }

    pub fn pair_probability(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(a, b)?))
    }

    /// Binary cross entropy of one labeled pair and its exact gradient.
    pub fn pair_loss_and_grad(&self, a: &[f64], b: &[f64], label: bool) -> Result<(f64, Gradients)> {
        self.check_dims(a, b)?;
        let pre = self.hidden_pre(a, b);
        let logit = self.logit_from_pre(&pre);
        let y = if label { 1.0 } else { 0.0 };
        let loss = softplus(logit) - y * logit;
        let dlogit = sigmoid(logit) - y;

        let mut g = Gradients::zeros(self.dim, self.hidden);
        g.b2 = dlogit;
        let two_d = 2 * self.dim;
        for h in 0..self.hidden {
            g.w2[h] = dlogit * pre[h].max(0.0);
            if pre[h] > 0.0 {
                let dz = dlogit * self.w2[h];
                g.b1[h] = dz;
                let row = &mut g.w1[h * two_d..(h + 1) * two_d];
                let (ra, rb) = row.split_at_mut(self.dim);
                for (r, &x) in ra.iter_mut().zip(a) {
                    *r = dz * x;
                }
                for (r, &x) in rb.iter_mut().zip(b) {
                    *r = dz * x;
                }
            }
        }
        Ok((loss, g))
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
    }

    /// Parameter `i` in the flat order `w1, b1, w2, b2`.
    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        self.params_mut().nth(i).expect("parameter index in range")
    }

    fn apply(&mut self, g: &Gradients, lr: f64) {
        let flat = g.w1.iter().chain(&g.b1).chain(&g.w2).chain(std::iter::once(&g.b2));
        for (p, d) in self.params_mut().zip(flat) {
            *p -= lr * d;
        }
    }
}

impl Gradients {
    /// Entry `i` in the flat order `w1, b1, w2, b2`.
    pub fn flat(&self, i: usize) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .nth(i)
            .copied()
            .expect("gradient index in range")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// A sampled training pair: indices into the batch and the same-class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pair {
    pub anchor: usize,
    pub other: usize,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSets {
    pub pairs: Vec<Pair>,
    /// Classes represented by a single instance; they yield no positive pairs.
    pub singleton_classes: Vec<usize>,
}

impl PairSets {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.same).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }

    /// Distinct unordered (positive, negative) pairs once `(i, j)` and
    /// `(j, i)` are merged.
    pub fn unordered_counts(&self) -> (usize, usize) {
        let set: BTreeSet<(usize, usize, bool)> = self
            .pairs
            .iter()
            .map(|p| (p.anchor.min(p.other), p.anchor.max(p.other), p.same))
            .collect();
        let pos = set.iter().filter(|p| p.2).count();
        (pos, set.len() - pos)
    }
}

/// For each anchor, up to `pairs_per_anchor` same-class partners (label 1) and
/// up to `pairs_per_anchor` different-class partners (label 0), sampled
/// without replacement. An anchor never pairs with itself.
pub fn build_pair_sets<R: Rng>(batch: &[InstanceFeature], pairs_per_anchor: usize, rng: &mut R) -> PairSets {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for f in batch {
        *counts.entry(f.class_index).or_default() += 1;
    }
    let singleton_classes = counts.iter().filter(|(_, &n)| n == 1).map(|(&c, _)| c).collect();

    let mut pairs = Vec::new();
    for (i, anchor) in batch.iter().enumerate() {
        let (same, diff): (Vec<usize>, Vec<usize>) = (0..batch.len())
            .filter(|&j| j != i)
            .partition(|&j| batch[j].class_index == anchor.class_index);
        for &j in same.choose_multiple(rng, pairs_per_anchor.min(same.len())) {
            pairs.push(Pair {
                anchor: i,
                other: j,
                same: true,
            });
        }
        for &j in diff.choose_multiple(rng, pairs_per_anchor.min(diff.len())) {
            pairs.push(Pair {
                anchor: i,
                other: j,
                same: false,
            });
        }
    }
    PairSets {
        pairs,
        singleton_classes,
    }
}

/// Both orders of every sampled pair, deduplicated and sorted.
pub fn symmetrize(pairs: &[Pair]) -> Vec<Pair> {
    let set: BTreeSet<Pair> = pairs
        .iter()
        .flat_map(|p| {
            [
                *p,
                Pair {
                    anchor: p.other,
                    other: p.anchor,
                    same: p.same,
                },
            ]
        })
        .collect();
    set.into_iter().collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DiscriminatorModel,
    /// Mean pair BCE before each epoch's update, then once after the last.
    pub loss_curve: Vec<f64>,
    pub n_pairs: usize,
}

/// Full-batch gradient descent on the mean pair BCE over all batches.
pub fn train(batches: &[Vec<InstanceFeature>], cfg: &IcdConfig) -> Result<TrainOutcome> {
    let mut rng = stream_rng(cfg.seed, 0xBA7C);
    let mut pooled: Vec<Vec<f64>> = Vec::new();
    let mut examples: Vec<Pair> = Vec::new();
    for batch in batches {
        let offset = pooled.len();
        let sets = build_pair_sets(batch, cfg.pairs_per_anchor, &mut rng);
        pooled.extend(batch.iter().map(max_pool));
        examples.extend(symmetrize(&sets.pairs).into_iter().map(|p| Pair {
            anchor: p.anchor + offset,
            other: p.other + offset,
            same: p.same,
        }));
    }

    let n_pos = examples.iter().filter(|p| p.same).count();
    if n_pos == 0 || n_pos == examples.len() {
        return Err(AplError::DegeneratePairSets(format!(
            "{} positive and {} negative pairs; need at least one of each",
            n_pos,
            examples.len() - n_pos
        )));
    }
    let dim = pooled[0].len();
    if let Some(bad) = pooled.iter().find(|v| v.len() != dim) {
        return Err(AplError::LengthMismatch {
            what: "instance feature dimension",
            expected: dim,
            found: bad.len(),
        });
    }

    let mut model = DiscriminatorModel::init(dim, cfg.hidden_dim, cfg.seed);
    let mut loss_curve = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let (loss, grad) = batch_loss_and_grad(&model, &pooled, &examples);
        loss_curve.push(loss);
        model.apply(&grad, cfg.learning_rate);
    }
    if cfg.epochs > 0 {
        loss_curve.push(batch_loss_and_grad(&model, &pooled, &examples).0);
    }
    Ok(TrainOutcome {
        model,
        loss_curve,
        n_pairs: examples.len(),
    })
}

/// Mean pair loss and gradient over `pairs`.
///
/// The first layer splits into an anchor half and a partner half, so both
/// projections are computed once per instance and the weight gradient is
/// accumulated per instance rather than per pair.
pub fn batch_loss_and_grad(model: &DiscriminatorModel, pooled: &[Vec<f64>], pairs: &[Pair]) -> (f64, Gradients) {
    let (d, hdim) = (model.dim, model.hidden);
    let two_d = 2 * d;
    let project = |half: usize| -> Vec<Vec<f64>> {
        pooled
            .iter()
            .map(|x| {
                (0..hdim)
                    .map(|h| dot(&model.w1[h * two_d + half * d..h * two_d + (half + 1) * d], x))
                    .collect()
            })
            .collect()
    };
    let proj_a = project(0);
    let proj_b = project(1);

    let mut g = Gradients::zeros(d, hdim);
    let mut dz_a = vec![vec![0.0; hdim]; pooled.len()];
    let mut dz_b = vec![vec![0.0; hdim]; pooled.len()];
    let mut loss = 0.0;
    let mut pre = vec![0.0; hdim];
    for p in pairs {
        for h in 0..hdim {
            pre[h] = model.b1[h] + proj_a[p.anchor][h] + proj_b[p.other][h];
        }
        let logit = model.logit_from_pre(&pre);
        let y = if p.same { 1.0 } else { 0.0 };
        loss += softplus(logit) - y * logit;
        let dlogit = sigmoid(logit) - y;
        g.b2 += dlogit;
        for h in 0..hdim {
            if pre[h] > 0.0 {
                g.w2[h] += dlogit * pre[h];
                let dz = dlogit * model.w2[h];
                g.b1[h] += dz;
                dz_a[p.anchor][h] += dz;
                dz_b[p.other][h] += dz;
            }
        }
    }
    for (i, x) in pooled.iter().enumerate() {
        for h in 0..hdim {
            let (ga, gb) = (dz_a[i][h], dz_b[i][h]);
            if ga == 0.0 && gb == 0.0 {
                continue;
            }
            let row = &mut g.w1[h * two_d..(h + 1) * two_d];
            for k in 0..d {
                row[k] += ga * x[k];
                row[d + k] += gb * x[k];
            }
        }
    }

    let n = pairs.len().max(1) as f64;
    for v in g.w1.iter_mut().chain(&mut g.b1).chain(&mut g.w2) {
        *v /= n;
    }
    g.b2 /= n;
    (loss / n, g)
}

/// Fraction of pairs whose thresholded probability (at 0.5) matches the label.
pub fn pair_accuracy(model: &DiscriminatorModel, pooled: &[Vec<f64>], pairs: &[Pair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for p in pairs {
        let prob = model.pair_probability(&pooled[p.anchor], &pooled[p.other])?;
        if (prob >= 0.5) == p.same {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Mean pair probability between `pred` and every labeled same-class instance.
pub fn similarity_score(
    model: &DiscriminatorModel,
    pred: &InstanceFeature,
    labeled_same_class: &[InstanceFeature],
) -> Result<f64> {
    if labeled_same_class.is_empty() {
        return Err(AplError::NoLabeledInstances(pred.class_index));
    }
    if let Some(other) = labeled_same_class.iter().find(|l| l.class_index != pred.class_index) {
        return Err(AplError::InvalidArgument(format!(
            "labeled instance of class {} scored against class {}",
            other.class_index, pred.class_index
        )));
    }
    let pooled: Vec<Vec<f64>> = labeled_same_class.iter().map(max_pool).collect();
    similarity_pooled(model, &max_pool(pred), &pooled)
}

/// [`similarity_score`] on already pooled vectors.
pub fn similarity_pooled(model: &DiscriminatorModel, pred: &[f64], labeled: &[Vec<f64>]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(AplError::InvalidArgument("empty labeled set".into()));
    }
    let mut sum = 0.0;
    for l in labeled {
        sum += model.pair_probability(pred, l)?;
    }
    Ok(sum / labeled.len() as f64)
}

/// Pooled labeled features grouped by class, in input order.
#[derive(Debug, Clone, Default)]
pub struct LabeledBank {
    pub by_class: BTreeMap<usize, Vec<Vec<f64>>>,
}

impl LabeledBank {
    pub fn new(labeled: &[InstanceFeature], cap: Option<usize>) -> Self {
        let mut by_class: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
        for f in labeled {
            let entry = by_class.entry(f.class_index).or_default();
            if cap.is_none_or(|c| entry.len() < c) {
                entry.push(max_pool(f));
            }
        }
        LabeledBank { by_class }
    }

    /// `None` when the class has no labeled instance.
    pub fn score(&self, model: &DiscriminatorModel, class_index: usize, pred: &[f64]) -> Result<Option<f64>> {
        match self.by_class.get(&class_index) {
            Some(list) if !list.is_empty() => similarity_pooled(model, pred, list).map(Some),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Similarity {
    Score(f64),
    /// The predicted class has no labeled instance to compare against.
    Unscorable,
}

/// Which refinement steps to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefineMode {
    /// Remove ambiguous positives.
    pub eap: bool,
    /// Promote potential positives from the candidates.
    pub mpp: bool,
}

impl RefineMode {
    pub const BOTH: RefineMode = RefineMode { eap: true, mpp: true };
    pub const EAP_ONLY: RefineMode = RefineMode { eap: true, mpp: false };
    pub const MPP_ONLY: RefineMode = RefineMode { eap: false, mpp: true };
    pub const NONE: RefineMode = RefineMode { eap: false, mpp: false };
}

/// Moves positives with similarity `< tau_icd` to rejected and candidates
/// with similarity `> sigma_icd` to positives. Segments, classes and scores
/// are untouched; every decision is appended to the refinement log.
pub fn refine(
    set: &PseudoLabelSet,
    scores: &BTreeMap<String, Similarity>,
    tau_icd: f64,
    sigma_icd: f64,
    mode: RefineMode,
) -> Result<PseudoLabelSet> {
    let lookup = |key: &str| {
        scores
            .get(key)
            .copied()
            .ok_or_else(|| AplError::MissingScore(key.to_string()))
    };
    let mut out = PseudoLabelSet {
        positives: Vec::new(),
        candidates: Vec::new(),
        rejected: set.rejected.clone(),
        tau_pos: set.tau_pos,
        tau_neg: set.tau_neg,
        no_survivors: set.no_survivors,
        refinement_log: set.refinement_log.clone(),
    };

    for p in &set.positives {
        if !mode.eap {
            out.positives.push(p.clone());
            continue;
        }
        let key = p.key();
        let (action, similarity) = match lookup(&key)? {
            Similarity::Unscorable => (RefinementAction::Unscorable, None),
            Similarity::Score(s) if s < tau_icd => (RefinementAction::EapRemoved, Some(s)),
            Similarity::Score(s) => (RefinementAction::Kept, Some(s)),
        };
        if action == RefinementAction::EapRemoved {
            out.rejected.push(p.clone());
        } else {
            out.positives.push(p.clone());
        }
        out.refinement_log.push(RefinementEntry {
            instance_id: key,
            action,
            similarity,
        });
    }

    for c in &set.candidates {
        if !mode.mpp {
            out.candidates.push(c.clone());
            continue;
        }
        let key = c.key();
        let (action, similarity) = match lookup(&key)? {
            Similarity::Unscorable => (RefinementAction::Unscorable, None),
            Similarity::Score(s) if s > sigma_icd => (RefinementAction::MppPromoted, Some(s)),
            Similarity::Score(s) => (RefinementAction::Kept, Some(s)),
        };
        if action == RefinementAction::MppPromoted {
            out.positives.push(c.clone());
        } else {
            out.candidates.push(c.clone());
        }
        out.refinement_log.push(RefinementEntry {
            instance_id: key,
            action,
            similarity,
        });
    }

    out.positives.sort_by(rank_order);
    out.candidates.sort_by(rank_order);
    out.rejected.sort_by(rank_order);
    Ok(out)
}

const MODEL_MAGIC: &[u8; 4] = b"ICD1";

impl DiscriminatorModel {
    /// `"ICD1"`, `D` and `H` as u32 LE, then `w1, b1, w2, b2` as f32 LE
    /// (row-major), then the seed as u64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.num_params());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for v in self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
        {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
            return Err("missing ICD1 magic".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (dim, hidden) = (u32_at(4), u32_at(8));
        let n_params = hidden * 2 * dim + 2 * hidden + 1;
        let expected = 12 + 4 * n_params + 8;
        if bytes.len() != expected {
            return Err(format!(
                "expected {expected} bytes for D={dim}, H={hidden}, found {}",
                bytes.len()
            ));
        }
        let mut floats = bytes[12..12 + 4 * n_params]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f64>>();
        let w1 = take(hidden * 2 * dim);
        let b1 = take(hidden);
        let w2 = take(hidden);
        let b2 = take(1)[0];
        if w1.iter().chain(&b1).chain(&w2).any(|v| !v.is_finite()) || !b2.is_finite() {
            return Err("non-finite weight".into());
        }
        let seed = u64::from_le_bytes(bytes[expected - 8..].try_into().unwrap());
        Ok(DiscriminatorModel {
            dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| AplError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| AplError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| AplError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| AplError::format(path, msg))
    }

    /// The model after a save/load cycle (weights rounded to f32).
    pub fn quantized(&self) -> Self {
        Self::from_bytes(&self.to_bytes()).expect("own encoding is valid")
    }
}
