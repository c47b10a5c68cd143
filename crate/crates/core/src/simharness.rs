//! Seeded synthetic videos and a noisy stand-in detector.
//!
//! A world holds videos with non-overlapping ground-truth instances and
//! per-frame features: frames inside an instance sit near their class
//! prototype, background frames are pure noise. [`corrupt_predictions`] then
//! fabricates frame-level detector outputs for the unlabeled videos with
//! controlled boundary jitter, score noise, class flips, injected ambiguous
//! positives, demoted true instances and background false alarms. Every
//! injection is recorded so refinement can be scored exactly.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{AplError, Result};
use crate::geometry::{frames_inside, tiou, tnd, Segment};
use crate::icd::InstanceFeature;
use crate::quality::FramePredictions;
use crate::rng::stream_rng;
use crate::selection::Instance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_videos: usize,
    pub n_classes: usize,
    /// Video duration range in seconds.
    pub duration: (f64, f64),
    pub instances_per_video: (usize, usize),
    /// Instance length range in seconds.
    pub instance_length: (f64, f64),
    pub feature_dim: usize,
    /// Norm of each class prototype.
    pub class_prototype_separation: f64,
    /// Per-frame feature noise standard deviation.
    pub feature_noise: f64,
    /// Standard deviation of a per-instance offset around the prototype.
    pub instance_spread: f64,
    pub labeled_fraction: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_videos: 200,
            n_classes: 5,
            duration: (60.0, 120.0),
            instances_per_video: (1, 4),
            instance_length: (5.0, 20.0),
            feature_dim: 16,
            class_prototype_separation: 5.0,
            feature_noise: 1.0,
            instance_spread: 0.5,
            labeled_fraction: 0.1,
            fps: 1.0,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(AplError::Config(format!("world.{msg}")));
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2");
        }
        if self.n_videos == 0 || self.feature_dim == 0 {
            return bad("n_videos and feature_dim must be positive");
        }
        if !(self.duration.0 > 0.0 && self.duration.0 <= self.duration.1) {
            return bad("duration must be a positive range");
        }
        if self.instances_per_video.0 > self.instances_per_video.1 {
            return bad("instances_per_video must be a range");
        }
        if !(self.instance_length.0 > 0.0 && self.instance_length.0 <= self.instance_length.1) {
            return bad("instance_length must be a positive range");
        }
        if !(self.fps > 0.0) || self.instance_length.0 * self.fps < 1.0 {
            return bad("fps must give every instance at least one frame");
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return bad("labeled_fraction must lie in [0, 1]");
        }
        if self.class_prototype_separation < 0.0 || self.feature_noise < 0.0 || self.instance_spread < 0.0 {
            return bad("separation and noise levels must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub duration: f64,
    pub fps: f64,
    pub labeled: bool,
    /// Ground truth, ordered by start time, score 1.
    pub annotations: Vec<Instance>,
    /// `frames[t]` is the feature vector of frame `t`.
    pub frames: Vec<Vec<f64>>,
}

impl Video {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_times(&self) -> Vec<f64> {
        crate::geometry::frame_times(self.frames.len(), self.fps)
    }

    pub fn instance_feature(&self, segment: &Segment, class_index: usize) -> Result<InstanceFeature> {
        crate::icd::segment_feature(&self.frames, self.fps, segment, class_index, &self.id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub prototypes: Vec<Vec<f64>>,
    pub videos: Vec<Video>,
}

impl World {
    pub fn labeled(&self) -> impl Iterator<Item = &Video> {
        self.videos.iter().filter(|v| v.labeled)
    }

    pub fn unlabeled(&self) -> impl Iterator<Item = &Video> {
        self.videos.iter().filter(|v| !v.labeled)
    }

    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Ground-truth instance features of the labeled videos.
    pub fn labeled_features(&self) -> Result<Vec<InstanceFeature>> {
        let mut out = Vec::new();
        for v in self.labeled() {
            for a in &v.annotations {
                out.push(v.instance_feature(&a.segment, a.class_index)?);
            }
        }
        Ok(out)
    }

    pub fn ground_truth(&self, labeled: bool) -> Vec<Instance> {
        self.videos
            .iter()
            .filter(|v| v.labeled == labeled)
            .flat_map(|v| v.annotations.iter().cloned())
            .collect()
    }
}

pub fn video_id(index: usize) -> String {
    format!("video_{index:04}")
}

fn pack_segments(rng: &mut ChaCha8Rng, cfg: &WorldConfig, duration: f64) -> Option<Vec<Segment>> {
    for _ in 0..100 {
        let m = rng.random_range(cfg.instances_per_video.0..=cfg.instances_per_video.1);
        let (lo, hi) = cfg.instance_length;
        let lengths: Vec<f64> = (0..m)
            .map(|_| if lo < hi { rng.random_range(lo..hi) } else { lo })
            .collect();
        let free = duration - lengths.iter().sum::<f64>();
        if free <= 0.0 {
            continue;
        }
        let weights: Vec<f64> = (0..=m).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut t = 0.0;
        let mut segs = Vec::with_capacity(m);
        for (len, w) in lengths.iter().zip(&weights) {
            t += free * w / total;
            segs.push(Segment::new(t, t + len).ok()?);
            t += len;
        }
        return Some(segs);
    }
    None
}

/// Builds the world deterministically from `cfg.seed`.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let prototypes: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.feature_dim).map(|_| unit.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|x| x * cfg.class_prototype_separation / n).collect()
        })
        .collect();

    let n_labeled = ((cfg.labeled_fraction * cfg.n_videos as f64).round() as usize).min(cfg.n_videos);
    let mut order: Vec<usize> = (0..cfg.n_videos).collect();
    order.shuffle(&mut rng);
    let mut labeled = vec![false; cfg.n_videos];
    for &i in &order[..n_labeled] {
        labeled[i] = true;
    }

    let mut videos = Vec::with_capacity(cfg.n_videos);
    for (i, &is_labeled) in labeled.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, i as u64);
        let (dlo, dhi) = cfg.duration;
        let duration = if dlo < dhi { rng.random_range(dlo..dhi) } else { dlo };
        let segments = pack_segments(&mut rng, cfg, duration).ok_or_else(|| {
            AplError::InfeasibleWorld(format!(
                "cannot fit {}..={} instances of {}..{} s into a {duration:.1} s video",
                cfg.instances_per_video.0, cfg.instances_per_video.1, cfg.instance_length.0, cfg.instance_length.1
            ))
        })?;
        let id = video_id(i);
        let n_frames = ((duration * cfg.fps).floor() as usize).max(1);
        let mut frames: Vec<Vec<f64>> = (0..n_frames)
            .map(|_| {
                (0..cfg.feature_dim)
                    .map(|_| cfg.feature_noise * unit.sample(&mut rng))
                    .collect()
            })
            .collect();
        let mut annotations = Vec::with_capacity(segments.len());
        for seg in segments {
            let class = rng.random_range(0..cfg.n_classes);
            let offset: Vec<f64> = (0..cfg.feature_dim)
                .map(|_| cfg.instance_spread * unit.sample(&mut rng))
                .collect();
            for t in frames_inside(&seg, n_frames, cfg.fps) {
                for (d, f) in frames[t].iter_mut().enumerate() {
                    *f += prototypes[class][d] + offset[d];
                }
            }
            annotations.push(Instance::new(seg, class, 1.0, id.clone()));
        }
        videos.push(Video {
            id,
            duration,
            fps: cfg.fps,
            labeled: is_labeled,
            annotations,
            frames,
        });
    }
    Ok(World {
        config: cfg.clone(),
        prototypes,
        videos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Std of per-instance boundary jitter, as a fraction of instance length.
    pub boundary_jitter: f64,
    /// Extra per-frame boundary jitter, as a fraction of instance length.
    pub frame_jitter: f64,
    pub class_flip_prob: f64,
    pub score_noise_std: f64,
    /// Fraction of instances predicted with a wrong class at a high score.
    pub ambiguous_rate: f64,
    /// Fraction of instances whose joint score is pushed into `demoted_score`.
    pub missed_rate: f64,
    /// Expected background false alarms per video.
    pub false_alarm_rate: f64,
    pub class_score: (f64, f64),
    pub ambiguous_score: (f64, f64),
    pub demoted_score: (f64, f64),
    pub false_alarm_score: (f64, f64),
    /// Per-video multiplier on class scores, drawn uniformly; models a
    /// detector whose confidence calibration drifts between videos.
    pub video_score_scale: (f64, f64),
    /// Upper bound of class scores on background frames.
    pub background_score: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            boundary_jitter: 0.1,
            frame_jitter: 0.03,
            class_flip_prob: 0.05,
            score_noise_std: 0.05,
            ambiguous_rate: 0.1,
            missed_rate: 0.1,
            false_alarm_rate: 3.0,
            class_score: (0.6, 0.95),
            ambiguous_score: (0.6, 0.95),
            demoted_score: (0.18, 0.3),
            false_alarm_score: (0.1, 0.5),
            video_score_scale: (0.7, 1.4),
            background_score: 0.05,
            seed: 11,
        }
    }
}

impl NoiseModel {
    /// No jitter, no score noise, no injections.
    pub fn clean() -> Self {
        NoiseModel {
            boundary_jitter: 0.0,
            frame_jitter: 0.0,
            class_flip_prob: 0.0,
            score_noise_std: 0.0,
            ambiguous_rate: 0.0,
            missed_rate: 0.0,
            false_alarm_rate: 0.0,
            video_score_scale: (1.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.class_flip_prob, self.ambiguous_rate, self.missed_rate];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.ambiguous_rate + self.missed_rate > 1.0 {
            return Err(AplError::Config(
                "noise rates must lie in [0, 1] and ambiguous_rate + missed_rate <= 1".into(),
            ));
        }
        let non_negative = [
            self.boundary_jitter,
            self.frame_jitter,
            self.score_noise_std,
            self.false_alarm_rate,
            self.background_score,
        ];
        if non_negative.iter().any(|v| !(*v >= 0.0)) {
            return Err(AplError::Config("noise levels must be non-negative".into()));
        }
        for (lo, hi) in [
            self.class_score,
            self.ambiguous_score,
            self.demoted_score,
            self.false_alarm_score,
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(AplError::Config("score ranges must satisfy 0 <= lo <= hi <= 1".into()));
            }
        }
        let (lo, hi) = self.video_score_scale;
        if !(0.0 < lo && lo <= hi && hi.is_finite()) {
            return Err(AplError::Config("video_score_scale must satisfy 0 < lo <= hi".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionKind {
    /// Wrong class at a high score.
    Ambiguous,
    /// True class with a score pushed into the candidate band.
    Missed,
    /// Wrong class at an ordinary score.
    Flip,
    /// A background stretch predicted as an action.
    FalseAlarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub video_id: String,
    pub kind: InjectionKind,
    /// Index into the video's annotations; `None` for false alarms.
    pub gt_index: Option<usize>,
    /// Frames carrying the injected prediction.
    pub frames: Range<usize>,
    pub class_index: usize,
}

impl Injection {
    /// Whether a decoded instance came from this injection.
    pub fn produced(&self, inst: &Instance) -> bool {
        inst.video_id == self.video_id
            && inst.class_index == self.class_index
            && inst.source_frame.is_some_and(|f| self.frames.contains(&f))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InjectionLedger {
    pub entries: Vec<Injection>,
}

impl InjectionLedger {
    pub fn of_kind(&self, kind: InjectionKind) -> impl Iterator<Item = &Injection> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    /// First entry of `kind` that produced `inst`.
    pub fn source(&self, inst: &Instance, kind: InjectionKind) -> Option<&Injection> {
        self.of_kind(kind).find(|e| e.produced(inst))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPredictions {
    pub video_id: String,
    pub fps: f64,
    pub predictions: FramePredictions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrupted {
    /// Frame-level outputs for every unlabeled video.
    pub videos: Vec<VideoPredictions>,
    /// The intended prediction per ground-truth instance: jittered segment,
    /// predicted class and nominal score.
    pub oracle: Vec<Instance>,
    pub ledger: InjectionLedger,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

fn other_class(rng: &mut ChaCha8Rng, k: usize, class: usize) -> usize {
    let c = rng.random_range(0..k - 1);
    if c >= class {
        c + 1
    } else {
        c
    }
}

/// Offsets from frame time `t` to `[s, e]`, clamped at zero.
fn offsets_to(t: f64, s: f64, e: f64) -> (f64, f64) {
    ((t - s).max(0.0), (e - t).max(0.0))
}

/// Decoded segment for frame time `t`, as the selection stage will see it.
fn decoded(t: f64, (l, r): (f64, f64)) -> Option<Segment> {
    Segment::new((t - l).max(0.0), t + r).ok()
}

/// Fabricates frame-level predictions for the unlabeled videos of `world`.
pub fn corrupt_predictions(world: &World, noise: &NoiseModel) -> Result<Corrupted> {
    noise.validate()?;
    let k = world.config.n_classes;
    let mut out = Corrupted {
        videos: Vec::new(),
        oracle: Vec::new(),
        ledger: InjectionLedger::default(),
    };
    for (vi, video) in world.videos.iter().enumerate() {
        if video.labeled {
            continue;
        }
        let mut rng = stream_rng(noise.seed, vi as u64);
        let scale = uniform(&mut rng, noise.video_score_scale);
        let n = video.num_frames();
        let times = video.frame_times();

        let mut cls = vec![vec![0.0; n]; k];
        let mut tiou_hat = vec![0.0; n];
        let mut tnd_hat = vec![0.0; n];
        let mut offsets = vec![(0.0, 0.0); n];
        let mut covered = vec![false; n];
        for t in 0..n {
            for row in cls.iter_mut() {
                row[t] = rng.random_range(0.0..=noise.background_score);
            }
            tiou_hat[t] = rng.random_range(0.0..0.3);
            tnd_hat[t] = rng.random_range(0.0..0.3);
            offsets[t] = (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
        }

        for (gi, gt) in video.annotations.iter().enumerate() {
            let len = gt.segment.length();
            let s = (gt.segment.start() + gauss(&mut rng, noise.boundary_jitter * len)).max(0.0);
            let e = (gt.segment.end() + gauss(&mut rng, noise.boundary_jitter * len)).min(video.duration);
            let (s, e) = if e - s < 0.1 * len {
                (gt.segment.start(), gt.segment.end())
            } else {
                (s, e)
            };
            let pred_segment = Segment::new(s, e)?;

            let u: f64 = rng.random();
            let (kind, class, score_range) = if u < noise.ambiguous_rate {
                (
                    Some(InjectionKind::Ambiguous),
                    other_class(&mut rng, k, gt.class_index),
                    noise.ambiguous_score,
                )
            } else if u < noise.ambiguous_rate + noise.missed_rate {
                (Some(InjectionKind::Missed), gt.class_index, noise.demoted_score)
            } else if rng.random_bool(noise.class_flip_prob) {
                (
                    Some(InjectionKind::Flip),
                    other_class(&mut rng, k, gt.class_index),
                    noise.class_score,
                )
            } else {
                (None, gt.class_index, noise.class_score)
            };
            let level = uniform(&mut rng, score_range);

            let frames = frames_inside(&gt.segment, n, video.fps);
            let mut dious = Vec::with_capacity(frames.len());
            for t in frames.clone() {
                let fs = s + gauss(&mut rng, noise.frame_jitter * len);
                let fe = e + gauss(&mut rng, noise.frame_jitter * len);
                offsets[t] = offsets_to(times[t], fs, fe);
                let (ti, tn) = match decoded(times[t], offsets[t]) {
                    Some(seg) => (tiou(&seg, &gt.segment), tnd(&seg, &gt.segment)),
                    None => (0.0, 0.0),
                };
                tiou_hat[t] = (ti + gauss(&mut rng, noise.score_noise_std)).clamp(0.0, 1.0);
                tnd_hat[t] = (tn + gauss(&mut rng, noise.score_noise_std)).clamp(0.0, 1.0);
                dious.push((tiou_hat[t] - tnd_hat[t]).max(0.01));
                covered[t] = true;
            }
            // Demoted instances are calibrated on the joint score, the others
            // on the class score.
            let base = if kind == Some(InjectionKind::Missed) && !dious.is_empty() {
                let mean_diou = dious.iter().sum::<f64>() / dious.len() as f64;
                (level / mean_diou).min(1.0)
            } else {
                (level * scale).min(1.0)
            };
            for t in frames.clone() {
                for row in cls.iter_mut() {
                    row[t] = rng.random_range(0.0..=noise.background_score);
                }
                cls[class][t] = (base + gauss(&mut rng, noise.score_noise_std)).clamp(0.0, 1.0);
            }

            out.oracle
                .push(Instance::new(pred_segment, class, level, video.id.clone()));
            if let Some(kind) = kind {
                out.ledger.entries.push(Injection {
                    video_id: video.id.clone(),
                    kind,
                    gt_index: Some(gi),
                    frames: frames.clone(),
                    class_index: class,
                });
            }
        }

        let n_false = if noise.false_alarm_rate > 0.0 {
            Poisson::new(noise.false_alarm_rate)
                .expect("positive rate")
                .sample(&mut rng) as usize
        } else {
            0
        };
        let (llo, lhi) = world.config.instance_length;
        for _ in 0..n_false {
            let len = uniform(&mut rng, (llo, lhi)).min(video.duration * 0.5);
            let start = rng.random_range(0.0..(video.duration - len).max(1e-9));
            let seg = Segment::new(start, start + len)?;
            let frames = frames_inside(&seg, n, video.fps);
            if frames.is_empty() || frames.clone().any(|t| covered[t]) {
                continue;
            }
            let class = rng.random_range(0..k);
            let level = (uniform(&mut rng, noise.false_alarm_score) * scale).min(1.0);
            let quality = rng.random_range(0.4..0.9);
            for t in frames.clone() {
                let fs = start + gauss(&mut rng, noise.frame_jitter * len);
                let fe = start + len + gauss(&mut rng, noise.frame_jitter * len);
                offsets[t] = offsets_to(times[t], fs, fe);
                tiou_hat[t] = (quality + gauss(&mut rng, noise.score_noise_std)).clamp(0.0, 1.0);
                tnd_hat[t] = rng.random_range(0.0..0.05);
                cls[class][t] = (level + gauss(&mut rng, noise.score_noise_std)).clamp(0.0, 1.0);
                covered[t] = true;
            }
            out.ledger.entries.push(Injection {
                video_id: video.id.clone(),
                kind: InjectionKind::FalseAlarm,
                gt_index: None,
                frames,
                class_index: class,
            });
        }

        out.videos.push(VideoPredictions {
            video_id: video.id.clone(),
            fps: video.fps,
            predictions: FramePredictions::new(cls, tiou_hat, tnd_hat, offsets)?,
        });
    }
    Ok(out)
}
