//! End-to-end pseudo-label pipeline and the seeded ablation benchmark.
//!
//! One seed generates a world, corrupts its unlabeled predictions, selects
//! pseudo labels with a fixed and a dynamic threshold, trains the
//! discriminator on the labeled instances and refines the dynamic selection
//! four ways (none, EAP, MPP, both), plus threshold sweeps for the two
//! discriminator thresholds.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evalsuite::{pseudo_label_quality, EvalConfig, QualityReport};
use crate::icd::{self, max_pool, IcdConfig, LabeledBank, RefineMode, Similarity};
use crate::quality::ScoringConfig;
use crate::rng::mix;
use crate::selection::{decode_instances, dynamic_partition, soft_nms, Instance, PseudoLabelSet, SelectionConfig};
use crate::simharness::{
    corrupt_predictions, generate_world, InjectionKind, NoiseModel, Video, VideoPredictions, WorldConfig,
};

/// Decode, Soft-NMS and partition one video's frame predictions.
pub fn select_video(
    video: &VideoPredictions,
    scoring: &ScoringConfig,
    selection: &SelectionConfig,
) -> Result<PseudoLabelSet> {
    let times = crate::geometry::frame_times(video.predictions.num_frames(), video.fps);
    let decoded = decode_instances(&video.predictions, &times, &video.video_id, scoring, selection)?;
    Ok(dynamic_partition(&soft_nms(&decoded.instances, selection), selection))
}

/// Similarity of every positive and candidate of `set` against the labeled
/// instances of its class; `Unscorable` for classes without labels.
pub fn score_set(
    model: &icd::DiscriminatorModel,
    bank: &LabeledBank,
    set: &PseudoLabelSet,
    frames: &[Vec<f64>],
    fps: f64,
) -> Result<BTreeMap<String, Similarity>> {
    let mut out = BTreeMap::new();
    for inst in set.positives.iter().chain(&set.candidates) {
        let feat = icd::segment_feature(frames, fps, &inst.segment, inst.class_index, &inst.video_id)?;
        let s = match bank.score(model, inst.class_index, &max_pool(&feat))? {
            Some(v) => Similarity::Score(v),
            None => Similarity::Unscorable,
        };
        out.insert(inst.key(), s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub world: WorldConfig,
    pub noise: NoiseModel,
    pub scoring: ScoringConfig,
    pub selection: SelectionConfig,
    pub icd: IcdConfig,
    pub eval: EvalConfig,
    pub seeds: usize,
    pub base_seed: u64,
    /// Threshold of the fixed-threshold baseline.
    pub fixed_tau_pos: f64,
    pub tau_icd_sweep: Vec<f64>,
    pub sigma_icd_sweep: Vec<f64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            world: WorldConfig::default(),
            noise: NoiseModel::default(),
            scoring: ScoringConfig::default(),
            selection: SelectionConfig::default(),
            icd: IcdConfig::default(),
            eval: EvalConfig::thumos(),
            seeds: 10,
            base_seed: 7,
            fixed_tau_pos: 0.3,
            tau_icd_sweep: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            sigma_icd_sweep: vec![0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub fixed: QualityReport,
    pub dynamic: QualityReport,
    pub eap: QualityReport,
    pub mpp: QualityReport,
    pub eap_mpp: QualityReport,
    /// Injected ambiguous instances among the dynamic positives.
    pub ambiguous_positives: usize,
    pub ambiguous_removed: usize,
    /// Demoted true instances among the dynamic candidates.
    pub demoted_candidates: usize,
    pub demoted_promoted: usize,
    pub icd_pair_accuracy: f64,
    /// `(tau_icd, Pos Acc)` with both refinements on.
    pub tau_sweep: Vec<(f64, f64)>,
    /// `(sigma_icd, Pos Acc)` with both refinements on.
    pub sigma_sweep: Vec<(f64, f64)>,
}

impl SeedResult {
    pub fn eap_removal_rate(&self) -> f64 {
        ratio(self.ambiguous_removed, self.ambiguous_positives)
    }

    pub fn mpp_recovery_rate(&self) -> f64 {
        ratio(self.demoted_promoted, self.demoted_candidates)
    }

    pub fn refinement_ordered(&self) -> bool {
        let best_single = self.eap.pos_acc.max(self.mpp.pos_acc);
        self.eap_mpp.pos_acc >= best_single && best_single >= self.dynamic.pos_acc
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn positives(sets: &[PseudoLabelSet]) -> Vec<Instance> {
    sets.iter().flat_map(|s| s.positives.iter().cloned()).collect()
}

pub fn run_seed(cfg: &BenchmarkConfig, seed: u64) -> Result<SeedResult> {
    let world_cfg = WorldConfig {
        seed: mix(seed, 1),
        ..cfg.world.clone()
    };
    let noise = NoiseModel {
        seed: mix(seed, 2),
        ..cfg.noise.clone()
    };
    let world = generate_world(&world_cfg)?;
    let corrupted = corrupt_predictions(&world, &noise)?;
    let gts = world.ground_truth(false);
    let videos: Vec<&Video> = corrupted
        .videos
        .iter()
        .map(|vp| world.video(&vp.video_id).expect("prediction for a known video"))
        .collect();

    let fixed_cfg = SelectionConfig {
        fixed_tau_pos: Some(cfg.fixed_tau_pos),
        ..cfg.selection
    };
    let fixed = corrupted
        .videos
        .iter()
        .map(|v| select_video(v, &cfg.scoring, &fixed_cfg))
        .collect::<Result<Vec<_>>>()?;
    let dynamic = corrupted
        .videos
        .iter()
        .map(|v| select_video(v, &cfg.scoring, &cfg.selection))
        .collect::<Result<Vec<_>>>()?;

    let icd_cfg = IcdConfig {
        seed: mix(seed, 3),
        ..cfg.icd
    };
    let labeled = world.labeled_features()?;
    let trained = icd::train(std::slice::from_ref(&labeled), &icd_cfg)?;
    let model = trained.model.quantized();
    let bank = LabeledBank::new(&labeled, icd_cfg.max_labeled_per_class);

    let held_out = world.videos.iter().filter(|v| !v.labeled).flat_map(|v| {
        v.annotations
            .iter()
            .map(move |a| v.instance_feature(&a.segment, a.class_index))
    });
    let held_out = held_out.collect::<Result<Vec<_>>>()?;
    let mut pair_rng = crate::rng::stream_rng(seed, 4);
    let pairs = icd::symmetrize(&icd::build_pair_sets(&held_out, icd_cfg.pairs_per_anchor, &mut pair_rng).pairs);
    let pooled: Vec<Vec<f64>> = held_out.iter().map(max_pool).collect();
    let icd_pair_accuracy = icd::pair_accuracy(&model, &pooled, &pairs)?;

    let scores = dynamic
        .iter()
        .zip(&videos)
        .map(|(set, v)| score_set(&model, &bank, set, &v.frames, v.fps))
        .collect::<Result<Vec<_>>>()?;

    let refine_all = |tau: f64, sigma: f64, mode: RefineMode| -> Result<Vec<PseudoLabelSet>> {
        dynamic
            .iter()
            .zip(&scores)
            .map(|(set, s)| icd::refine(set, s, tau, sigma, mode))
            .collect()
    };
    let quality = |sets: &[PseudoLabelSet]| pseudo_label_quality(&positives(sets), &gts, &cfg.eval);

    let eap_sets = refine_all(icd_cfg.tau_icd, icd_cfg.sigma_icd, RefineMode::EAP_ONLY)?;
    let mpp_sets = refine_all(icd_cfg.tau_icd, icd_cfg.sigma_icd, RefineMode::MPP_ONLY)?;
    let both_sets = refine_all(icd_cfg.tau_icd, icd_cfg.sigma_icd, RefineMode::BOTH)?;

    let ledger = &corrupted.ledger;
    let mut result = SeedResult {
        seed,
        fixed: quality(&fixed),
        dynamic: quality(&dynamic),
        eap: quality(&eap_sets),
        mpp: quality(&mpp_sets),
        eap_mpp: quality(&both_sets),
        ambiguous_positives: 0,
        ambiguous_removed: 0,
        demoted_candidates: 0,
        demoted_promoted: 0,
        icd_pair_accuracy,
        tau_sweep: Vec::new(),
        sigma_sweep: Vec::new(),
    };
    for ((before, eap), mpp) in dynamic.iter().zip(&eap_sets).zip(&mpp_sets) {
        for p in &before.positives {
            if ledger.source(p, InjectionKind::Ambiguous).is_some() {
                result.ambiguous_positives += 1;
                if !eap.positives.contains(p) {
                    result.ambiguous_removed += 1;
                }
            }
        }
        for c in &before.candidates {
            if ledger.source(c, InjectionKind::Missed).is_some() {
                result.demoted_candidates += 1;
                if mpp.positives.contains(c) {
                    result.demoted_promoted += 1;
                }
            }
        }
    }
    for &tau in &cfg.tau_icd_sweep {
        let sets = refine_all(tau, icd_cfg.sigma_icd, RefineMode::BOTH)?;
        result.tau_sweep.push((tau, quality(&sets).pos_acc));
    }
    for &sigma in &cfg.sigma_icd_sweep {
        let sets = refine_all(icd_cfg.tau_icd, sigma, RefineMode::BOTH)?;
        result.sigma_sweep.push((sigma, quality(&sets).pos_acc));
    }
    Ok(result)
}

/// Runs `cfg.seeds` seeds starting at `cfg.base_seed`, in parallel; results
/// come back in seed order.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<SeedResult>> {
    (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|i| run_seed(cfg, cfg.base_seed + i))
        .collect()
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let (mean, se) = mean_se(values);
        Stat { mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub seeds: usize,
    /// Pos Acc per variant: fixed, dynamic, eap, mpp, eap_mpp.
    pub pos_acc: BTreeMap<String, Stat>,
    pub class_acc: BTreeMap<String, Stat>,
    pub avg_tiou: BTreeMap<String, Stat>,
    pub eap_removal_rate: f64,
    pub mpp_recovery_rate: f64,
    pub icd_pair_accuracy: Stat,
    /// Per-seed dynamic minus fixed Pos Acc.
    pub dynamic_minus_fixed: Stat,
    /// Seeds on which Pos Acc orders EAP+MPP >= max(EAP, MPP) >= none.
    pub refinement_order_seeds: usize,
    pub tau_sweep: Vec<(f64, f64)>,
    pub sigma_sweep: Vec<(f64, f64)>,
}

pub const VARIANTS: [&str; 5] = ["fixed", "dynamic", "eap", "mpp", "eap_mpp"];

fn variant(r: &SeedResult, name: &str) -> QualityReport {
    match name {
        "fixed" => r.fixed,
        "dynamic" => r.dynamic,
        "eap" => r.eap,
        "mpp" => r.mpp,
        _ => r.eap_mpp,
    }
}

fn sweep_mean(results: &[SeedResult], pick: impl Fn(&SeedResult) -> &Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let Some(first) = results.first() else {
        return Vec::new();
    };
    pick(first)
        .iter()
        .enumerate()
        .map(|(i, &(x, _))| {
            let ys: Vec<f64> = results.iter().map(|r| pick(r)[i].1).collect();
            (x, mean_se(&ys).0)
        })
        .collect()
}

pub fn summarize(results: &[SeedResult]) -> BenchmarkSummary {
    let stat = |f: &dyn Fn(&QualityReport) -> f64| -> BTreeMap<String, Stat> {
        VARIANTS
            .iter()
            .map(|&v| {
                let xs: Vec<f64> = results.iter().map(|r| f(&variant(r, v))).collect();
                (v.to_string(), Stat::of(&xs))
            })
            .collect()
    };
    let total = |f: &dyn Fn(&SeedResult) -> usize| results.iter().map(f).sum::<usize>();
    BenchmarkSummary {
        seeds: results.len(),
        pos_acc: stat(&|q| q.pos_acc),
        class_acc: stat(&|q| q.class_acc),
        avg_tiou: stat(&|q| q.avg_tiou),
        eap_removal_rate: ratio(total(&|r| r.ambiguous_removed), total(&|r| r.ambiguous_positives)),
        mpp_recovery_rate: ratio(total(&|r| r.demoted_promoted), total(&|r| r.demoted_candidates)),
        icd_pair_accuracy: Stat::of(&results.iter().map(|r| r.icd_pair_accuracy).collect::<Vec<_>>()),
        dynamic_minus_fixed: Stat::of(
            &results
                .iter()
                .map(|r| r.dynamic.pos_acc - r.fixed.pos_acc)
                .collect::<Vec<_>>(),
        ),
        refinement_order_seeds: results.iter().filter(|r| r.refinement_ordered()).count(),
        tau_sweep: sweep_mean(results, |r| &r.tau_sweep),
        sigma_sweep: sweep_mean(results, |r| &r.sigma_sweep),
    }
}

/// True when the sequence rises (weakly) to a peak and then falls (weakly).
pub fn unimodal_or_plateau(ys: &[f64]) -> bool {
    let mut i = 0;
    while i + 1 < ys.len() && ys[i + 1] >= ys[i] {
        i += 1;
    }
    while i + 1 < ys.len() && ys[i + 1] <= ys[i] {
        i += 1;
    }
    i + 1 >= ys.len()
}
