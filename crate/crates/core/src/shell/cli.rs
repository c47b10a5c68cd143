//! `apl` subcommands. Each reads the shared formats, runs one pipeline stage
//! and writes its artifacts plus a summary (text, or JSON with `--json`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::acp::{self, AcpLabels, KMeans};
use crate::benchmark::{self, run_benchmark, summarize, unimodal_or_plateau, BenchmarkSummary, SeedResult};
use crate::error::{AplError, Result};
use crate::evalsuite::{mean_ap, pseudo_label_quality, MapReport, QualityReport};
use crate::icd::{self, segment_feature, DiscriminatorModel, InstanceFeature, LabeledBank, RefineMode};
use crate::rng::stream_rng;
use crate::selection::{Instance, RefinementAction, SelectionConfig};
use crate::shell::config::RunConfig;
use crate::shell::formats::{
    feature_ids, feature_path, read_features, write_features, AcpLabelFile, AnnotationEntry, AnnotationFile,
    PredictionsFile, PseudoLabelFile, Subset, VideoEntry, VideoPredictionEntry,
};
use crate::shell::json;
use crate::simharness::{corrupt_predictions, generate_world, VideoPredictions};

#[derive(Debug, Parser)]
#[command(
    name = "apl",
    version,
    about = "Pseudo-label selection and refinement for temporal action localization"
)]
pub struct Cli {
    /// Print the summary as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Worker threads for per-video work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world: annotations, features and noisy predictions.
    Simulate(SimulateArgs),
    /// Decode, Soft-NMS and partition frame predictions into pseudo labels.
    Select(SelectArgs),
    /// Train the instance-level consistency discriminator on labeled videos.
    IcdTrain(IcdTrainArgs),
    /// Apply EAP and/or MPP to a pseudo-label file.
    Refine(RefineArgs),
    /// Sample frames per video and cluster them for the contrastive losses.
    AcpLabels(AcpLabelsArgs),
    /// Evaluate the coarse and fine contrastive losses.
    AcpLoss(AcpLossArgs),
    /// mAP over the tIoU grid, plus pseudo-label quality for pseudo files.
    Eval(EvalArgs),
    /// Tabulate eval runs, or run the seeded ablation benchmark.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use a constant positive threshold instead of the dynamic one.
    #[arg(long)]
    pub fixed_tau_pos: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IcdTrainArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write `epoch,loss` rows here.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub pseudo: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, conflicts_with = "mpp_only")]
    pub eap_only: bool,
    #[arg(long)]
    pub mpp_only: bool,
}

#[derive(Debug, Args)]
pub struct AcpLabelsArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AcpLossArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Labels from `acp-labels`; clusters afresh when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground truth.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Detections in the annotation format, with scores.
    #[arg(long, required_unless_present = "pseudo", conflicts_with = "pseudo")]
    pub detections: Option<PathBuf>,
    /// Pseudo-label file; its positives are evaluated.
    #[arg(long)]
    pub pseudo: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-class AP table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// An eval output to tabulate, as NAME=PATH. Repeatable.
    #[arg(long = "run", value_name = "NAME=PATH", required_unless_present = "benchmark")]
    pub runs: Vec<String>,
    /// Run the seeded ablation benchmark.
    #[arg(long)]
    pub benchmark: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a subcommand reports back.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub text: String,
    pub json: Value,
}

impl Outcome {
    pub fn render(&self, as_json: bool) -> Result<String> {
        if as_json {
            json::to_string(&self.json)
        } else {
            Ok(self.text.clone())
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| AplError::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Select(a) => select(a),
        Command::IcdTrain(a) => icd_train(a),
        Command::Refine(a) => refine(a),
        Command::AcpLabels(a) => acp_labels(a),
        Command::AcpLoss(a) => acp_loss(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| AplError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| AplError::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class_{i}")).collect()
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let world = generate_world(&cfg.world)?;
    let corrupted = corrupt_predictions(&world, &cfg.noise)?;
    let classes = class_names(cfg.world.n_classes);

    let features_dir = a.out.join("features");
    create_dir(&features_dir)?;
    let mut videos = BTreeMap::new();
    for v in &world.videos {
        write_features(&feature_path(&features_dir, &v.id), &v.frames)?;
        let annotations = v
            .annotations
            .iter()
            .map(|g| AnnotationEntry {
                segment: g.segment,
                label: classes[g.class_index].clone(),
                score: None,
            })
            .collect();
        let subset = if v.labeled { Subset::Labeled } else { Subset::Unlabeled };
        videos.insert(
            v.id.clone(),
            VideoEntry {
                duration: v.duration,
                fps: v.fps,
                subset,
                annotations,
            },
        );
    }
    let annotations = AnnotationFile { classes, videos };
    annotations.write(&a.out.join("annotations.json"))?;

    let predictions = PredictionsFile {
        videos: corrupted
            .videos
            .iter()
            .map(|vp| {
                (
                    vp.video_id.clone(),
                    VideoPredictionEntry::new(vp.fps, vp.predictions.clone()),
                )
            })
            .collect(),
    };
    json::write(&a.out.join("predictions.json"), &predictions)?;
    json::write(&a.out.join("injections.json"), &corrupted.ledger)?;

    let labeled = world.labeled().count();
    let n_gt: usize = world.videos.iter().map(|v| v.annotations.len()).sum();
    Ok(Outcome {
        text: format!(
            "videos     {}\nlabeled    {}\nunlabeled  {}\ninstances  {}\ninjections {}\nwritten to {}\n",
            world.videos.len(),
            labeled,
            world.videos.len() - labeled,
            n_gt,
            corrupted.ledger.entries.len(),
            a.out.display()
        ),
        json: json!({
            "videos": world.videos.len(),
            "labeled": labeled,
            "instances": n_gt,
            "injections": corrupted.ledger.entries.len(),
        }),
    })
}

fn tier_table(files: &PseudoLabelFile) -> (String, Value) {
    let (mut pos, mut cand, mut rej) = (0, 0, 0);
    let mut tau_sum = 0.0;
    for s in files.videos.values() {
        pos += s.positives.len();
        cand += s.candidates.len();
        rej += s.rejected.len();
        tau_sum += s.tau_pos;
    }
    let n = files.videos.len();
    let mean_tau = if n == 0 { 0.0 } else { tau_sum / n as f64 };
    let text = format!(
        "tier        instances\npositives   {pos:>9}\ncandidates  {cand:>9}\nrejected    {rej:>9}\nvideos {n}, mean tau_pos {mean_tau:.4}\n"
    );
    let json = json!({
        "videos": n,
        "positives": pos,
        "candidates": cand,
        "rejected": rej,
        "mean_tau_pos": mean_tau,
    });
    (text, json)
}

pub fn select(a: &SelectArgs) -> Result<Outcome> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let annotations = AnnotationFile::read(&a.annotations)?;
    let predictions = PredictionsFile::read(&a.predictions)?;
    let selection = SelectionConfig {
        fixed_tau_pos: a.fixed_tau_pos.or(cfg.selection.fixed_tau_pos),
        ..cfg.selection
    };
    selection.validate()?;
    let k = annotations.classes.len();
    for (id, v) in &predictions.videos {
        if v.cls.len() != k {
            return Err(AplError::format(
                &a.predictions,
                format!("videos.{id}.cls has {} classes, annotations list {k}", v.cls.len()),
            ));
        }
    }

    let entries: Vec<(&String, &VideoPredictionEntry)> = predictions.videos.iter().collect();
    let sets = entries
        .par_iter()
        .map(|(id, v)| {
            let vp = VideoPredictions {
                video_id: (*id).clone(),
                fps: v.fps,
                predictions: v.predictions()?,
            };
            Ok(((*id).clone(), benchmark::select_video(&vp, &cfg.scoring, &selection)?))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let mut provenance = BTreeMap::new();
    provenance.insert("stage".to_string(), "select".to_string());
    provenance.insert(
        "threshold".to_string(),
        match selection.fixed_tau_pos {
            Some(t) => format!("fixed {t:.6}"),
            None => format!("dynamic mean+{:.6}*std", selection.tau_pos_multiplier),
        },
    );
    provenance.insert("tau_neg".to_string(), format!("{:.6}", selection.tau_neg));
    provenance.insert("predictions".to_string(), file_name(&a.predictions));
    let file = PseudoLabelFile {
        classes: annotations.classes.clone(),
        provenance,
        videos: sets,
    };
    json::write(&a.out, &file)?;
    let (text, json) = tier_table(&file);
    Ok(Outcome { text, json })
}

/// Ground-truth instance features of the labeled subset, in video order.
fn labeled_features(annotations: &AnnotationFile, features: &Path) -> Result<Vec<InstanceFeature>> {
    let videos: Vec<(&String, &VideoEntry)> = annotations.subset(Subset::Labeled).collect();
    let per_video = videos
        .par_iter()
        .map(|(id, v)| {
            let frames = read_features(&feature_path(features, id))?;
            v.annotations
                .iter()
                .map(|g| {
                    let class = annotations.class_index(&g.label).expect("validated label");
                    segment_feature(&frames, v.fps, &g.segment, class, id)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

pub fn icd_train(a: &IcdTrainArgs) -> Result<Outcome> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let annotations = AnnotationFile::read(&a.annotations)?;
    let labeled = labeled_features(&annotations, &a.features)?;
    if labeled.is_empty() {
        return Err(AplError::format(
            &a.annotations,
            "no annotated instance in the labeled subset",
        ));
    }
    let outcome = icd::train(std::slice::from_ref(&labeled), &cfg.icd)?;
    outcome.model.save(&a.out)?;
    if let Some(path) = &a.loss_csv {
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in outcome.loss_curve.iter().enumerate() {
            let _ = writeln!(csv, "{i},{l:.6}");
        }
        write_text(path, &csv)?;
    }
    let first = outcome.loss_curve.first().copied().unwrap_or(f64::NAN);
    let last = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
    Ok(Outcome {
        text: format!(
            "labeled instances {}\npairs             {}\nepochs            {}\nloss              {:.6} -> {:.6}\nmodel written to  {}\n",
            labeled.len(),
            outcome.n_pairs,
            cfg.icd.epochs,
            first,
            last,
            a.out.display()
        ),
        json: json!({
            "labeled_instances": labeled.len(),
            "pairs": outcome.n_pairs,
            "epochs": cfg.icd.epochs,
            "initial_loss": first,
            "final_loss": last,
        }),
    })
}

pub fn refine(a: &RefineArgs) -> Result<Outcome> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let annotations = AnnotationFile::read(&a.annotations)?;
    let pseudo = PseudoLabelFile::read(&a.pseudo)?;
    if pseudo.classes != annotations.classes {
        return Err(AplError::format(
            &a.pseudo,
            "class list differs from the annotation file",
        ));
    }
    let model = DiscriminatorModel::load(&a.model)?;
    let labeled = labeled_features(&annotations, &a.features)?;
    if let Some(f) = labeled.first() {
        if f.dim() != model.dim {
            return Err(AplError::LengthMismatch {
                what: "feature dimension vs model",
                expected: model.dim,
                found: f.dim(),
            });
        }
    }
    let bank = LabeledBank::new(&labeled, cfg.icd.max_labeled_per_class);
    let mode = match (a.eap_only, a.mpp_only) {
        (true, _) => RefineMode::EAP_ONLY,
        (_, true) => RefineMode::MPP_ONLY,
        _ => RefineMode::BOTH,
    };

    let entries: Vec<_> = pseudo.videos.iter().collect();
    let refined = entries
        .par_iter()
        .map(|(id, set)| {
            let fps = annotations
                .videos
                .get(*id)
                .ok_or_else(|| AplError::format(&a.annotations, format!("no entry for video {id}")))?
                .fps;
            let frames = read_features(&feature_path(&a.features, id))?;
            let scores = benchmark::score_set(&model, &bank, set, &frames, fps)?;
            let out = icd::refine(set, &scores, cfg.icd.tau_icd, cfg.icd.sigma_icd, mode)?;
            Ok(((*id).clone(), out))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let mut provenance = pseudo.provenance.clone();
    let steps = match (mode.eap, mode.mpp) {
        (true, true) => "eap+mpp",
        (true, false) => "eap",
        (false, true) => "mpp",
        (false, false) => "none",
    };
    provenance.insert("refine".to_string(), steps.to_string());
    provenance.insert("tau_icd".to_string(), format!("{:.6}", cfg.icd.tau_icd));
    provenance.insert("sigma_icd".to_string(), format!("{:.6}", cfg.icd.sigma_icd));
    provenance.insert("model".to_string(), file_name(&a.model));
    let file = PseudoLabelFile {
        classes: pseudo.classes.clone(),
        provenance,
        videos: refined,
    };
    json::write(&a.out, &file)?;

    // The log keeps earlier passes; count this one only.
    let mut actions: BTreeMap<String, usize> = BTreeMap::new();
    for (id, set) in &file.videos {
        let before = pseudo.videos[id].refinement_log.len();
        for e in &set.refinement_log[before..] {
            if e.action != RefinementAction::Kept {
                *actions.entry(e.action.to_string()).or_default() += 1;
            }
        }
    }
    let (mut text, mut summary) = tier_table(&file);
    for (k, n) in &actions {
        let _ = writeln!(text, "{k:<12}{n:>9}");
    }
    summary["actions"] = json!(actions);
    Ok(Outcome { text, json: summary })
}

struct Sampled {
    ids: Vec<String>,
    frames: Vec<Vec<usize>>,
    points: Vec<Vec<Vec<f64>>>,
}

/// One frame per equal partition of every video in `dir`, drawn from a
/// per-video stream.
fn sample_dir(dir: &Path, cfg: &acp::AcpConfig) -> Result<Sampled> {
    let ids = feature_ids(dir)?;
    let drawn = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let all = read_features(&feature_path(dir, id))?;
            let idx = acp::sample_frames(all.len(), cfg.partitions_n, &mut stream_rng(cfg.seed, i as u64))?;
            let pts = idx.iter().map(|&t| all[t].clone()).collect::<Vec<_>>();
            Ok((idx, pts))
        })
        .collect::<Result<Vec<_>>>()?;
    let (frames, points) = drawn.into_iter().unzip();
    Ok(Sampled { ids, frames, points })
}

pub fn acp_labels(a: &AcpLabelsArgs) -> Result<Outcome> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let sampled = sample_dir(&a.features, &cfg.acp)?;
    let labels = acp::cluster_labels(&sampled.points, &cfg.acp, &KMeans::new(cfg.acp.kmeans()))?;
    let file = AcpLabelFile {
        videos: sampled.ids,
        frames: sampled.frames,
        coarse: labels.coarse,
        fine: labels.fine,
    };
    json::write(&a.out, &file)?;
    let mut sizes = vec![0usize; cfg.acp.fine_clusters_b];
    for &l in file.fine.iter().flatten() {
        sizes[l] += 1;
    }
    Ok(Outcome {
        text: format!(
            "videos {}\nframes per video {}\nfine cluster sizes {:?}\n",
            file.videos.len(),
            cfg.acp.partitions_n,
            sizes
        ),
        json: json!({"videos": file.videos.len(), "frames_per_video": cfg.acp.partitions_n, "fine_cluster_sizes": sizes}),
    })
}

pub fn acp_loss(a: &AcpLossArgs) -> Result<Outcome> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let kmeans = KMeans::new(cfg.acp.kmeans());
    let losses = match &a.labels {
        Some(path) => {
            let file: AcpLabelFile = json::read(path)?;
            let points = file
                .videos
                .iter()
                .zip(&file.frames)
                .map(|(id, idx)| {
                    let all = read_features(&feature_path(&a.features, id))?;
                    idx.iter()
                        .map(|&t| {
                            all.get(t)
                                .cloned()
                                .ok_or_else(|| AplError::format(path, format!("frame {t} beyond the end of {id}")))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let labels = AcpLabels {
                coarse: file.coarse,
                fine: file.fine,
            };
            acp::acp_losses(&points, &cfg.acp, Some(&labels), &kmeans)?
        }
        None => {
            let sampled = sample_dir(&a.features, &cfg.acp)?;
            acp::acp_losses(&sampled.points, &cfg.acp, None, &kmeans)?
        }
    };
    if let Some(out) = &a.out {
        json::write(out, &losses)?;
    }
    Ok(Outcome {
        text: format!(
            "L_conc {:.6}\nL_conf {:.6}\nL_acp  {:.6}\n",
            losses.conc, losses.conf, losses.acp
        ),
        json: serde_json::to_value(losses).expect("plain struct"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub source: String,
    pub map: MapReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<QualityReport>,
}

pub fn eval(a: &EvalArgs) -> Result<Outcome> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let gt_file = AnnotationFile::read(&a.annotations)?;
    let (preds, videos, source): (Vec<Instance>, Vec<String>, &Path) = match (&a.detections, &a.pseudo) {
        (Some(path), _) => {
            let det = AnnotationFile::read(path)?;
            let mut preds = Vec::new();
            for (id, v) in &det.videos {
                for (i, d) in v.annotations.iter().enumerate() {
                    let class = gt_file.class_index(&d.label).ok_or_else(|| {
                        AplError::format(
                            path,
                            format!("videos.{id}.annotations[{i}].label: class not in ground truth"),
                        )
                    })?;
                    preds.push(Instance::new(d.segment, class, d.score.unwrap_or(1.0), id.clone()));
                }
            }
            (preds, det.videos.keys().cloned().collect(), path)
        }
        (None, Some(path)) => {
            let pseudo = PseudoLabelFile::read(path)?;
            if pseudo.classes != gt_file.classes {
                return Err(AplError::format(path, "class list differs from the ground truth"));
            }
            (pseudo.positives(), pseudo.videos.keys().cloned().collect(), path)
        }
        (None, None) => return Err(AplError::InvalidArgument("need --detections or --pseudo".into())),
    };
    for id in &videos {
        if !gt_file.videos.contains_key(id) {
            return Err(AplError::format(source, format!("video {id} has no ground truth")));
        }
    }
    let keep: std::collections::BTreeSet<&String> = videos.iter().collect();
    let gts = gt_file.instances(|id, _| keep.contains(&id.to_string()));
    let map = mean_ap(&preds, &gts, &cfg.eval)?;
    let quality = a.pseudo.as_ref().map(|_| pseudo_label_quality(&preds, &gts, &cfg.eval));
    let output = EvalOutput {
        source: file_name(source),
        map,
        quality,
    };
    if let Some(out) = &a.out {
        json::write(out, &output)?;
    }
    if let Some(csv) = &a.csv {
        write_text(csv, &output.map.to_csv(Some(&gt_file.classes)))?;
    }

    let mut text = String::from("tIoU   mAP\n");
    for (t, m) in &output.map.per_threshold {
        let _ = writeln!(text, "{t:.2}   {:.4}", m);
    }
    let _ = writeln!(text, "avg    {:.4}", output.map.average);
    if let Some(q) = &output.quality {
        let _ = writeln!(
            text,
            "Class Acc {:.4}  Avg tIoU {:.4}  Pos Acc {:.4}  ({} pseudo labels, {} ground truth)",
            q.class_acc, q.avg_tiou, q.pos_acc, q.n_pseudo, q.n_gt
        );
    }
    Ok(Outcome {
        text,
        json: serde_json::to_value(&output).expect("plain struct"),
    })
}

fn parse_run(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(AplError::InvalidArgument(format!(
            "--run expects NAME=PATH, got {spec:?}"
        ))),
    }
}

fn runs_table(runs: &[(String, EvalOutput)]) -> String {
    let mut text = format!(
        "{:<12} {:>8} {:>9} {:>9} {:>9} {:>7}\n",
        "run", "avg mAP", "Pos Acc", "Class Acc", "Avg tIoU", "N"
    );
    for (name, r) in runs {
        let q = r.quality.unwrap_or_default();
        let _ = writeln!(
            text,
            "{name:<12} {:>8.4} {:>9.4} {:>9.4} {:>9.4} {:>7}",
            r.map.average, q.pos_acc, q.class_acc, q.avg_tiou, q.n_pseudo
        );
    }
    text
}

/// One line per ordering the benchmark is expected to show.
pub fn orderings(s: &BenchmarkSummary) -> Vec<(String, bool)> {
    let p = |k: &str| s.pos_acc[k].mean;
    let d = &s.dynamic_minus_fixed;
    let taus: Vec<f64> = s.tau_sweep.iter().map(|x| x.1).collect();
    let sigmas: Vec<f64> = s.sigma_sweep.iter().map(|x| x.1).collect();
    let need = s.seeds - s.seeds / 5;
    vec![
        (
            format!("dynamic - fixed Pos Acc = {:.4} > 2*SE = {:.4}", d.mean, 2.0 * d.se),
            d.mean > 0.0 && d.mean > 2.0 * d.se,
        ),
        (
            format!(
                "EAP+MPP {:.4} >= max(EAP {:.4}, MPP {:.4}) >= none {:.4} on {}/{} seeds (need {})",
                p("eap_mpp"),
                p("eap"),
                p("mpp"),
                p("dynamic"),
                s.refinement_order_seeds,
                s.seeds,
                need
            ),
            p("eap_mpp") >= p("eap").max(p("mpp"))
                && p("eap").max(p("mpp")) >= p("dynamic")
                && s.refinement_order_seeds >= need,
        ),
        (
            format!("tau_icd sweep unimodal or plateau: {taus:.4?}"),
            unimodal_or_plateau(&taus),
        ),
        (
            format!("sigma_icd sweep unimodal or plateau: {sigmas:.4?}"),
            unimodal_or_plateau(&sigmas),
        ),
    ]
}

pub fn benchmark_tables(s: &BenchmarkSummary) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "Pseudo-label quality over {} seeds (mean ± SE)", s.seeds);
    let _ = writeln!(
        text,
        "{:<10} {:>16} {:>16} {:>16}",
        "variant", "Pos Acc", "Class Acc", "Avg tIoU"
    );
    for v in benchmark::VARIANTS {
        let cell = |m: &BTreeMap<String, benchmark::Stat>| format!("{:.4} ± {:.4}", m[v].mean, m[v].se);
        let _ = writeln!(
            text,
            "{v:<10} {:>16} {:>16} {:>16}",
            cell(&s.pos_acc),
            cell(&s.class_acc),
            cell(&s.avg_tiou)
        );
    }
    let _ = writeln!(
        text,
        "\nEAP removal of injected ambiguous positives {:.3}\nMPP recovery of demoted true instances      {:.3}\nICD held-out pair accuracy {:.4} ± {:.4}",
        s.eap_removal_rate, s.mpp_recovery_rate, s.icd_pair_accuracy.mean, s.icd_pair_accuracy.se
    );
    let _ = writeln!(text, "\ntau_icd  Pos Acc");
    for (t, v) in &s.tau_sweep {
        let _ = writeln!(text, "{t:<8.2} {v:.4}");
    }
    let _ = writeln!(text, "\nsigma_icd  Pos Acc");
    for (t, v) in &s.sigma_sweep {
        let _ = writeln!(text, "{t:<10.2} {v:.4}");
    }
    let _ = writeln!(text, "\nOrderings");
    for (line, ok) in orderings(s) {
        let _ = writeln!(text, "[{}] {line}", if ok { "ok" } else { "NO" });
    }
    text
}

#[derive(Debug, Clone, Serialize)]
struct BenchmarkOutput<'a> {
    summary: &'a BenchmarkSummary,
    seeds: &'a [SeedResult],
}

pub fn report(a: &ReportArgs) -> Result<Outcome> {
    let mut text = String::new();
    let mut out = serde_json::Map::new();
    if !a.runs.is_empty() {
        let runs = a
            .runs
            .iter()
            .map(|spec| {
                let (name, path) = parse_run(spec)?;
                Ok((name, json::read::<EvalOutput>(&path)?))
            })
            .collect::<Result<Vec<_>>>()?;
        text.push_str(&runs_table(&runs));
        let table: BTreeMap<&String, &EvalOutput> = runs.iter().map(|(n, r)| (n, r)).collect();
        out.insert("runs".into(), serde_json::to_value(table).expect("plain struct"));
    }
    if a.benchmark {
        let cfg = RunConfig::load(a.config.as_deref())?;
        let results = run_benchmark(&cfg.benchmark())?;
        let summary = summarize(&results);
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&benchmark_tables(&summary));
        let ord: Vec<Value> = orderings(&summary)
            .into_iter()
            .map(|(check, ok)| json!({"check": check, "ok": ok}))
            .collect();
        out.insert("orderings".into(), Value::Array(ord));
        out.insert(
            "benchmark".into(),
            serde_json::to_value(BenchmarkOutput {
                summary: &summary,
                seeds: &results,
            })
            .expect("plain struct"),
        );
    }
    let value = Value::Object(out);
    if let Some(path) = &a.out {
        json::write(path, &value)?;
    }
    Ok(Outcome { text, json: value })
}
