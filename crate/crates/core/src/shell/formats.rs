//! On-disk formats shared by the CLI subcommands.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AplError, Result};
use crate::geometry::Segment;
use crate::quality::FramePredictions;
use crate::selection::{Instance, PseudoLabelSet};
use crate::shell::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    #[default]
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEntry {
    pub segment: Segment,
    pub label: String,
    /// Present on detection files; ground truth leaves it out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub duration: f64,
    pub fps: f64,
    #[serde(default)]
    pub subset: Subset,
    pub annotations: Vec<AnnotationEntry>,
}

/// ActivityNet-style annotation (or detection) file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub classes: Vec<String>,
    pub videos: BTreeMap<String, VideoEntry>,
}

impl AnnotationFile {
    pub fn read(path: &Path) -> Result<Self> {
        let file: AnnotationFile = json::read(path)?;
        file.validate().map_err(|msg| AplError::format(path, msg))?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        json::write(path, self)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.classes.is_empty() {
            return Err("`classes` is empty".into());
        }
        for (id, v) in &self.videos {
            if !(v.duration > 0.0) {
                return Err(format!("videos.{id}.duration must be positive"));
            }
            if !(v.fps > 0.0) {
                return Err(format!("videos.{id}.fps must be positive"));
            }
            for (i, a) in v.annotations.iter().enumerate() {
                if !self.classes.contains(&a.label) {
                    return Err(format!(
                        "videos.{id}.annotations[{i}].label: unknown class {:?}",
                        a.label
                    ));
                }
                if let Some(s) = a.score {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(format!("videos.{id}.annotations[{i}].score must lie in [0, 1]"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Instances of the selected videos; a missing score counts as 1.
    pub fn instances(&self, keep: impl Fn(&str, &VideoEntry) -> bool) -> Vec<Instance> {
        let mut out = Vec::new();
        for (id, v) in &self.videos {
            if !keep(id, v) {
                continue;
            }
            for a in &v.annotations {
                let class = self.class_index(&a.label).expect("validated label");
                out.push(Instance::new(a.segment, class, a.score.unwrap_or(1.0), id.clone()));
            }
        }
        out
    }

    pub fn subset(&self, subset: Subset) -> impl Iterator<Item = (&String, &VideoEntry)> {
        self.videos.iter().filter(move |(_, v)| v.subset == subset)
    }
}

const FEATURE_MAGIC: &[u8; 4] = b"APLF";

/// Writes `frames` (`T` rows of `D` values) as an APLF file.
pub fn write_features(path: &Path, frames: &[Vec<f64>]) -> Result<()> {
    let d = frames.first().map_or(0, Vec::len);
    if let Some(bad) = frames.iter().find(|f| f.len() != d) {
        return Err(AplError::LengthMismatch {
            what: "feature frame",
            expected: d,
            found: bad.len(),
        });
    }
    let mut buf = Vec::with_capacity(12 + 4 * d * frames.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for x in frames.iter().flatten() {
        buf.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| AplError::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AplError::io(path, e))?;
    parse_features(&bytes).map_err(|msg| AplError::format(path, msg))
}

pub fn parse_features(bytes: &[u8]) -> std::result::Result<Vec<Vec<f64>>, String> {
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err("not an APLF feature file".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (d, t) = (word(4), word(8));
    let expected = d.checked_mul(t).and_then(|n| n.checked_mul(4));
    if expected != Some(bytes.len() - 12) {
        return Err(format!(
            "payload is {} bytes, expected 4*D*T = 4*{d}*{t}",
            bytes.len() - 12
        ));
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if d == 0 {
        return Ok(vec![Vec::new(); t]);
    }
    Ok(values.chunks(d).map(<[f64]>::to_vec).collect())
}

pub fn feature_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.aplf"))
}

/// Video ids with a feature file in `dir`, sorted.
pub fn feature_ids(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| AplError::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| AplError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "aplf") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoPredictionEntry {
    pub fps: f64,
    pub cls: Vec<Vec<f64>>,
    pub tiou_hat: Vec<f64>,
    pub tnd_hat: Vec<f64>,
    pub offsets: Vec<(f64, f64)>,
}

impl VideoPredictionEntry {
    pub fn new(fps: f64, p: FramePredictions) -> Self {
        VideoPredictionEntry {
            fps,
            cls: p.cls,
            tiou_hat: p.tiou_hat,
            tnd_hat: p.tnd_hat,
            offsets: p.offsets,
        }
    }

    pub fn predictions(&self) -> Result<FramePredictions> {
        FramePredictions::new(
            self.cls.clone(),
            self.tiou_hat.clone(),
            self.tnd_hat.clone(),
            self.offsets.clone(),
        )
    }
}

/// Frame-level detector outputs per video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionsFile {
    pub videos: BTreeMap<String, VideoPredictionEntry>,
}

impl PredictionsFile {
    pub fn read(path: &Path) -> Result<Self> {
        let file: PredictionsFile = json::read(path)?;
        for (id, v) in &file.videos {
            if !(v.fps > 0.0) {
                return Err(AplError::format(path, format!("videos.{id}.fps must be positive")));
            }
            v.predictions()
                .map_err(|e| AplError::format(path, format!("videos.{id}: {e}")))?;
        }
        Ok(file)
    }
}

/// Partitioned pseudo labels per video, with how they were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabelFile {
    pub classes: Vec<String>,
    pub provenance: BTreeMap<String, String>,
    pub videos: BTreeMap<String, PseudoLabelSet>,
}

impl PseudoLabelFile {
    pub fn read(path: &Path) -> Result<Self> {
        let file: PseudoLabelFile = json::read(path)?;
        for (id, set) in &file.videos {
            for inst in set.all() {
                if inst.class_index >= file.classes.len() {
                    return Err(AplError::format(
                        path,
                        format!("videos.{id}: class index {} out of range", inst.class_index),
                    ));
                }
                if inst.video_id != *id {
                    return Err(AplError::format(
                        path,
                        format!("videos.{id}: instance belongs to {}", inst.video_id),
                    ));
                }
            }
        }
        Ok(file)
    }

    pub fn positives(&self) -> Vec<Instance> {
        self.videos.values().flat_map(|s| s.positives.iter().cloned()).collect()
    }
}

/// Sampled frames and their cluster labels, per video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcpLabelFile {
    pub videos: Vec<String>,
    pub frames: Vec<Vec<usize>>,
    pub coarse: Vec<Vec<usize>>,
    pub fine: Vec<Vec<usize>>,
}
