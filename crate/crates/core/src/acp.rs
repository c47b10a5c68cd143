//! Action-aware contrastive targets and losses.
//!
//! Frames are sampled one per equal partition of a video. Within a video a
//! two-way k-means split yields coarse pseudo-classes (action vs background);
//! across a batch of videos a `B`-way split yields fine pseudo-classes. Both
//! feed the same InfoNCE loss over unit-normalized features.

use std::cell::Cell;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AplError, Result};
use crate::rng::stream_rng;

/// Smallest temperature accepted by the contrastive loss.
pub const MIN_TEMPERATURE: f64 = 1e-6;

/// Half-open bins splitting `0..t` into `n` contiguous parts; the first
/// `t % n` bins are one frame longer.
pub fn partition_bins(t: usize, n: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if n == 0 || n > t {
        return Err(AplError::TooManyPartitions {
            partitions: n,
            frames: t,
        });
    }
    let (base, rem) = (t / n, t % n);
    let mut start = 0;
    Ok((0..n)
        .map(|b| {
            let len = base + usize::from(b < rem);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// One uniformly drawn frame index per partition bin, strictly increasing.
pub fn sample_frames<R: Rng>(t: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    Ok(partition_bins(t, n)?.into_iter().map(|r| rng.random_range(r)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 5,
            max_iters: 100,
            seed: 7,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_points(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Nearest center per point (lowest index on ties) and the within-cluster
/// sum of squares.
fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut wcss = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (best, d) = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| (c, sq_dist(p, ctr)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            wcss += d;
            best
        })
        .collect();
    (labels, wcss)
}

/// Within-cluster sum of squares of a labeling.
pub fn wcss(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            let mean: Vec<f64> = sums[l].iter().map(|s| s / counts[l] as f64).collect();
            sq_dist(p, &mean)
        })
        .sum()
}

fn kmeans_pp<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2
            .iter()
            .rposition(|&d| d > 0.0)
            .expect("a point away from every center");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick].clone();
        for (di, p) in d2.iter_mut().zip(points) {
            *di = di.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iters: usize) -> (Vec<usize>, f64) {
    let (mut labels, mut cost) = assign(points, &centers);
    for _ in 0..max_iters {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, (s, &n)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if n > 0 {
                *c = s.iter().map(|v| v / n as f64).collect();
            }
        }
        let (next, next_cost) = assign(points, &centers);
        let converged = next == labels;
        labels = next;
        cost = next_cost;
        if converged {
            break;
        }
    }
    (labels, cost)
}

/// Relabel so that clusters are numbered in order of first appearance.
pub fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((l, to));
                to
            }
        })
        .collect()
}

/// k-means++ seeded Lloyd iterations, best of `restarts` by WCSS, labels in
/// first-occurrence order.
pub fn kmeans_labels(points: &[Vec<f64>], k: usize, cfg: &KMeansConfig) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(AplError::InvalidArgument("k must be positive".into()));
    }
    if let Some(first) = points.first() {
        if let Some(bad) = points.iter().find(|p| p.len() != first.len()) {
            return Err(AplError::LengthMismatch {
                what: "k-means point dimension",
                expected: first.len(),
                found: bad.len(),
            });
        }
    }
    let distinct = distinct_points(points);
    if distinct < k {
        return Err(AplError::TooFewDistinctPoints { distinct, k });
    }
    if k == 1 {
        return Ok(vec![0; points.len()]);
    }
    let mut rng = stream_rng(cfg.seed, 0x4B4D);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..cfg.restarts.max(1) {
        let centers = kmeans_pp(points, k, &mut rng);
        let (labels, cost) = lloyd(points, centers, cfg.max_iters);
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((labels, cost));
        }
    }
    Ok(canonicalize(&best.expect("at least one restart").0))
}

/// Source of clustering labels, so tests can observe whether clustering ran.
pub trait Clusterer {
    fn labels(&self, points: &[Vec<f64>], k: usize) -> Result<Vec<usize>>;
}

/// [`kmeans_labels`] with a call counter.
#[derive(Debug, Default)]
pub struct KMeans {
    pub cfg: KMeansConfig,
    pub calls: Cell<usize>,
}

impl KMeans {
    pub fn new(cfg: KMeansConfig) -> Self {
        KMeans {
            cfg,
            calls: Cell::new(0),
        }
    }
}

impl Clusterer for KMeans {
    fn labels(&self, points: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
        self.calls.set(self.calls.get() + 1);
        kmeans_labels(points, k, &self.cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBatch {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub temperature: f64,
    pub granularity: Granularity,
}

impl ContrastBatch {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, temperature: f64, granularity: Granularity) -> Self {
        ContrastBatch {
            features,
            labels,
            temperature,
            granularity,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.features.len() != self.labels.len() {
            return Err(AplError::LengthMismatch {
                what: "contrast labels vs features",
                expected: self.features.len(),
                found: self.labels.len(),
            });
        }
        if !(self.temperature >= MIN_TEMPERATURE) {
            return Err(AplError::TemperatureTooSmall(self.temperature));
        }
        if let Some(first) = self.features.first() {
            for f in &self.features {
                if f.len() != first.len() {
                    return Err(AplError::LengthMismatch {
                        what: "contrast feature dimension",
                        expected: first.len(),
                        found: f.len(),
                    });
                }
                if norm(f) == 0.0 {
                    return Err(AplError::InvalidArgument(
                        "zero feature vector cannot be normalized".into(),
                    ));
                }
            }
        }
        let has_pair = self
            .labels
            .iter()
            .enumerate()
            .any(|(i, l)| self.labels[i + 1..].contains(l));
        if !has_pair {
            return Err(AplError::DegenerateContrastBatch);
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Shared forward pass: loss and the gradient with respect to the scaled
/// similarity matrix `s[i][k] = <u_i, u_k> / temperature`.
/// Loss, `d loss / d s`, unit vectors and original norms.
type Forward = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>);

fn forward(batch: &ContrastBatch) -> Result<Forward> {
    batch.validate()?;
    let n = batch.features.len();
    let norms: Vec<f64> = batch.features.iter().map(|f| norm(f)).collect();
    let units: Vec<Vec<f64>> = batch
        .features
        .iter()
        .zip(&norms)
        .map(|(f, &r)| f.iter().map(|v| v / r).collect())
        .collect();
    let tau = batch.temperature;

    let mut total = 0.0;
    let mut n_c = 0usize;
    let mut ds = vec![vec![0.0; n]; n];
    for i in 0..n {
        let li = batch.labels[i];
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && batch.labels[j] == li).collect();
        if positives.is_empty() {
            continue;
        }
        let negatives: Vec<usize> = (0..n).filter(|&k| batch.labels[k] != li).collect();
        let s: Vec<f64> = (0..n).map(|k| dot(&units[i], &units[k]) / tau).collect();
        let shift = positives
            .iter()
            .chain(&negatives)
            .map(|&k| s[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let neg_sum: f64 = negatives.iter().map(|&k| (s[k] - shift).exp()).sum();

        let mut neg_coeff = 0.0;
        for &j in &positives {
            let e = (s[j] - shift).exp();
            let denom = e + neg_sum;
            total += (denom.ln() - (s[j] - shift)).max(0.0);
            ds[i][j] += e / denom - 1.0;
            neg_coeff += 1.0 / denom;
        }
        for &k in &negatives {
            ds[i][k] += (s[k] - shift).exp() * neg_coeff;
        }
        n_c += positives.len();
    }
    let scale = 1.0 / n_c as f64;
    for row in &mut ds {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok((total * scale, ds, units, norms))
}

/// InfoNCE over unit-normalized features. Positives of an anchor are the
/// other samples sharing its label; negatives are those with a different
/// label. The sum of per-pair terms is divided by the number of positive pairs.
pub fn infonce_loss(batch: &ContrastBatch) -> Result<f64> {
    Ok(forward(batch)?.0)
}

/// Gradient of [`infonce_loss`] with respect to the unnormalized features.
pub fn infonce_grad(batch: &ContrastBatch) -> Result<Vec<Vec<f64>>> {
    let (_, ds, units, norms) = forward(batch)?;
    let n = units.len();
    let dim = units.first().map_or(0, Vec::len);
    let tau = batch.temperature;
    let mut du = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for k in 0..n {
            let g = ds[i][k];
            if g == 0.0 {
                continue;
            }
            for d in 0..dim {
                du[i][d] += g * units[k][d] / tau;
                du[k][d] += g * units[i][d] / tau;
            }
        }
    }
    Ok(du
        .into_iter()
        .zip(units.iter().zip(&norms))
        .map(|(g, (u, &r))| {
            let proj = dot(&g, u);
            g.iter().zip(u).map(|(gd, ud)| (gd - proj * ud) / r).collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcpConfig {
    /// Frames sampled per video, one per equal partition.
    pub partitions_n: usize,
    /// Clusters for the fine (cross-video) contrast.
    pub fine_clusters_b: usize,
    pub temperature: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
    pub seed: u64,
}

/// Clusters for the coarse (within-video) contrast.
pub const COARSE_CLUSTERS: usize = 2;

impl Default for AcpConfig {
    fn default() -> Self {
        AcpConfig {
            partitions_n: 16,
            fine_clusters_b: 4,
            temperature: 0.07,
            kmeans_restarts: 5,
            kmeans_max_iters: 100,
            seed: 7,
        }
    }
}

impl AcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.partitions_n == 0 {
            return Err(AplError::Config("acp.partitions_n must be positive".into()));
        }
        if self.fine_clusters_b < 2 {
            return Err(AplError::Config("acp.fine_clusters_b must be at least 2".into()));
        }
        if !(self.temperature >= MIN_TEMPERATURE) {
            return Err(AplError::Config(format!(
                "acp.temperature must be at least {MIN_TEMPERATURE}"
            )));
        }
        Ok(())
    }

    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            restarts: self.kmeans_restarts,
            max_iters: self.kmeans_max_iters,
            seed: self.seed,
        }
    }
}

/// Per-video label lists replacing clustering (fine-tuning with known or
/// pseudo action labels).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AcpLabels {
    pub coarse: Vec<Vec<usize>>,
    pub fine: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcpLosses {
    pub conc: f64,
    pub conf: f64,
    pub acp: f64,
}

/// Coarse labels per video (`k = 2`) and fine labels over the concatenation
/// of all videos (`k = B`), split back per video.
pub fn cluster_labels(videos: &[Vec<Vec<f64>>], cfg: &AcpConfig, clusterer: &dyn Clusterer) -> Result<AcpLabels> {
    let coarse = videos
        .iter()
        .map(|v| clusterer.labels(v, COARSE_CLUSTERS))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<Vec<f64>> = videos.iter().flatten().cloned().collect();
    let flat = clusterer.labels(&all, cfg.fine_clusters_b)?;
    let mut fine = Vec::with_capacity(videos.len());
    let mut offset = 0;
    for v in videos {
        fine.push(flat[offset..offset + v.len()].to_vec());
        offset += v.len();
    }
    Ok(AcpLabels { coarse, fine })
}

/// `conc` is the mean over videos of the within-video coarse loss, `conf`
/// the fine loss over all sampled frames together, `acp` their sum.
pub fn acp_losses(
    videos: &[Vec<Vec<f64>>],
    cfg: &AcpConfig,
    labels: Option<&AcpLabels>,
    clusterer: &dyn Clusterer,
) -> Result<AcpLosses> {
    cfg.validate()?;
    if videos.len() < 2 {
        return Err(AplError::InvalidArgument(format!(
            "fine contrast needs at least 2 videos, got {}",
            videos.len()
        )));
    }
    let owned;
    let labels = match labels {
        Some(l) => {
            for (what, lists) in [("coarse labels", &l.coarse), ("fine labels", &l.fine)] {
                if lists.len() != videos.len() {
                    return Err(AplError::LengthMismatch {
                        what,
                        expected: videos.len(),
                        found: lists.len(),
                    });
                }
            }
            l
        }
        None => {
            owned = cluster_labels(videos, cfg, clusterer)?;
            &owned
        }
    };

    let mut conc = 0.0;
    for (v, l) in videos.iter().zip(&labels.coarse) {
        conc += infonce_loss(&ContrastBatch::new(
            v.clone(),
            l.clone(),
            cfg.temperature,
            Granularity::Coarse,
        ))?;
    }
    conc /= videos.len() as f64;

    let conf = infonce_loss(&ContrastBatch::new(
        videos.iter().flatten().cloned().collect(),
        labels.fine.iter().flatten().copied().collect(),
        cfg.temperature,
        Granularity::Fine,
    ))?;
    Ok(AcpLosses {
        conc,
        conf,
        acp: conc + conf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn sample_frames_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_frames(4, 4, &mut rng).unwrap(), vec![0, 1, 2, 3]);
        let two = sample_frames(10, 2, &mut rng).unwrap();
        assert!(two[0] < 5 && (5..10).contains(&two[1]));
        assert_eq!(partition_bins(7, 3).unwrap(), vec![0..3, 3..5, 5..7]);
        assert!(matches!(
            sample_frames(3, 4, &mut rng),
            Err(AplError::TooManyPartitions { .. })
        ));
    }

    proptest! {
        #[test]
        fn sample_frames_bin_respecting(t in 1usize..300, frac in 0.0..1.0f64, seed: u64) {
            let n = ((t as f64 * frac) as usize).clamp(1, t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx = sample_frames(t, n, &mut rng).unwrap();
            let bins = partition_bins(t, n).unwrap();
            prop_assert_eq!(idx.len(), n);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            for (i, b) in idx.iter().zip(&bins) {
                prop_assert!(b.contains(i));
            }
            let sizes: Vec<usize> = bins.iter().map(|b| b.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    fn best_two_partition(points: &[Vec<f64>]) -> Vec<usize> {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let cost = wcss(points, &labels, 2);
            if cost < best.0 - 1e-12 {
                best = (cost, labels);
            }
        }
        canonicalize(&best.1)
    }

    #[test]
    fn kmeans_examples() {
        let pts = vec![vec![0., 0.], vec![0.1, 0.], vec![5., 5.], vec![5.1, 5.]];
        let labels = kmeans_labels(&pts, 2, &KMeansConfig::default()).unwrap();
        assert_eq!(labels, vec![0, 0, 1, 1]);
        assert_eq!(labels, best_two_partition(&pts));
        assert_eq!(kmeans_labels(&pts, 1, &KMeansConfig::default()).unwrap(), vec![0; 4]);
        assert!(matches!(
            kmeans_labels(&vec![vec![1., 1.]; 5], 2, &KMeansConfig::default()),
            Err(AplError::TooFewDistinctPoints { distinct: 1, k: 2 })
        ));
    }

    #[test]
    fn kmeans_matches_exhaustive_two_partition_on_clustered_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = Normal::new(0.0, 0.5).unwrap();
        for _ in 0..50 {
            let pts: Vec<Vec<f64>> = (0..10)
                .map(|i| {
                    let c = if rng.random_bool(0.5) || i == 0 { 0.0 } else { 6.0 };
                    vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]
                })
                .collect();
            if distinct_points(&pts) < 2 || pts.iter().all(|p| p[0] < 3.0) {
                continue;
            }
            let got = kmeans_labels(&pts, 2, &KMeansConfig::default()).unwrap();
            assert_abs_diff_eq!(
                wcss(&pts, &got, 2),
                wcss(&pts, &best_two_partition(&pts), 2),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| vec![rng.random(), rng.random(), rng.random()])
            .collect();
        let cfg = KMeansConfig::default();
        let a = kmeans_labels(&pts, 4, &cfg).unwrap();
        assert_eq!(a, kmeans_labels(&pts, 4, &cfg).unwrap());
        assert_eq!(a[0], 0);
        assert_eq!(canonicalize(&a), a);
    }

    /// Direct transcription of the loss: explicit exponentials, no shifting.
    pub(crate) fn naive_infonce(features: &[Vec<f64>], labels: &[usize], tau: f64) -> f64 {
        let unit = |v: &Vec<f64>| {
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / r).collect::<Vec<f64>>()
        };
        let u: Vec<Vec<f64>> = features.iter().map(unit).collect();
        let sim = |i: usize, j: usize| u[i].iter().zip(&u[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if j == i || labels[j] != labels[i] {
                    continue;
                }
                let num = sim(i, j).exp();
                let mut den = num;
                for k in 0..u.len() {
                    if labels[k] != labels[i] {
                        den += sim(i, k).exp();
                    }
                }
                sum += -(num / den).ln();
                count += 1.0;
            }
        }
        sum / count
    }

    fn batch(features: Vec<Vec<f64>>, labels: Vec<usize>, tau: f64) -> ContrastBatch {
        ContrastBatch::new(features, labels, tau, Granularity::Fine)
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn infonce_examples() {
        let b = batch(vec![vec![1., 0.], vec![1., 0.], vec![0., 1.]], vec![0, 0, 1], 1.0);
        assert_abs_diff_eq!(infonce_loss(&b).unwrap(), 0.313262, epsilon = 1e-6);
        assert_abs_diff_eq!(
            infonce_loss(&b).unwrap(),
            -(1f64.exp() / (1f64.exp() + 1.0)).ln(),
            epsilon = 1e-12
        );

        let b = batch(vec![vec![1., 0.], vec![0., 1.]], vec![0, 0], 1.0);
        assert_eq!(infonce_loss(&b).unwrap(), 0.0);

        let b = batch(vec![vec![1., 0.], vec![1., 0.], vec![0., 1.]], vec![0, 0, 1], 1e12);
        assert_abs_diff_eq!(infonce_loss(&b).unwrap(), 0.693147, epsilon = 1e-6);
    }

    #[test]
    fn infonce_errors() {
        let b = batch(vec![vec![1., 0.], vec![0., 1.]], vec![0, 1], 1.0);
        assert!(matches!(infonce_loss(&b), Err(AplError::DegenerateContrastBatch)));
        let b = batch(vec![vec![1., 0.], vec![1., 0.]], vec![0, 0], 1e-7);
        assert!(matches!(infonce_grad(&b), Err(AplError::TemperatureTooSmall(_))));
        let b = batch(vec![vec![1., 0.], vec![1., 0.]], vec![0], 1.0);
        assert!(matches!(infonce_loss(&b), Err(AplError::LengthMismatch { .. })));
    }

    pub(crate) fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> ContrastBatch {
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        labels[1] = labels[0];
        let features = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        batch(features, labels, rng.random_range(0.1..1.0))
    }

    pub(crate) fn grad_check_error(b: &ContrastBatch) -> f64 {
        let g = infonce_grad(b).unwrap();
        let step = 1e-5;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..b.features.len() {
            for d in 0..b.features[i].len() {
                let mut plus = b.clone();
                plus.features[i][d] += step;
                let mut minus = b.clone();
                minus.features[i][d] -= step;
                let fd = (infonce_loss(&plus).unwrap() - infonce_loss(&minus).unwrap()) / (2.0 * step);
                num += (fd - g[i][d]).powi(2);
                den += fd.powi(2).max(g[i][d].powi(2));
            }
        }
        (num / den.max(1e-30)).sqrt()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let b = random_batch(&mut rng, 7, 4, 3);
            assert!(grad_check_error(&b) < 1e-4);
        }
    }

    #[test]
    fn symmetric_pair_gradient() {
        let b = batch(vec![vec![1., 0.2], vec![1., 0.2], vec![0., 1.]], vec![0, 0, 1], 0.5);
        let g = infonce_grad(&b).unwrap();
        assert_abs_diff_eq!(norm(&g[0]), norm(&g[1]), epsilon = 1e-12);
        assert_abs_diff_eq!(g[0][0], g[1][0], epsilon = 1e-12);
        assert_abs_diff_eq!(g[0][1], g[1][1], epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn infonce_invariances(seed: u64, scale in 0.01..100.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_batch(&mut rng, 8, 3, 3);
            let base = infonce_loss(&b).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((base - naive_infonce(&b.features, &b.labels, b.temperature)).abs() < 1e-9);

            let mut scaled = b.clone();
            for f in &mut scaled.features { for v in f.iter_mut() { *v *= scale; } }
            prop_assert!((infonce_loss(&scaled).unwrap() - base).abs() < 1e-9);

            let mut relabeled = b.clone();
            for l in &mut relabeled.labels { *l = 100 - 7 * *l; }
            prop_assert!((infonce_loss(&relabeled).unwrap() - base).abs() < 1e-12);

            let mut perm: Vec<usize> = (0..8).collect();
            perm.reverse();
            perm.swap(0, 3);
            let permuted = batch(
                perm.iter().map(|&i| b.features[i].clone()).collect(),
                perm.iter().map(|&i| b.labels[i]).collect(),
                b.temperature,
            );
            prop_assert!((infonce_loss(&permuted).unwrap() - base).abs() < 1e-9);
        }
    }

    fn synthetic_videos(seed: u64) -> Vec<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.2).unwrap();
        (0..2)
            .map(|v| {
                (0..16)
                    .map(|t| {
                        let action = (4..10).contains(&t);
                        let base = match (action, v) {
                            (false, _) => [1.0, 0.0, 0.0],
                            (true, 0) => [0.0, 1.0, 0.0],
                            (true, _) => [0.0, 0.0, 1.0],
                        };
                        base.iter().map(|b| b + noise.sample(&mut rng)).collect()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn acp_losses_match_naive_reimplementation() {
        let videos = synthetic_videos(7);
        let cfg = AcpConfig::default();
        let km = KMeans::new(cfg.kmeans());
        let losses = acp_losses(&videos, &cfg, None, &km).unwrap();
        assert_eq!(km.calls.get(), 3);

        let labels = cluster_labels(&videos, &cfg, &km).unwrap();
        let conc = videos
            .iter()
            .zip(&labels.coarse)
            .map(|(v, l)| naive_infonce(v, l, cfg.temperature))
            .sum::<f64>()
            / 2.0;
        let all: Vec<Vec<f64>> = videos.iter().flatten().cloned().collect();
        let conf = naive_infonce(&all, &labels.fine.concat(), cfg.temperature);
        assert_abs_diff_eq!(losses.conc, conc, epsilon = 1e-9);
        assert_abs_diff_eq!(losses.conf, conf, epsilon = 1e-9);
        assert_abs_diff_eq!(losses.acp, conc + conf, epsilon = 1e-12);
        // action frames separate from background within each video
        for l in &labels.coarse {
            assert!((4..10).all(|t| l[t] == l[4]) && (0..4).all(|t| l[t] != l[4]));
        }
    }

    #[test]
    fn external_labels_skip_clustering() {
        let videos = synthetic_videos(3);
        let labels = AcpLabels {
            coarse: vec![(0..16).map(|t| usize::from((4..10).contains(&t))).collect(); 2],
            fine: vec![vec![0; 16], vec![1; 16]],
        };
        let km = KMeans::new(KMeansConfig::default());
        let out = acp_losses(&videos, &AcpConfig::default(), Some(&labels), &km).unwrap();
        assert_eq!(km.calls.get(), 0);
        assert!(out.acp >= 0.0);
    }

    #[test]
    fn identical_groups_give_zero_coarse_loss() {
        let video: Vec<Vec<f64>> = (0..8)
            .map(|t| if t < 4 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let b = batch(video, vec![0, 0, 0, 0, 1, 1, 1, 1], 0.07);
        // positives have similarity 1/0.07, negatives 0: the loss is tiny but
        // only exactly zero without negatives
        assert!(infonce_loss(&b).unwrap() < 1e-5);
        assert!(matches!(
            acp_losses(&[vec![vec![1.0]; 4]], &AcpConfig::default(), None, &KMeans::default()),
            Err(AplError::InvalidArgument(_))
        ));
    }
}
