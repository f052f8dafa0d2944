//! k-means with k-means++ seeding and restarts, the WSS elbow curve, k
//! selection and cluster characterization.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;

pub const DEFAULT_RESTARTS: usize = 20;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;
/// Relative slack allowed when checking that an iteration did not raise WSS.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("k = {k} needs at least {k} rows, got {rows}")]
    TooFewRows { rows: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("rows have differing lengths")]
    Ragged,
    #[error("elbow selection needs at least 3 curve points, got {0}")]
    CurveTooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub wss: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl ClusterModel {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest index on ties, with its squared distance.
pub fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Sum of squared distances from each row to its assigned centroid.
pub fn wss_of(x: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    x.iter().zip(assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum()
}

fn check(x: &[Vec<f64>], k: usize) -> Result<(), ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if x.len() < k {
        return Err(ClusterError::TooFewRows { rows: x.len(), k });
    }
    if x.iter().any(|r| r.len() != x[0].len()) {
        return Err(ClusterError::Ragged);
    }
    Ok(())
}

/// k-means++ seeding: first centre uniform, then each next centre drawn with
/// probability proportional to squared distance from the nearest chosen one.
pub fn kmeanspp_init(x: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut centroids = vec![x[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    chosen = Some(i);
                    if acc > r {
                        break;
                    }
                }
            }
            chosen.expect("positive total weight")
        } else {
            rng.random_range(0..n)
        };
        centroids.push(x[pick].clone());
        for (d, p) in d2.iter_mut().zip(x) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub wss: f64,
    /// WSS after every iteration, ending with the final assignment.
    pub history: Vec<f64>,
}

fn assign(x: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    x.iter().map(|p| nearest(p, centroids).0).collect()
}

/// Gives every empty cluster the point farthest from its own centroid, taken
/// from a cluster that can spare it.
fn repair_empty(x: &[Vec<f64>], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let far = (0..x.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .map(|i| (i, sq_dist(&x[i], &centroids[assignments[i]])))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = far else { return };
        assignments[i] = empty;
        centroids[empty] = x[i].clone();
    }
}

fn means(x: &[Vec<f64>], assignments: &[usize], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let mut sums = vec![vec![0.0; d]; old.len()];
    let mut counts = vec![0usize; old.len()];
    for (p, &a) in x.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    sums.into_iter()
        .zip(counts)
        .zip(old)
        .map(|((s, c), o)| {
            if c == 0 {
                o.clone()
            } else {
                s.into_iter().map(|v| v / c as f64).collect()
            }
        })
        .collect()
}

/// Lloyd iterations from the given centres until the largest centre move
/// falls below `tol` or `max_iter` is reached. The returned assignment is
/// nearest-centroid with respect to the returned centres.
///
/// Panics if an iteration raises the WSS, which would indicate a bug.
pub fn lloyd(x: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> LloydRun {
    let mut centroids = init;
    let mut history = Vec::new();
    let push = |history: &mut Vec<f64>, w: f64| {
        if let Some(&prev) = history.last() {
            assert!(
                w <= prev + MONOTONE_SLACK * prev.abs().max(1.0),
                "WSS rose from {prev} to {w}"
            );
        }
        history.push(w);
    };
    for _ in 0..max_iter {
        let mut assignments = assign(x, &centroids);
        repair_empty(x, &mut centroids, &mut assignments);
        let updated = means(x, &assignments, &centroids);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        push(&mut history, wss_of(x, &centroids, &assignments));
        if shift < tol {
            break;
        }
    }
    let assignments = assign(x, &centroids);
    let wss = wss_of(x, &centroids, &assignments);
    push(&mut history, wss);
    LloydRun {
        centroids,
        assignments,
        wss,
        history,
    }
}

fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Renumbers clusters by descending size, ties by centroid lexicographic order.
pub fn canonical_relabel(centroids: Vec<Vec<f64>>, assignments: Vec<usize>) -> (Vec<Vec<f64>>, Vec<usize>) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in &assignments {
        sizes[a] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then_with(|| lex(&centroids[a], &centroids[b])));
    let mut new_of = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        new_of[old] = new;
    }
    let centroids = order.iter().map(|&o| centroids[o].clone()).collect();
    let assignments = assignments.into_iter().map(|a| new_of[a]).collect();
    (centroids, assignments)
}

/// Best of `restarts` k-means++ / Lloyd runs by WSS (lowest restart index on
/// ties), canonically relabelled. Restarts run in parallel on independent
/// substreams of `seed`, so the result does not depend on thread count.
pub fn kmeans(x: &[Vec<f64>], k: usize, opts: &KMeansOptions) -> Result<ClusterModel, ClusterError> {
    check(x, k)?;
    let runs: Vec<LloydRun> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let init = kmeanspp_init(x, k, &mut restart_rng(opts.seed, r));
            lloyd(x, init, opts.max_iter, opts.tol)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|best, r| if r.wss < best.wss { r } else { best })
        .expect("at least one restart");
    let (centroids, assignments) = canonical_relabel(best.centroids, best.assignments);
    Ok(ClusterModel {
        k,
        wss: wss_of(x, &centroids, &assignments),
        centroids,
        assignments,
        seed: opts.seed,
        restarts: opts.restarts.max(1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WssCurve {
    /// `(k, best wss)` with strictly increasing k.
    pub points: Vec<(usize, f64)>,
}

pub fn wss_curve(x: &[Vec<f64>], ks: impl IntoIterator<Item = usize>, opts: &KMeansOptions) -> Result<WssCurve, ClusterError> {
    let mut ks: Vec<usize> = ks.into_iter().collect();
    ks.sort_unstable();
    ks.dedup();
    let points = ks
        .into_iter()
        .map(|k| kmeans(x, k, opts).map(|m| (k, m.wss)))
        .collect::<Result<_, _>>()?;
    Ok(WssCurve { points })
}

/// The interior k maximising `wss(k−1) − 2·wss(k) + wss(k+1)`, smallest k on ties.
pub fn select_k(curve: &WssCurve) -> Result<usize, ClusterError> {
    let p = &curve.points;
    if p.len() < 3 {
        return Err(ClusterError::CurveTooShort(p.len()));
    }
    let mut best = (p[1].0, f64::NEG_INFINITY);
    for i in 1..p.len() - 1 {
        let d = p[i - 1].1 - 2.0 * p[i].1 + p[i + 1].1;
        if d > best.1 {
            best = (p[i].0, d);
        }
    }
    Ok(best.0)
}

/// Adjusted Rand Index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as f64;
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, f64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n);
    let max = (sa + sb) / 2.0;
    if max == expected {
        // both all-in-one or both all-singletons: the partitions coincide
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Per-column population mean and std.
pub fn column_stats(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let d = rows.first().map_or(0, |r| r.len());
    let n = rows.len() as f64;
    (0..d)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Z-scores each column; constant columns become all zeros.
pub fn standardize_columns(rows: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<(f64, f64)>) {
    let stats = column_stats(rows);
    let z = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&stats)
                .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
                .collect()
        })
        .collect();
    (z, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterLabel {
    Conformer,
    SlowCautious,
    AggressiveLongitudinal,
    SharpTurner,
    Other,
}

impl ClusterLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterLabel::Conformer => "conformer",
            ClusterLabel::SlowCautious => "slow-cautious",
            ClusterLabel::AggressiveLongitudinal => "aggressive-longitudinal",
            ClusterLabel::SharpTurner => "sharp-turner",
            ClusterLabel::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    /// Raw-unit feature means, in `ClusterReport::feature_names` order.
    pub means: Vec<f64>,
    /// Mean z-score of the members against the whole population.
    pub z_offsets: Vec<f64>,
    pub label: ClusterLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub feature_names: Vec<String>,
    pub clusters: Vec<ClusterSummary>,
}

impl ClusterReport {
    pub fn write_csv(&self, out: impl std::io::Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cluster", "label", "size", "feature", "mean", "z_offset"])?;
        for c in &self.clusters {
            for (j, name) in self.feature_names.iter().enumerate() {
                w.write_record([
                    c.cluster.to_string(),
                    c.label.as_str().to_string(),
                    c.size.to_string(),
                    name.clone(),
                    c.means[j].to_string(),
                    c.z_offsets[j].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Labels a cluster from its z-offsets. Rules, first match wins:
/// sharp-turner if `sharp_turn_rate` has the largest offset and it exceeds 1;
/// aggressive-longitudinal if hard accel and hard brake rates average above 1;
/// slow-cautious if `mean_speed_ratio` is below −1; conformer if no offset
/// exceeds 1 in magnitude; otherwise other.
pub fn label_cluster(names: &[String], z: &[f64]) -> ClusterLabel {
    let get = |n: &str| names.iter().position(|x| x == n).map_or(0.0, |i| z[i]);
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sharp = get("sharp_turn_rate");
    if sharp > 1.0 && sharp >= max {
        ClusterLabel::SharpTurner
    } else if (get("hard_accel_rate") + get("hard_brake_rate")) / 2.0 > 1.0 {
        ClusterLabel::AggressiveLongitudinal
    } else if get("mean_speed_ratio") < -1.0 {
        ClusterLabel::SlowCautious
    } else if z.iter().all(|v| v.abs() <= 1.0) {
        ClusterLabel::Conformer
    } else {
        ClusterLabel::Other
    }
}

pub fn characterize_clusters(model: &ClusterModel, features: &FeatureMatrix) -> ClusterReport {
    let raw = &features.raw;
    let stats = column_stats(raw);
    let clusters = (0..model.k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = raw
                .iter()
                .zip(&model.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(r, _)| r)
                .collect();
            let size = members.len();
            let means: Vec<f64> = (0..stats.len())
                .map(|j| {
                    if size == 0 {
                        0.0
                    } else {
                        members.iter().map(|r| r[j]).sum::<f64>() / size as f64
                    }
                })
                .collect();
            let z_offsets: Vec<f64> = means
                .iter()
                .zip(&stats)
                .map(|(m, (mu, sd))| if *sd > 0.0 && size > 0 { (m - mu) / sd } else { 0.0 })
                .collect();
            ClusterSummary {
                cluster: c,
                size,
                label: label_cluster(&features.raw_names, &z_offsets),
                means,
                z_offsets,
            }
        })
        .collect();
    ClusterReport {
        feature_names: features.raw_names.clone(),
        clusters,
    }
}
