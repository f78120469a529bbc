//! Class prior learning: k-means++ / Lloyd initialization followed by
//! classification-EM (hard assignment) rounds over clean training patches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::patch_model::{logpdf_unchecked, ClusterModel, PatchPool, PriorModel};
use crate::poisson_likelihood::DEFAULT_EPSILON_FLOOR;
use crate::Patch;

pub const DEFAULT_CEM_ITERS: usize = 10;
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-3;
const KMEANS_MAX_ITERS: usize = 100;

/// Clean patches cut from images of the target class, already at the intensity
/// scale of the target peak.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    patches: Vec<Patch>,
    patch_size: usize,
    source_count: usize,
}

impl TrainingSet {
    pub fn new(patches: Vec<Patch>, patch_size: usize, source_count: usize) -> Result<Self> {
        if patches.is_empty() {
            return Err(invalid("training set is empty"));
        }
        let m = patch_size * patch_size;
        if patch_size == 0 || patches.iter().any(|p| p.dim() != m) {
            return Err(invalid(format!("every training patch must have {m} entries")));
        }
        if patches
            .iter()
            .any(|p| p.values.iter().any(|v| !(v.is_finite() && *v >= 0.0)))
        {
            return Err(invalid("training patches must be finite and nonnegative"));
        }
        Ok(Self {
            patches,
            patch_size,
            source_count,
        })
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }
}

/// One cluster label per training patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl Assignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    pub k: usize,
    pub cem_iters: usize,
    pub seed: u64,
    pub ridge_scale: f64,
    pub epsilon_floor: f64,
    pub peak: f64,
}

impl LearnConfig {
    pub fn new(k: usize, cem_iters: usize, seed: u64, peak: f64) -> Self {
        Self {
            k,
            cem_iters,
            seed,
            ridge_scale: DEFAULT_RIDGE_SCALE,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            peak,
        }
    }
}

/// Per-round record of a CEM run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CemTrace {
    /// Classification log-likelihood after each (re-estimate, re-assign) round.
    pub objective: Vec<f64>,
    /// Number of patches whose label changed in each round.
    pub changed: Vec<usize>,
    /// Round (1-based) at which the labels stopped changing.
    pub fixed_point_round: Option<usize>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn kmeans_pp_seeds(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` past the last positive entry
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.push(points[next].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, points[next]));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding, run to an assignment fixed point or
/// 100 iterations. Clusters left empty are refilled with the point farthest from
/// its centroid.
pub fn kmeans_init(train: &TrainingSet, k: usize, seed: u64) -> Result<Assignment> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if k > train.len() {
        return Err(invalid(format!(
            "k = {k} exceeds the {} available training patches",
            train.len()
        )));
    }
    let points: Vec<&[f64]> = train.patches.iter().map(|p| p.values.as_slice()).collect();
    let dim = train.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_seeds(&points, k, &mut rng);

    let mut labels: Vec<usize> = Vec::new();
    let mut dists: Vec<f64> = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let (new_labels, new_dists): (Vec<usize>, Vec<f64>) =
            points.par_iter().map(|p| nearest(p, &centroids)).unzip();
        let stable = new_labels == labels;
        labels = new_labels;
        dists = new_dists;
        if stable {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }

    let mut assignment = Assignment { labels, k };
    let mut sizes = assignment.sizes();
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let donor = (0..assignment.labels.len())
            .filter(|&i| sizes[assignment.labels[i]] > 1)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .ok_or_else(|| Error::Internal("no patch available to refill an empty cluster".into()))?;
        sizes[assignment.labels[donor]] -= 1;
        sizes[empty] += 1;
        assignment.labels[donor] = empty;
        dists[donor] = 0.0;
    }
    Ok(assignment)
}

/// Sample mean and sample covariance (denominator `max(n − 1, 1)`), before any
/// regularization.
pub fn estimate_cluster_params(members: &[Patch]) -> Result<(Vec<f64>, Matrix)> {
    let first = members
        .first()
        .ok_or_else(|| invalid("cannot estimate parameters of an empty cluster"))?;
    let dim = first.dim();
    if members.iter().any(|p| p.dim() != dim) {
        return Err(invalid("members have differing dimensions"));
    }
    let rows: Vec<&[f64]> = members.iter().map(|p| p.values.as_slice()).collect();
    Ok(params_of(&rows, dim))
}

fn params_of(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Matrix) {
    let n = rows.len();
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(dim);
    let mut centered = vec![0.0; dim];
    for r in rows {
        for ((c, v), m) in centered.iter_mut().zip(r.iter()).zip(&mean) {
            *c = v - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in 0..=i {
                cov.set(i, j, cov.get(i, j) + ci * centered[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..dim {
        for j in 0..=i {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    (mean, cov)
}

fn build_clusters(train: &TrainingSet, assignment: &Assignment, cfg: &LearnConfig) -> Result<Vec<ClusterModel>> {
    let dim = train.dim();
    assignment
        .members()
        .into_par_iter()
        .map(|idx| {
            if idx.is_empty() {
                return Err(Error::ModelDegenerate("cluster lost all its members".into()));
            }
            let rows: Vec<&[f64]> = idx.iter().map(|&i| train.patches[i].values.as_slice()).collect();
            let (mean, cov) = params_of(&rows, dim);
            let pool = PatchPool::from_patches(dim, rows.iter().copied(), cfg.epsilon_floor)?;
            ClusterModel::new(mean, cov, pool, cfg.ridge_scale)
        })
        .collect()
}

fn best_cluster(x: &[f64], clusters: &[ClusterModel]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, c) in clusters.iter().enumerate() {
        let ll = logpdf_unchecked(x, c);
        if ll > best.1 {
            best = (k, ll);
        }
    }
    best
}

/// Runs CEM rounds starting from `initial`. Each round re-estimates every
/// cluster's Gaussian from its members, then moves each patch to the cluster of
/// highest likelihood (lowest index on ties). Stops early once labels repeat.
pub fn refine_with_cem(
    train: &TrainingSet,
    initial: Assignment,
    cfg: &LearnConfig,
) -> Result<(PriorModel, CemTrace)> {
    if cfg.cem_iters == 0 {
        return Err(invalid("cem_iters must be at least 1"));
    }
    if initial.labels.len() != train.len() || initial.labels.iter().any(|&l| l >= initial.k) {
        return Err(invalid("initial assignment does not fit the training set"));
    }
    let mut labels = initial;
    let mut trace = CemTrace::default();
    for round in 1..=cfg.cem_iters {
        let clusters = build_clusters(train, &labels, cfg)?;
        let (mut new_labels, mut ll): (Vec<usize>, Vec<f64>) = train
            .patches
            .par_iter()
            .map(|p| best_cluster(&p.values, &clusters))
            .unzip();

        let mut sizes = vec![0usize; labels.k];
        new_labels.iter().for_each(|&l| sizes[l] += 1);
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let donor = (0..new_labels.len())
                .filter(|&i| sizes[new_labels[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if ll[b] <= ll[i] => Some(b),
                    _ => Some(i),
                })
                .ok_or_else(|| Error::Internal("no patch available to refill an empty cluster".into()))?;
            sizes[new_labels[donor]] -= 1;
            sizes[empty] += 1;
            new_labels[donor] = empty;
            ll[donor] = logpdf_unchecked(&train.patches[donor].values, &clusters[empty]);
        }

        trace.objective.push(ll.iter().sum());
        let changed = new_labels.iter().zip(&labels.labels).filter(|(a, b)| a != b).count();
        trace.changed.push(changed);
        labels.labels = new_labels;
        if changed == 0 {
            trace.fixed_point_round = Some(round);
            let model = PriorModel::new(clusters, train.patch_size, cfg.seed, cfg.ridge_scale, cfg.peak)?;
            return Ok((model, trace));
        }
    }
    let clusters = build_clusters(train, &labels, cfg)?;
    let model = PriorModel::new(clusters, train.patch_size, cfg.seed, cfg.ridge_scale, cfg.peak)?;
    Ok((model, trace))
}

/// k-means initialization followed by `cfg.cem_iters` CEM rounds.
pub fn learn_prior_traced(train: &TrainingSet, cfg: &LearnConfig) -> Result<(PriorModel, CemTrace)> {
    if cfg.cem_iters == 0 {
        return Err(invalid("cem_iters must be at least 1"));
    }
    let init = kmeans_init(train, cfg.k, cfg.seed)?;
    refine_with_cem(train, init, cfg)
}

pub fn learn_prior(train: &TrainingSet, cfg: &LearnConfig) -> Result<PriorModel> {
    learn_prior_traced(train, cfg).map(|(m, _)| m)
}

/// Index of the cluster under which `x` is most likely; lowest index on ties.
pub fn assign_clean_patch(x: &Patch, model: &PriorModel) -> Result<usize> {
    if x.dim() != model.dim() {
        return Err(invalid(format!(
            "patch of length {} against a model of dimension {}",
            x.dim(),
            model.dim()
        )));
    }
    Ok(best_cluster(&x.values, model.clusters()).0)
}
