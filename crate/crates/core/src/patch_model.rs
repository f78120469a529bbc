//! Patch vectors and the per-cluster Gaussian densities of the prior.

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, forward_substitute, Matrix};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Variance floor (intensity² units) used when a cluster's covariance has zero
/// trace, so that the ridge never collapses to zero.
pub const MIN_RIDGE_VARIANCE: f64 = 1e-6;

/// A flattened `patch_size × patch_size` block of nonnegative intensities and the
/// grid position of its top-left pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub values: Vec<f64>,
    pub row: usize,
    pub col: usize,
}

impl Patch {
    pub fn new(values: Vec<f64>, row: usize, col: usize) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("patch entry {bad} is not a finite nonnegative value")));
        }
        Ok(Self { values, row, col })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// The training patches of one cluster, stored contiguously.
///
/// Alongside the raw values the pool caches `ln(max(x, floor))` per entry and
/// `Σ max(x, floor)` per patch, which is everything the Poisson likelihood needs
/// from a clean sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPool {
    dim: usize,
    floor: f64,
    values: Vec<f64>,
    floored_logs: Vec<f64>,
    floored_sums: Vec<f64>,
}

impl PatchPool {
    pub fn new(dim: usize, values: Vec<f64>, floor: f64) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(invalid(format!(
                "pool of {} values is not a whole number of {dim}-dimensional patches",
                values.len()
            )));
        }
        if !(floor.is_finite() && floor >= 0.0) {
            return Err(invalid(format!("epsilon floor {floor} must be finite and >= 0")));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("pool entry {bad} is not a finite nonnegative value")));
        }
        let floored_logs = values.iter().map(|&v| v.max(floor).ln()).collect();
        let floored_sums = values
            .chunks_exact(dim)
            .map(|p| p.iter().map(|&v| v.max(floor)).sum())
            .collect();
        Ok(Self {
            dim,
            floor,
            values,
            floored_logs,
            floored_sums,
        })
    }

    pub fn from_patches<'a>(
        dim: usize,
        patches: impl IntoIterator<Item = &'a [f64]>,
        floor: f64,
    ) -> Result<Self> {
        let mut values = Vec::new();
        for p in patches {
            if p.len() != dim {
                return Err(invalid(format!("patch of length {} in a {dim}-dimensional pool", p.len())));
            }
            values.extend_from_slice(p);
        }
        Self::new(dim, values, floor)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.floored_sums.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.floored_sums.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    #[inline]
    pub fn patch(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn floored_logs(&self, i: usize) -> &[f64] {
        &self.floored_logs[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn floored_sum(&self, i: usize) -> f64 {
        self.floored_sums[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn with_floor(&self, floor: f64) -> Result<Self> {
        Self::new(self.dim, self.values.clone(), floor)
    }

    /// Arithmetic mean of all member patches.
    pub fn average(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for p in self.iter() {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        let n = self.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// Ridge added to a raw sample covariance: `scale · trace/m`, with the per-pixel
/// variance floored at [`MIN_RIDGE_VARIANCE`].
pub fn ridge_epsilon(raw: &Matrix, scale: f64) -> f64 {
    let m = raw.dim().max(1) as f64;
    scale * (raw.trace() / m).max(MIN_RIDGE_VARIANCE)
}

/// Returns `raw + epsilon_ridge · I`, failing if the result does not admit a
/// Cholesky factorization.
pub fn regularize_covariance(raw: &Matrix, epsilon_ridge: f64) -> Result<Matrix> {
    let mut reg = raw.clone();
    reg.add_diagonal(epsilon_ridge);
    if cholesky(&reg).is_none() {
        return Err(Error::ModelDegenerate(format!(
            "covariance not positive definite after ridge {epsilon_ridge:e}"
        )));
    }
    Ok(reg)
}

/// One Gaussian of the prior together with the training patches assigned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    mean: Vec<f64>,
    covariance: Matrix,
    ridge: f64,
    chol_factor: Matrix,
    log_norm: f64,
    members: PatchPool,
}

impl ClusterModel {
    /// `covariance` is the raw (unregularized) sample covariance; the trace-scaled
    /// ridge is applied here and the Cholesky factor cached.
    pub fn new(mean: Vec<f64>, covariance: Matrix, members: PatchPool, ridge_scale: f64) -> Result<Self> {
        let m = mean.len();
        if m == 0 || covariance.dim() != m || members.dim() != m {
            return Err(invalid(format!(
                "cluster dimensions disagree: mean {m}, covariance {}, members {}",
                covariance.dim(),
                members.dim()
            )));
        }
        if members.is_empty() {
            return Err(Error::ModelDegenerate("cluster has no members".into()));
        }
        if mean.iter().chain(covariance.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::ModelDegenerate("non-finite cluster parameters".into()));
        }
        if covariance.asymmetry() > 1e-10 {
            return Err(invalid("covariance is not symmetric"));
        }
        let ridge = ridge_epsilon(&covariance, ridge_scale);
        let regularized = regularize_covariance(&covariance, ridge)?;
        let chol_factor = cholesky(&regularized)
            .ok_or_else(|| Error::ModelDegenerate("Cholesky failed after regularization".into()))?;
        let log_det: f64 = 2.0 * (0..m).map(|i| chol_factor.get(i, i).ln()).sum::<f64>();
        let log_norm = -0.5 * (m as f64 * LN_2PI + log_det);
        Ok(Self {
            mean,
            covariance,
            ridge,
            chol_factor,
            log_norm,
            members,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Raw sample covariance, as persisted.
    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn regularized_covariance(&self) -> Matrix {
        let mut reg = self.covariance.clone();
        reg.add_diagonal(self.ridge);
        reg
    }

    pub fn chol_factor(&self) -> &Matrix {
        &self.chol_factor
    }

    pub fn members(&self) -> &PatchPool {
        &self.members
    }

    pub(crate) fn with_members(&self, members: PatchPool) -> Self {
        Self {
            members,
            ..self.clone()
        }
    }
}

/// Log of the multivariate normal density of `cluster` (regularized covariance)
/// evaluated at `x`.
pub fn gaussian_logpdf(x: &[f64], cluster: &ClusterModel) -> Result<f64> {
    if x.len() != cluster.dim() {
        return Err(invalid(format!(
            "vector of length {} against a {}-dimensional cluster",
            x.len(),
            cluster.dim()
        )));
    }
    Ok(logpdf_unchecked(x, cluster))
}

#[inline]
pub(crate) fn logpdf_unchecked(x: &[f64], cluster: &ClusterModel) -> f64 {
    let mut z: Vec<f64> = x.iter().zip(&cluster.mean).map(|(a, b)| a - b).collect();
    forward_substitute(&cluster.chol_factor, &mut z);
    let mahalanobis: f64 = z.iter().map(|v| v * v).sum();
    cluster.log_norm - 0.5 * mahalanobis
}

/// The learned class prior: `K` clusters plus the settings they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    clusters: Vec<ClusterModel>,
    patch_size: usize,
    dim: usize,
    training_seed: u64,
    epsilon_ridge: f64,
    epsilon_floor: f64,
    peak: f64,
}

impl PriorModel {
    pub fn new(
        clusters: Vec<ClusterModel>,
        patch_size: usize,
        training_seed: u64,
        epsilon_ridge: f64,
        peak: f64,
    ) -> Result<Self> {
        if clusters.is_empty() {
            return Err(invalid("a prior needs at least one cluster"));
        }
        if patch_size == 0 {
            return Err(invalid("patch size must be at least 1"));
        }
        Self::build(clusters, patch_size, patch_size * patch_size, training_seed, epsilon_ridge, peak)
    }

    /// A prior over plain vectors that are not square image patches. Such a
    /// model reports a patch size of 0 and cannot denoise images or be saved.
    pub fn from_vectors(
        clusters: Vec<ClusterModel>,
        training_seed: u64,
        epsilon_ridge: f64,
        peak: f64,
    ) -> Result<Self> {
        let dim = clusters.first().map_or(0, ClusterModel::dim);
        Self::build(clusters, 0, dim, training_seed, epsilon_ridge, peak)
    }

    fn build(
        clusters: Vec<ClusterModel>,
        patch_size: usize,
        dim: usize,
        training_seed: u64,
        epsilon_ridge: f64,
        peak: f64,
    ) -> Result<Self> {
        if clusters.is_empty() {
            return Err(invalid("a prior needs at least one cluster"));
        }
        if dim == 0 || clusters.iter().any(|c| c.dim() != dim) {
            return Err(invalid(format!("all clusters must have dimension {dim}")));
        }
        let epsilon_floor = clusters[0].members.floor();
        if clusters.iter().any(|c| c.members.floor() != epsilon_floor) {
            return Err(invalid("clusters disagree on the likelihood floor"));
        }
        if !(peak.is_finite() && peak > 0.0) {
            return Err(invalid(format!("peak {peak} must be positive")));
        }
        Ok(Self {
            clusters,
            patch_size,
            dim,
            training_seed,
            epsilon_ridge,
            epsilon_floor,
            peak,
        })
    }

    pub fn clusters(&self) -> &[ClusterModel] {
        &self.clusters
    }

    pub fn cluster(&self, k: usize) -> Result<&ClusterModel> {
        self.clusters
            .get(k)
            .ok_or_else(|| invalid(format!("cluster {k} out of range (K = {})", self.clusters.len())))
    }

    pub fn k_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    /// Scale factor of the trace-proportional covariance ridge.
    pub fn epsilon_ridge(&self) -> f64 {
        self.epsilon_ridge
    }

    /// Lower bound applied to clean intensities inside the Poisson likelihood.
    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor
    }

    /// Peak intensity the training images were scaled to.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.members.len()).collect()
    }

    /// Same model with the likelihood caches rebuilt for another floor.
    pub fn with_epsilon_floor(&self, floor: f64) -> Result<Self> {
        if floor == self.epsilon_floor {
            return Ok(self.clone());
        }
        let clusters = self
            .clusters
            .iter()
            .map(|c| Ok(c.with_members(c.members.with_floor(floor)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clusters,
            epsilon_floor: floor,
            ..self.clone()
        })
    }
}
