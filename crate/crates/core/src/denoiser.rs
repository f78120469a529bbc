//! Per-patch alternating minimization: SNIS cluster selection alternated with
//! the SNIS posterior-mean estimate, starting from the raw counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DenoiseConfig;
use crate::error::{invalid, Error, Result};
use crate::patch_model::PriorModel;
use crate::poisson_likelihood::{NoisyPatch, PreparedObservation};
use crate::snis::{ess_of_normalized, normalize_weights, snis_estimate, WeightedSampleSet, LOG_WEIGHT_FLOOR};

/// Identifies the random stream of one noisy patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerState {
    pub seed: u64,
    /// Position of the noisy patch in raster extraction order.
    pub patch_index: u64,
}

/// Which step of a round the draws feed. Selection and estimation draw
/// independently even when they touch the same cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStream {
    ClusterSelection,
    Estimate,
}

impl SampleStream {
    fn tag(self) -> u64 {
        match self {
            SampleStream::ClusterSelection => 0x5e1e_c7,
            SampleStream::Estimate => 0xe5_7a7e,
        }
    }
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_rng(state: SamplerState, k: usize, round: usize, stream: SampleStream) -> ChaCha8Rng {
    let mut h = splitmix(state.seed);
    for word in [state.patch_index, k as u64, round as u64, stream.tag()] {
        h = splitmix(h ^ word);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Member indices of cluster `k` to use as importance samples.
///
/// Draws `n` members uniformly with replacement, or returns the whole roster once
/// when it has at most `n` members. The result depends only on
/// `(state, k, round, stream)`.
pub fn draw_cluster_samples(
    model: &PriorModel,
    k: usize,
    n: usize,
    state: SamplerState,
    round: usize,
    stream: SampleStream,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let pool = model.cluster(k)?.members();
    if pool.is_empty() {
        return Err(Error::ModelDegenerate(format!("cluster {k} has no members")));
    }
    if pool.len() <= n {
        return Ok((0..pool.len()).collect());
    }
    let mut rng = stream_rng(state, k, round, stream);
    Ok((0..n).map(|_| rng.gen_range(0..pool.len())).collect())
}

/// Clamps log-weights to `max − LOG_WEIGHT_FLOOR` (mapping `−∞` there too).
/// Returns `false` when no log-weight is finite.
fn floor_log_weights(lw: &mut [f64]) -> bool {
    let max = lw.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return false;
    }
    let lower = max - LOG_WEIGHT_FLOOR;
    for v in lw.iter_mut() {
        if v.is_nan() || *v < lower {
            *v = lower;
        }
    }
    true
}

fn check_dims(y: &NoisyPatch, model: &PriorModel) -> Result<()> {
    if y.dim() != model.dim() {
        return Err(invalid(format!(
            "noisy patch of length {} against a model of dimension {}",
            y.dim(),
            model.dim()
        )));
    }
    Ok(())
}

/// Outcome of the cluster-selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterChoice {
    pub cluster: usize,
    /// Estimated expected squared error per cluster; `+∞` where every sample's
    /// likelihood vanished.
    pub scores: Vec<f64>,
}

/// For every cluster, estimates `E[‖x − u‖² | y, k]` by SNIS over `n2` member
/// draws weighted by `P(y | x_j)`, and returns the minimizing cluster (lowest
/// index on ties).
pub fn select_cluster(
    y: &NoisyPatch,
    u: &[f64],
    model: &PriorModel,
    n2: usize,
    state: SamplerState,
    round: usize,
) -> Result<ClusterChoice> {
    check_dims(y, model)?;
    if u.len() != y.dim() || u.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("current estimate must be finite, nonnegative and match the patch"));
    }
    let obs = PreparedObservation::new(y);
    let mut scores = Vec::with_capacity(model.k_count());
    for (k, cluster) in model.clusters().iter().enumerate() {
        let pool = cluster.members();
        let draws = draw_cluster_samples(model, k, n2, state, round, SampleStream::ClusterSelection)?;
        let mut lw: Vec<f64> = draws.iter().map(|&i| obs.loglik_member(pool, i)).collect();
        if !floor_log_weights(&mut lw) {
            scores.push(f64::INFINITY);
            continue;
        }
        let sq_err: Vec<f64> = draws
            .iter()
            .map(|&i| pool.patch(i).iter().zip(u).map(|(x, v)| (v - x) * (v - x)).sum())
            .collect();
        scores.push(snis_estimate(&WeightedSampleSet::new(lw, sq_err)?)?);
    }
    let cluster = if scores.iter().all(|s| s.is_infinite()) {
        nearest_mean(&y.as_reals(), model)
    } else {
        argmin(&scores)
    };
    Ok(ClusterChoice { cluster, scores })
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn nearest_mean(y: &[f64], model: &PriorModel) -> usize {
    let d: Vec<f64> = model
        .clusters()
        .iter()
        .map(|c| c.mean().iter().zip(y).map(|(m, v)| (m - v) * (m - v)).sum())
        .collect();
    argmin(&d)
}

fn mmse_inner(
    obs: &PreparedObservation,
    k: usize,
    model: &PriorModel,
    n1: usize,
    state: SamplerState,
    round: usize,
) -> Result<Option<(Vec<f64>, f64)>> {
    let pool = model.cluster(k)?.members();
    let draws = draw_cluster_samples(model, k, n1, state, round, SampleStream::Estimate)?;
    let mut lw: Vec<f64> = draws.iter().map(|&i| obs.loglik_member(pool, i)).collect();
    if !floor_log_weights(&mut lw) {
        return Ok(None);
    }
    let w = normalize_weights(&lw)?;
    let payloads: Vec<&[f64]> = draws.iter().map(|&i| pool.patch(i)).collect();
    let estimate = snis_estimate(&WeightedSampleSet::new(lw, payloads)?)?;
    Ok(Some((estimate, ess_of_normalized(&w))))
}

/// SNIS posterior mean of the clean patch under cluster `k`, using `n1` member
/// draws weighted by `P(y | x_j)`. Returns the estimate and the effective sample
/// size of the weights.
pub fn mmse_estimate(
    y: &NoisyPatch,
    k: usize,
    model: &PriorModel,
    n1: usize,
    state: SamplerState,
    round: usize,
) -> Result<(Vec<f64>, f64)> {
    check_dims(y, model)?;
    mmse_inner(&PreparedObservation::new(y), k, model, n1, state, round)?
        .ok_or_else(|| Error::ModelDegenerate(format!("every likelihood under cluster {k} vanished")))
}

/// Denoised patch, its final cluster and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEstimate {
    pub values: Vec<f64>,
    pub cluster: usize,
    /// Effective sample size of the last estimate's weights.
    pub ess: f64,
    pub row: usize,
    pub col: usize,
    /// Selected cluster after each round that ran.
    pub cluster_history: Vec<usize>,
}

/// Alternates cluster selection and posterior-mean estimation for
/// `cfg.outer_iters` rounds starting from `u = y`. Stops early once the cluster
/// repeats and the estimate moves by less than 1e-9 (max norm).
pub fn denoise_patch(
    y: &NoisyPatch,
    model: &PriorModel,
    cfg: &DenoiseConfig,
    state: SamplerState,
) -> Result<PatchEstimate> {
    check_dims(y, model)?;
    if cfg.outer_iters == 0 || cfg.n1 == 0 || cfg.n2 == 0 {
        return Err(invalid("outer_iters, n1 and n2 must be at least 1"));
    }
    let obs = PreparedObservation::new(y);
    let mut u = y.as_reals();
    let mut ess = 0.0;
    let mut history: Vec<usize> = Vec::with_capacity(cfg.outer_iters);
    for round in 1..=cfg.outer_iters {
        let choice = select_cluster(y, &u, model, cfg.n2, state, round)?;
        let (k, estimate, round_ess) = match mmse_inner(&obs, choice.cluster, model, cfg.n1, state, round)? {
            Some((est, e)) => (choice.cluster, est, e),
            None => {
                let k = nearest_mean(&y.as_reals(), model);
                let pool = model.cluster(k)?.members();
                (k, pool.average(), pool.len() as f64)
            }
        };
        let moved = u
            .iter()
            .zip(&estimate)
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        let settled = history.last() == Some(&k) && moved < 1e-9;
        history.push(k);
        u = estimate;
        ess = round_ess;
        if settled {
            break;
        }
    }
    Ok(PatchEstimate {
        values: u,
        cluster: *history.last().expect("at least one round"),
        ess,
        row: y.row,
        col: y.col,
        cluster_history: history,
    })
}
