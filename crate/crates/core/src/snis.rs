//! Self-normalized importance sampling in the log domain.
//!
//! Given log-weights `ln w_j` known only up to a shared additive constant and
//! payloads `f(x_j)`, the estimate is `Σ f(x_j) w_j / Σ w_j`.

use crate::error::{invalid, Result};

/// Log-weights more than this far below the maximum are clamped to it before
/// exponentiation.
pub const LOG_WEIGHT_FLOOR: f64 = 700.0;

/// Values that can be averaged with normalized weights.
pub trait Payload {
    type Output;

    fn weighted_sum(items: &[Self], weights: &[f64]) -> Self::Output
    where
        Self: Sized;
}

impl Payload for f64 {
    type Output = f64;

    fn weighted_sum(items: &[f64], weights: &[f64]) -> f64 {
        items.iter().zip(weights).map(|(v, w)| v * w).sum()
    }
}

fn vector_weighted_sum<V: AsRef<[f64]>>(items: &[V], weights: &[f64]) -> Vec<f64> {
    let dim = items.first().map_or(0, |v| v.as_ref().len());
    let mut acc = vec![0.0; dim];
    for (item, &w) in items.iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(item.as_ref()) {
            *a += w * v;
        }
    }
    acc
}

impl Payload for Vec<f64> {
    type Output = Vec<f64>;

    fn weighted_sum(items: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
        vector_weighted_sum(items, weights)
    }
}

impl Payload for &[f64] {
    type Output = Vec<f64>;

    fn weighted_sum(items: &[&[f64]], weights: &[f64]) -> Vec<f64> {
        vector_weighted_sum(items, weights)
    }
}

/// Log-weights paired with the payloads they weight.
#[derive(Debug, Clone)]
pub struct WeightedSampleSet<P> {
    log_weights: Vec<f64>,
    payloads: Vec<P>,
}

impl<P: Payload> WeightedSampleSet<P> {
    pub fn new(log_weights: Vec<f64>, payloads: Vec<P>) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(invalid("a weighted sample set needs at least one sample"));
        }
        if log_weights.len() != payloads.len() {
            return Err(invalid(format!(
                "{} log-weights for {} payloads",
                log_weights.len(),
                payloads.len()
            )));
        }
        check_finite(&log_weights)?;
        Ok(Self {
            log_weights,
            payloads,
        })
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn payloads(&self) -> &[P] {
        &self.payloads
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }
}

fn check_finite(log_weights: &[f64]) -> Result<()> {
    match log_weights.iter().find(|v| !v.is_finite()) {
        Some(bad) => Err(invalid(format!("log-weight {bad} is not finite"))),
        None => Ok(()),
    }
}

/// `exp(ln w_j − logsumexp(ln w))`, with each log-weight first clamped to at
/// least `max − LOG_WEIGHT_FLOOR`.
pub fn normalize_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.is_empty() {
        return Err(invalid("cannot normalize an empty weight vector"));
    }
    check_finite(log_weights)?;
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = max - LOG_WEIGHT_FLOOR;
    let mut w: Vec<f64> = log_weights.iter().map(|&l| (l.max(lower) - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// `Σ_j f(x_j)·ŵ_j` with `ŵ` from [`normalize_weights`].
pub fn snis_estimate<P: Payload>(samples: &WeightedSampleSet<P>) -> Result<P::Output> {
    let w = normalize_weights(&samples.log_weights)?;
    Ok(P::weighted_sum(&samples.payloads, &w))
}

/// `1 / Σ ŵ_j²`; lies in `[1, n]`.
pub fn effective_sample_size(log_weights: &[f64]) -> Result<f64> {
    let w = normalize_weights(log_weights)?;
    Ok(ess_of_normalized(&w))
}

pub(crate) fn ess_of_normalized(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}
