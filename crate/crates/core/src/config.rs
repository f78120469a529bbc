use crate::error::{invalid, Result};
use crate::poisson_likelihood::DEFAULT_EPSILON_FLOOR;
use crate::prior_learning::{DEFAULT_CEM_ITERS, DEFAULT_RIDGE_SCALE};

/// Every tunable of training and denoising.
///
/// `k_count`, `cem_iters` and `epsilon_ridge_scale` only affect training; at
/// denoising time the cluster count comes from the loaded model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseConfig {
    pub k_count: usize,
    pub n1: usize,
    pub n2: usize,
    pub outer_iters: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub peak: f64,
    pub seed: u64,
    pub epsilon_floor: f64,
    pub epsilon_ridge_scale: f64,
    pub cem_iters: usize,
}

impl DenoiseConfig {
    /// Defaults: K = 20, n1 = 300, n2 = 30, two alternating rounds, 8×8 patches,
    /// stride 2.
    pub fn new(peak: f64, seed: u64) -> Self {
        Self {
            k_count: 20,
            n1: 300,
            n2: 30,
            outer_iters: 2,
            patch_size: 8,
            stride: 2,
            peak,
            seed,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            epsilon_ridge_scale: DEFAULT_RIDGE_SCALE,
            cem_iters: DEFAULT_CEM_ITERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(invalid("patch size must be at least 1"));
        }
        if self.stride == 0 || self.stride > self.patch_size {
            return Err(invalid(format!(
                "stride {} must lie in [1, patch size {}]",
                self.stride, self.patch_size
            )));
        }
        if !(self.peak.is_finite() && self.peak > 0.0) {
            return Err(invalid(format!("peak {} must be positive", self.peak)));
        }
        if self.n1 == 0 || self.n2 == 0 || self.k_count == 0 || self.outer_iters == 0 || self.cem_iters == 0 {
            return Err(invalid("k, n1, n2, iters and cem_iters must all be at least 1"));
        }
        if !(self.epsilon_floor.is_finite() && self.epsilon_floor >= 0.0) {
            return Err(invalid("epsilon floor must be finite and nonnegative"));
        }
        if !(self.epsilon_ridge_scale.is_finite() && self.epsilon_ridge_scale >= 0.0) {
            return Err(invalid("ridge scale must be finite and nonnegative"));
        }
        Ok(())
    }

    /// `key = value` lines, one per field, in a fixed order.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        vec![
            ("k_count", self.k_count.to_string()),
            ("n1", self.n1.to_string()),
            ("n2", self.n2.to_string()),
            ("outer_iters", self.outer_iters.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("stride", self.stride.to_string()),
            ("peak", format!("{}", self.peak)),
            ("seed", self.seed.to_string()),
            ("epsilon_floor", format!("{:e}", self.epsilon_floor)),
            ("epsilon_ridge_scale", format!("{:e}", self.epsilon_ridge_scale)),
            ("cem_iters", self.cem_iters.to_string()),
        ]
    }
}
