//! Whole-image orchestration: peak scaling, strided patch extraction, the
//! parallel per-patch sweep, overlap-averaged reassembly and PSNR.

use rayon::prelude::*;

use crate::config::DenoiseConfig;
use crate::denoiser::{denoise_patch, PatchEstimate, SamplerState};
use crate::error::{invalid, Error, Result};
use crate::patch_model::PriorModel;
use crate::poisson_likelihood::NoisyPatch;
use crate::Patch;

/// Row-major grid of finite nonnegative intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width.checked_mul(height) != Some(pixels.len()) {
            return Err(invalid(format!(
                "{} pixels do not fill a {width}x{height} grid",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("pixel value {bad} is negative or not finite")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// Every pixel multiplied by `factor` (which must be finite and ≥ 0).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.width, self.height, self.pixels.iter().map(|v| v * factor).collect())
    }

    fn block(&self, row: usize, col: usize, size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for r in row..row + size {
            out.extend_from_slice(&self.pixels[r * self.width + col..r * self.width + col + size]);
        }
        out
    }
}

/// Rescales so the brightest pixel equals `peak`.
pub fn scale_to_peak(img: &ImageGrid, peak: f64) -> Result<ImageGrid> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(invalid(format!("peak {peak} must be positive")));
    }
    let max = img.max();
    if max <= 0.0 {
        return Err(invalid("cannot scale an all-zero image to a peak"));
    }
    if max == peak {
        return Ok(img.clone());
    }
    img.scaled(peak / max)
}

/// Top-left offsets along one axis: `0, stride, 2·stride, …`, with the last
/// offset clamped to `dim − patch` so the far edge is covered.
pub fn patch_offsets(dim: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(invalid("patch size and stride must be at least 1"));
    }
    if dim < patch {
        return Err(invalid(format!("image side {dim} is smaller than patch size {patch}")));
    }
    let last = dim - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().expect("0 is always present") != last {
        out.push(last);
    }
    Ok(out)
}

/// Raster-ordered patch positions `(row, col)`.
pub fn patch_positions(img: &ImageGrid, patch_size: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    let rows = patch_offsets(img.height, patch_size, stride)?;
    let cols = patch_offsets(img.width, patch_size, stride)?;
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

pub fn extract_patches(img: &ImageGrid, patch_size: usize, stride: usize) -> Result<Vec<Patch>> {
    Ok(patch_positions(img, patch_size, stride)?
        .into_iter()
        .map(|(r, c)| Patch {
            values: img.block(r, c, patch_size),
            row: r,
            col: c,
        })
        .collect())
}

/// Like [`extract_patches`] but for count images; every pixel must be a
/// nonnegative integer.
pub fn extract_noisy_patches(img: &ImageGrid, patch_size: usize, stride: usize) -> Result<Vec<NoisyPatch>> {
    patch_positions(img, patch_size, stride)?
        .into_iter()
        .map(|(r, c)| NoisyPatch::from_reals(&img.block(r, c, patch_size), r, c))
        .collect()
}

/// Anything that can be written back into an image at a position.
pub trait PlacedPatch {
    fn position(&self) -> (usize, usize);
    fn values(&self) -> &[f64];
}

impl PlacedPatch for Patch {
    fn position(&self) -> (usize, usize) {
        (self.row, self.col)
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

impl PlacedPatch for PatchEstimate {
    fn position(&self) -> (usize, usize) {
        (self.row, self.col)
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Running per-pixel sums and cover counts.
#[derive(Debug, Clone)]
pub struct AccumulatorGrid {
    width: usize,
    height: usize,
    sum: Vec<f64>,
    count: Vec<f64>,
}

impl AccumulatorGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            sum: vec![0.0; width * height],
            count: vec![0.0; width * height],
        }
    }

    pub fn add(&mut self, row: usize, col: usize, patch_size: usize, values: &[f64]) -> Result<()> {
        if values.len() != patch_size * patch_size
            || row + patch_size > self.height
            || col + patch_size > self.width
        {
            return Err(invalid(format!(
                "{}-value patch at ({row}, {col}) does not fit a {}x{} grid",
                values.len(),
                self.width,
                self.height
            )));
        }
        for (dr, chunk) in values.chunks_exact(patch_size).enumerate() {
            let base = (row + dr) * self.width + col;
            for (dc, &v) in chunk.iter().enumerate() {
                self.sum[base + dc] += v;
                self.count[base + dc] += 1.0;
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> &[f64] {
        &self.count
    }

    /// `sum / count` per pixel; fails if any pixel was never covered.
    pub fn finish(self) -> Result<ImageGrid> {
        if let Some(i) = self.count.iter().position(|&c| c == 0.0) {
            return Err(Error::Internal(format!(
                "pixel ({}, {}) is not covered by any patch",
                i / self.width,
                i % self.width
            )));
        }
        let pixels = self.sum.iter().zip(&self.count).map(|(s, c)| s / c).collect();
        ImageGrid::new(self.width, self.height, pixels)
    }
}

/// Averages overlapping patch values back into a `width × height` image.
pub fn aggregate_patches<P: PlacedPatch>(estimates: &[P], width: usize, height: usize) -> Result<ImageGrid> {
    let mut acc = AccumulatorGrid::new(width, height);
    for e in estimates {
        let (r, c) = e.position();
        let side = (e.values().len() as f64).sqrt().round() as usize;
        if side * side != e.values().len() {
            return Err(invalid(format!("patch of {} values is not square", e.values().len())));
        }
        acc.add(r, c, side, e.values())?;
    }
    acc.finish()
}

/// `10·log10(data_max² / MSE)`; `+∞` for identical images.
pub fn psnr(estimate: &ImageGrid, reference: &ImageGrid, data_max: f64) -> Result<f64> {
    if estimate.width != reference.width || estimate.height != reference.height {
        return Err(invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            estimate.width, estimate.height, reference.width, reference.height
        )));
    }
    if !(data_max.is_finite() && data_max > 0.0) {
        return Err(invalid("data_max must be positive"));
    }
    if reference.pixels.is_empty() {
        return Err(invalid("cannot score empty images"));
    }
    let mse = estimate
        .pixels
        .iter()
        .zip(&reference.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_max * data_max / mse).log10())
}

/// PSNR of images at peak scale, after rescaling both by `255 / peak` and
/// scoring with `data_max = 255`.
pub fn psnr_at_peak(estimate: &ImageGrid, reference: &ImageGrid, peak: f64) -> Result<f64> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(invalid(format!("peak {peak} must be positive")));
    }
    let f = 255.0 / peak;
    psnr(&estimate.scaled(f)?, &reference.scaled(f)?, 255.0)
}

/// Denoised image plus every patch estimate behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOutput {
    pub image: ImageGrid,
    pub estimates: Vec<PatchEstimate>,
}

impl DenoiseOutput {
    pub fn mean_ess(&self) -> f64 {
        self.estimates.iter().map(|e| e.ess).sum::<f64>() / self.estimates.len().max(1) as f64
    }

    /// Fraction of patches whose cluster changed between rounds `r` and `r + 1`
    /// (1-based). Patches that stopped early keep their last cluster.
    pub fn cluster_change_fraction(&self, r: usize) -> f64 {
        let at = |e: &PatchEstimate, round: usize| {
            e.cluster_history
                .get(round - 1)
                .or_else(|| e.cluster_history.last())
                .copied()
        };
        let changed = self
            .estimates
            .iter()
            .filter(|e| at(e, r) != at(e, r + 1))
            .count();
        changed as f64 / self.estimates.len().max(1) as f64
    }
}

/// Denoises a count image with the current rayon pool.
pub fn denoise_image(noisy: &ImageGrid, model: &PriorModel, cfg: &DenoiseConfig) -> Result<ImageGrid> {
    denoise_image_detailed(noisy, model, cfg, None).map(|o| o.image)
}

/// Denoises a count image. `workers` pins the size of a dedicated thread pool;
/// the result does not depend on it.
pub fn denoise_image_detailed(
    noisy: &ImageGrid,
    model: &PriorModel,
    cfg: &DenoiseConfig,
    workers: Option<usize>,
) -> Result<DenoiseOutput> {
    cfg.validate()?;
    if model.patch_size() != cfg.patch_size {
        return Err(invalid(format!(
            "model patch size {} differs from configured {}",
            model.patch_size(),
            cfg.patch_size
        )));
    }
    let owned;
    let model = if model.epsilon_floor() == cfg.epsilon_floor {
        model
    } else {
        owned = model.with_epsilon_floor(cfg.epsilon_floor)?;
        &owned
    };
    let patches = extract_noisy_patches(noisy, cfg.patch_size, cfg.stride)?;
    let sweep = || -> Result<Vec<PatchEstimate>> {
        patches
            .par_iter()
            .enumerate()
            .map(|(i, y)| {
                let state = SamplerState {
                    seed: cfg.seed,
                    patch_index: i as u64,
                };
                denoise_patch(y, model, cfg, state)
            })
            .collect()
    };
    let estimates = match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(sweep)?,
        None => sweep()?,
    };
    let image = aggregate_patches(&estimates, noisy.width, noisy.height)?;
    Ok(DenoiseOutput { image, estimates })
}
