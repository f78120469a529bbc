//! Train/test evaluation protocol: train a prior at a peak, synthesize Poisson
//! observations of clean test images and score noisy and denoised PSNR.

use crate::config::DenoiseConfig;
use crate::error::{invalid, Result};
use crate::image_pipeline::{denoise_image_detailed, extract_patches, psnr_at_peak, scale_to_peak, DenoiseOutput, ImageGrid};
use crate::patch_model::PriorModel;
use crate::poisson_likelihood::sample_poisson_image;
use crate::prior_learning::{learn_prior, LearnConfig, TrainingSet};

/// Scales every image to `peak` and cuts all patches at `stride`.
pub fn build_training_set(images: &[ImageGrid], patch_size: usize, stride: usize, peak: f64) -> Result<TrainingSet> {
    let mut patches = Vec::new();
    for img in images {
        let scaled = scale_to_peak(img, peak)?;
        patches.extend(extract_patches(&scaled, patch_size, stride)?);
    }
    if patches.is_empty() {
        return Err(invalid("no training patches"));
    }
    TrainingSet::new(patches, patch_size, images.len())
}

pub fn train_prior(images: &[ImageGrid], cfg: &DenoiseConfig, train_stride: usize) -> Result<PriorModel> {
    cfg.validate()?;
    let set = build_training_set(images, cfg.patch_size, train_stride, cfg.peak)?;
    let learn = LearnConfig {
        ridge_scale: cfg.epsilon_ridge_scale,
        epsilon_floor: cfg.epsilon_floor,
        ..LearnConfig::new(cfg.k_count, cfg.cem_iters, cfg.seed, cfg.peak)
    };
    learn_prior(&set, &learn)
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub clean: ImageGrid,
    pub noisy: ImageGrid,
    pub output: DenoiseOutput,
    pub noisy_psnr_db: f64,
    pub denoised_psnr_db: f64,
}

/// Scales `clean` to the peak, draws Poisson counts with `noise_seed`, denoises
/// and scores both images against the scaled clean one.
pub fn run_trial(
    clean: &ImageGrid,
    model: &PriorModel,
    cfg: &DenoiseConfig,
    noise_seed: u64,
    workers: Option<usize>,
) -> Result<TrialResult> {
    let clean = scale_to_peak(clean, cfg.peak)?;
    let noisy = sample_poisson_image(&clean, noise_seed)?;
    let output = denoise_image_detailed(&noisy, model, cfg, workers)?;
    let noisy_psnr_db = psnr_at_peak(&noisy, &clean, cfg.peak)?;
    let denoised_psnr_db = psnr_at_peak(&output.image, &clean, cfg.peak)?;
    Ok(TrialResult {
        clean,
        noisy,
        output,
        noisy_psnr_db,
        denoised_psnr_db,
    })
}
