//! Class-specific Poisson image denoising.
//!
//! A prior is learned from clean patches of the target image class by k-means
//! followed by classification-EM, giving `K` Gaussians that each keep the roster
//! of training patches assigned to them. Each noisy patch is then denoised by
//! alternating two self-normalized importance sampling steps that use the exact
//! Poisson likelihood as weights and cluster members as samples: picking the
//! cluster with the lowest estimated squared error, and taking the posterior
//! mean under that cluster. Overlapping patch estimates are averaged.

pub mod config;
pub mod denoiser;
pub mod error;
pub mod image_pipeline;
pub mod imageio;
pub mod linalg;
pub mod model_file;
pub mod patch_model;
pub mod poisson_likelihood;
pub mod prior_learning;
pub mod protocol;
pub mod report;
pub mod snis;
pub mod synthetic;

pub use config::DenoiseConfig;
pub use denoiser::{denoise_patch, PatchEstimate, SamplerState};
pub use error::{Error, Result};
pub use image_pipeline::{denoise_image, denoise_image_detailed, psnr, scale_to_peak, ImageGrid};
pub use model_file::{decode_model, encode_model, load_model, save_model};
pub use patch_model::{ClusterModel, Patch, PatchPool, PriorModel};
pub use poisson_likelihood::{poisson_loglik, sample_poisson_image, NoisyPatch};
pub use prior_learning::{learn_prior, LearnConfig, TrainingSet};
