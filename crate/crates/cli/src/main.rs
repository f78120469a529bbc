//! `psnis` command-line tool: train a class prior, synthesize Poisson
//! observations, denoise, evaluate, and run the train/test peak sweep.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use psnis::image_pipeline::{denoise_image_detailed, psnr, psnr_at_peak, scale_to_peak};
use psnis::imageio::{read_image, write_counts, write_image8};
use psnis::protocol::{build_training_set, run_trial, train_prior};
use psnis::report::{format_db, ImageReport, RunReport};
use psnis::{load_model, sample_poisson_image, save_model, DenoiseConfig, Error, ImageGrid, LearnConfig};

/// Reference mean PSNR (dB) for the face class at peaks 2, 5, 10, 15.
const FACE_REFERENCE_DB: [(f64, f64); 4] = [(2.0, 21.31), (5.0, 23.95), (10.0, 25.78), (15.0, 27.40)];

#[derive(Parser)]
#[command(name = "psnis", version, about = "Class-specific Poisson denoising with importance sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a prior from a directory of clean class images
    Train(TrainArgs),
    /// Scale a clean image to a peak and draw Poisson counts
    Synth(SynthArgs),
    /// Denoise a count image with a trained prior
    Denoise(DenoiseArgs),
    /// Print the PSNR of an estimate against a reference
    Evaluate(EvaluateArgs),
    /// Random train/test split of a class directory, swept over peaks
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long)]
    peak: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extraction stride for training patches
    #[arg(long, default_value_t = 1)]
    train_stride: usize,
    #[arg(long, default_value_t = 10)]
    cem_iters: usize,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    clean_image: PathBuf,
    #[arg(long)]
    peak: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Count image; `.txt` writes a text grid, anything else a 16-bit PNG
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SweepFlags {
    #[arg(long, default_value_t = 300)]
    n1: usize,
    #[arg(long, default_value_t = 30)]
    n2: usize,
    #[arg(long, default_value_t = 2)]
    iters: usize,
    #[arg(long, default_value_t = 2)]
    stride: usize,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct DenoiseArgs {
    noisy_image: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Defaults to the peak the model was trained at
    #[arg(long)]
    peak: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Must match the model when given
    #[arg(long)]
    patch_size: Option<usize>,
    /// Accepted for symmetry with `train`; the model fixes K
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    sweep: SweepFlags,
    /// Clean image to score noisy and denoised PSNR against
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Also write the run report here
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    estimate: PathBuf,
    reference: PathBuf,
    /// Treat the estimate as peak-scale intensities and rescale by 255/peak
    #[arg(long)]
    peak: Option<f64>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "2,5,10,15")]
    peaks: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    test_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    patch_size: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    train_stride: usize,
    #[arg(long, default_value_t = 10)]
    cem_iters: usize,
    #[command(flatten)]
    sweep: SweepFlags,
}

enum CliError {
    Usage(String),
    Data(String),
    Model(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Model(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Model(m) => m,
        }
    }
}

fn data_err(e: Error) -> CliError {
    match e {
        Error::InvalidArgument(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    }
}

fn model_err(e: Error) -> CliError {
    match e {
        Error::CorruptModel(m) => CliError::Model(format!("corrupt model: {m}")),
        other => CliError::Model(other.to_string()),
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match workers {
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Data(format!("thread pool: {e}"))),
        None => Ok(f()),
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads every decodable image at least `min_side` on each side, warning about
/// the rest.
fn load_class_images(dir: &Path, min_side: usize) -> Result<Vec<(PathBuf, ImageGrid)>, CliError> {
    let mut out = Vec::new();
    for path in list_images(dir)? {
        match read_image(&path) {
            Ok(img) if img.width() >= min_side && img.height() >= min_side && img.max() > 0.0 => out.push((path, img)),
            Ok(_) => eprintln!("warning: skipping {} (too small or blank)", path.display()),
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    Ok(out)
}

fn histogram_line(sizes: &[usize]) -> String {
    sizes
        .iter()
        .enumerate()
        .map(|(k, n)| format!("{k}:{n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let images = load_class_images(&args.data_dir, args.patch_size)?;
    if images.is_empty() {
        return Err(CliError::Data(format!("no usable images in {}", args.data_dir.display())));
    }
    let grids: Vec<ImageGrid> = images.into_iter().map(|(_, g)| g).collect();
    let cfg = DenoiseConfig {
        k_count: args.k,
        patch_size: args.patch_size,
        stride: 1,
        cem_iters: args.cem_iters,
        ..DenoiseConfig::new(args.peak, args.seed)
    };
    cfg.validate().map_err(data_err)?;
    if args.train_stride == 0 {
        return Err(CliError::Usage("--train-stride must be at least 1".into()));
    }
    let set = build_training_set(&grids, args.patch_size, args.train_stride, args.peak).map_err(data_err)?;
    let learn = LearnConfig::new(args.k, args.cem_iters, args.seed, args.peak);
    let model = with_workers(args.workers, || psnis::learn_prior(&set, &learn))?.map_err(data_err)?;
    save_model(&model, &args.out).map_err(data_err)?;
    println!(
        "trained {} clusters on {} patches from {} images",
        model.k_count(),
        set.len(),
        set.source_count()
    );
    println!("cluster sizes: {}", histogram_line(&model.cluster_sizes()));
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let clean = read_image(&args.clean_image).map_err(data_err)?;
    let scaled = scale_to_peak(&clean, args.peak).map_err(|e| CliError::Data(e.to_string()))?;
    let noisy = sample_poisson_image(&scaled, args.seed).map_err(data_err)?;
    write_counts(&noisy, &args.out).map_err(data_err)?;
    Ok(())
}

fn cmd_denoise(args: DenoiseArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let model = load_model(&args.model).map_err(model_err)?;
    if let Some(p) = args.patch_size {
        if p != model.patch_size() {
            return Err(CliError::Model(format!(
                "model patch size {} does not match --patch-size {p}",
                model.patch_size()
            )));
        }
    }
    let noisy = read_image(&args.noisy_image).map_err(data_err)?;
    let peak = args.peak.unwrap_or(model.peak());
    let cfg = DenoiseConfig {
        k_count: args.k.unwrap_or(model.k_count()),
        n1: args.sweep.n1,
        n2: args.sweep.n2,
        outer_iters: args.sweep.iters,
        patch_size: model.patch_size(),
        stride: args.sweep.stride,
        ..DenoiseConfig::new(peak, args.seed)
    };
    cfg.validate().map_err(data_err)?;
    if args.sweep.workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let output = denoise_image_detailed(&noisy, &model, &cfg, args.sweep.workers).map_err(data_err)?;
    write_image8(&output.image.scaled(255.0 / peak).map_err(data_err)?, &args.out).map_err(data_err)?;

    let (noisy_db, denoised_db) = match &args.reference {
        Some(path) => {
            let reference = scale_to_peak(&read_image(path).map_err(data_err)?, peak).map_err(data_err)?;
            (
                Some(psnr_at_peak(&noisy, &reference, peak).map_err(data_err)?),
                Some(psnr_at_peak(&output.image, &reference, peak).map_err(data_err)?),
            )
        }
        None => (None, None),
    };
    let report = RunReport {
        config: cfg,
        images: vec![ImageReport {
            name: args
                .noisy_image
                .file_name()
                .map_or_else(|| args.noisy_image.display().to_string(), |n| n.to_string_lossy().into_owned()),
            noisy_psnr_db: noisy_db,
            denoised_psnr_db: denoised_db,
            mean_ess: output.mean_ess(),
        }],
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, &text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let estimate = read_image(&args.estimate).map_err(data_err)?;
    let reference = read_image(&args.reference).map_err(data_err)?;
    let reference = scale_to_peak(&reference, 255.0).map_err(data_err)?;
    let estimate = match args.peak {
        Some(p) if !(p.is_finite() && p > 0.0) => return Err(CliError::Usage(format!("peak {p} must be positive"))),
        Some(p) => estimate.scaled(255.0 / p).map_err(data_err)?,
        None => estimate,
    };
    let db = psnr(&estimate, &reference, 255.0).map_err(|e| CliError::Data(e.to_string()))?;
    println!("psnr_db = {}", format_db(db));
    Ok(())
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<(), CliError> {
    let mut images = load_class_images(&args.data_dir, args.patch_size)?;
    if images.len() <= args.test_count || args.test_count == 0 {
        return Err(CliError::Data(format!(
            "need more than {} usable images for a train/test split, found {}",
            args.test_count,
            images.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    images.shuffle(&mut rng);
    let (test, train) = images.split_at(args.test_count);
    let train: Vec<ImageGrid> = train.iter().map(|(_, g)| g.clone()).collect();
    println!("train images: {}", train.len());
    for (path, _) in test {
        println!("test image: {}", path.display());
    }
    println!("peak\tnoisy_psnr_db\tdenoised_psnr_db\tface_reference_db");
    for &peak in &args.peaks {
        let cfg = DenoiseConfig {
            k_count: args.k,
            n1: args.sweep.n1,
            n2: args.sweep.n2,
            outer_iters: args.sweep.iters,
            patch_size: args.patch_size,
            stride: args.sweep.stride,
            cem_iters: args.cem_iters,
            ..DenoiseConfig::new(peak, args.seed)
        };
        cfg.validate().map_err(data_err)?;
        let model = with_workers(args.sweep.workers, || train_prior(&train, &cfg, args.train_stride))?.map_err(data_err)?;
        let (mut noisy_sum, mut denoised_sum) = (0.0, 0.0);
        for (i, (_, clean)) in test.iter().enumerate() {
            let trial = run_trial(clean, &model, &cfg, args.seed.wrapping_add(i as u64), args.sweep.workers).map_err(data_err)?;
            noisy_sum += trial.noisy_psnr_db;
            denoised_sum += trial.denoised_psnr_db;
        }
        let n = test.len() as f64;
        let reference = FACE_REFERENCE_DB
            .iter()
            .find(|(p, _)| *p == peak)
            .map_or_else(|| "-".to_string(), |(_, db)| format!("{db:.2}"));
        println!("{peak}\t{:.2}\t{:.2}\t{reference}", noisy_sum / n, denoised_sum / n);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
