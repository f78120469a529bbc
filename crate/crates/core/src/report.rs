//! Plain-text run report: `key = value` lines followed by a tab-separated table.

use std::fmt::Write;

use crate::config::DenoiseConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageReport {
    pub name: String,
    pub noisy_psnr_db: Option<f64>,
    pub denoised_psnr_db: Option<f64>,
    pub mean_ess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: DenoiseConfig,
    pub images: Vec<ImageReport>,
    pub wall_clock_seconds: f64,
}

pub const WALL_CLOCK_KEY: &str = "wall_clock_seconds";

/// Two decimals, or `inf` for a perfect match.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}

fn opt_db(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), format_db)
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = String::from("psnis run report\n");
        for (k, v) in self.config.echo() {
            let _ = writeln!(out, "config.{k} = {v}");
        }
        for img in &self.images {
            let _ = writeln!(out, "image = {}", img.name);
            if let Some(v) = img.noisy_psnr_db {
                let _ = writeln!(out, "noisy_psnr_db = {}", format_db(v));
            }
            if let Some(v) = img.denoised_psnr_db {
                let _ = writeln!(out, "denoised_psnr_db = {}", format_db(v));
            }
            let _ = writeln!(out, "mean_ess = {:.4}", img.mean_ess);
        }
        let _ = writeln!(out, "{WALL_CLOCK_KEY} = {:.3}", self.wall_clock_seconds);
        out.push_str("begin table\nimage\tnoisy_psnr_db\tdenoised_psnr_db\tmean_ess\n");
        for img in &self.images {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.4}",
                img.name,
                opt_db(img.noisy_psnr_db),
                opt_db(img.denoised_psnr_db),
                img.mean_ess
            );
        }
        out.push_str("end table\n");
        out
    }
}

/// Report text without the wall-clock line, for run-to-run comparison.
pub fn strip_timing(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.starts_with(WALL_CLOCK_KEY))
        .map(|l| format!("{l}\n"))
        .collect()
}
