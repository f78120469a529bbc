//! A synthetic image class for tests and benchmarks: every image is split by a
//! straight boundary into a region of vertical stripes and a region of
//! checkerboard, with random phases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image_pipeline::ImageGrid;

const STRIPE_PERIOD: f64 = 8.0;
const CHECKER_CELL: usize = 4;

/// One two-texture image with intensities in `[0.15, 0.95]`.
pub fn two_texture_image(width: usize, height: usize, rng: &mut impl Rng) -> Result<ImageGrid> {
    let vertical_split = rng.gen_bool(0.5);
    let extent = if vertical_split { width } else { height };
    let split = rng.gen_range(extent / 4..=(3 * extent / 4).max(extent / 4));
    let stripes_first = rng.gen_bool(0.5);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dr, dc) = (rng.gen_range(0..CHECKER_CELL * 2), rng.gen_range(0..CHECKER_CELL * 2));
    ImageGrid::from_fn(width, height, |r, c| {
        let pos = if vertical_split { c } else { r };
        if (pos < split) == stripes_first {
            0.55 + 0.4 * (std::f64::consts::TAU * c as f64 / STRIPE_PERIOD + phase).sin()
        } else if ((r + dr) / CHECKER_CELL + (c + dc) / CHECKER_CELL) % 2 == 0 {
            0.9
        } else {
            0.15
        }
    })
}

/// `count` images drawn from a generator seeded with `seed`.
pub fn two_texture_corpus(count: usize, width: usize, height: usize, seed: u64) -> Result<Vec<ImageGrid>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| two_texture_image(width, height, &mut rng)).collect()
}
