//! Shared fixtures for the benchmarks.

use calcmatch::cluster::Template;
use calcmatch::image::{BinaryMask, Rect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_mask(seed: u64, w: u32, h: u32, density: f64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = BinaryMask::zeros(w, h);
    for b in m.bits.iter_mut() {
        *b = rng.gen_bool(density);
    }
    m
}

pub fn random_template(seed: u64, w: u32, h: u32, density: f64) -> Template {
    Template {
        bits: random_mask(seed, w, h, density),
        rotation_deg: 0,
        scale_applied: 1.0,
        source_rect: Rect::new(0, 0, w, h),
    }
}
