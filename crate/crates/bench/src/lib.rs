//! Seeded fixtures shared by the benchmarks.

use fracdet_core::eval::DetectionMatch;
use fracdet_core::proposals::ScoredBox;
use fracdet_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Box with corners inside `[0, extent)` and sides of at least 1.
pub fn random_box(rng: &mut impl Rng, extent: f64) -> BBox {
    let x1 = rng.gen_range(0.0..extent - 2.0);
    let y1 = rng.gen_range(0.0..extent - 2.0);
    BBox::new(x1, y1, rng.gen_range(x1 + 1.0..extent), rng.gen_range(y1 + 1.0..extent))
}

pub fn random_boxes(seed: u64, n: usize, extent: f64) -> Vec<BBox> {
    let mut r = rng(seed);
    (0..n).map(|_| random_box(&mut r, extent)).collect()
}

pub fn scored_boxes(seed: u64, n: usize, extent: f64) -> Vec<ScoredBox> {
    let mut r = rng(seed);
    (0..n).map(|_| ScoredBox { bbox: random_box(&mut r, extent), score: r.gen(), class: None }).collect()
}

pub fn match_set(seed: u64, n: usize) -> Vec<DetectionMatch> {
    let mut r = rng(seed);
    (0..n).map(|_| DetectionMatch { certainty: r.gen(), true_positive: r.gen_bool(0.4) }).collect()
}
