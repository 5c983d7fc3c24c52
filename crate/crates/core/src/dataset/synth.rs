//! Synthetic stand-in corpus: textured "bone" backgrounds, bright rectangular
//! lesions for positives, unrelated patterns for pure negatives.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Annotation, GrayImage, Sample, SampleKind};
use crate::geometry::BBox;

/// Lesion pixels are at least this bright; everything else stays below it.
pub const LESION_FLOOR: u8 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub positives: usize,
    pub hand_negatives: usize,
    pub pure_negatives: usize,
    pub image_size: u32,
    pub lesion_min: u32,
    pub lesion_max: u32,
    pub max_lesions: usize,
    /// Amplitude of per-pixel uniform noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            positives: 38,
            hand_negatives: 30,
            pure_negatives: 20,
            image_size: 96,
            lesion_min: 12,
            lesion_max: 28,
            max_lesions: 2,
            noise: 6.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.image_size < 32 {
            return Err(format!("image_size {} below 32", self.image_size));
        }
        if self.lesion_min < 2 || self.lesion_min > self.lesion_max {
            return Err(format!("lesion size range [{}, {}] invalid", self.lesion_min, self.lesion_max));
        }
        if self.lesion_max + 2 * MARGIN > self.image_size {
            return Err(format!("lesion_max {} does not fit in image_size {}", self.lesion_max, self.image_size));
        }
        if self.max_lesions == 0 {
            return Err("max_lesions must be at least 1".into());
        }
        if !(self.noise >= 0.0 && self.noise <= 20.0) {
            return Err(format!("noise {} outside [0, 20]", self.noise));
        }
        Ok(())
    }
}

const MARGIN: u32 = 4;

fn background(rng: &mut ChaCha8Rng, size: u32, noise: f64) -> Vec<f64> {
    let n = size as usize;
    let base = rng.gen_range(60.0..90.0);
    let amp = rng.gen_range(5.0..15.0);
    let (fx, fy) = (rng.gen_range(0.05..0.25), rng.gen_range(0.05..0.25));
    let (px, py) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let mut img = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            img[y * n + x] = base + amp * (fx * x as f64 + px).sin() * (fy * y as f64 + py).sin();
        }
    }
    // elongated bone-like ellipses
    for _ in 0..rng.gen_range(2..=4) {
        let cx = rng.gen_range(0.0..size as f64);
        let cy = rng.gen_range(0.0..size as f64);
        let a = rng.gen_range(size as f64 * 0.2..size as f64 * 0.5);
        let b = rng.gen_range(3.0..8.0);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let gain = rng.gen_range(35.0..55.0);
        let (s, c) = theta.sin_cos();
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = (dx * c + dy * s) / a;
                let v = (-dx * s + dy * c) / b;
                if u * u + v * v <= 1.0 {
                    img[y * n + x] += gain;
                }
            }
        }
    }
    for p in img.iter_mut() {
        *p += rng.gen_range(-noise..=noise);
    }
    img
}

fn quantize(img: &[f64], size: u32, ceiling: f64) -> GrayImage {
    let pixels = img.iter().map(|v| v.round().clamp(0.0, ceiling) as u8).collect();
    GrayImage::from_pixels(size, size, pixels).expect("square buffer")
}

fn place_lesions(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<(u32, u32, u32, u32)> {
    let count = rng.gen_range(1..=cfg.max_lesions);
    let mut placed: Vec<(u32, u32, u32, u32)> = Vec::new();
    'outer: for _ in 0..count {
        for _attempt in 0..50 {
            let w = rng.gen_range(cfg.lesion_min..=cfg.lesion_max);
            let h = rng.gen_range(cfg.lesion_min..=cfg.lesion_max);
            let x = rng.gen_range(MARGIN..=cfg.image_size - MARGIN - w);
            let y = rng.gen_range(MARGIN..=cfg.image_size - MARGIN - h);
            // keep a 2 px gap so rendered extents stay disjoint
            let clear = placed
                .iter()
                .all(|&(ox, oy, ow, oh)| x >= ox + ow + 2 || ox >= x + w + 2 || y >= oy + oh + 2 || oy >= y + h + 2);
            if clear {
                placed.push((x, y, w, h));
                continue 'outer;
            }
        }
    }
    placed
}

fn positive(rng: &mut ChaCha8Rng, cfg: &SynthConfig, id: String) -> Sample {
    let mut img = background(rng, cfg.image_size, cfg.noise);
    let n = cfg.image_size as usize;
    let lesions = place_lesions(rng, cfg);
    let mut annotations = Vec::new();
    let mut mask = vec![false; n * n];
    for &(x, y, w, h) in &lesions {
        let level = rng.gen_range(215.0..235.0);
        for yy in y..y + h {
            for xx in x..x + w {
                let i = yy as usize * n + xx as usize;
                img[i] = level + rng.gen_range(-cfg.noise..=cfg.noise);
                mask[i] = true;
            }
        }
        annotations.push(Annotation::fracture(BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)));
    }
    let pixels = img
        .iter()
        .zip(&mask)
        .map(|(&v, &lesion)| {
            if lesion {
                v.round().clamp(LESION_FLOOR as f64, 255.0) as u8
            } else {
                v.round().clamp(0.0, LESION_FLOOR as f64 - 1.0) as u8
            }
        })
        .collect();
    let image = GrayImage::from_pixels(cfg.image_size, cfg.image_size, pixels).expect("square buffer");
    Sample { id, image, annotations, kind: SampleKind::Positive, origin: None }
}

fn hand_negative(rng: &mut ChaCha8Rng, cfg: &SynthConfig, id: String) -> Sample {
    let img = background(rng, cfg.image_size, cfg.noise);
    let image = quantize(&img, cfg.image_size, LESION_FLOOR as f64 - 1.0);
    Sample { id, image, annotations: vec![], kind: SampleKind::HandNegative, origin: None }
}

fn pure_negative(rng: &mut ChaCha8Rng, cfg: &SynthConfig, id: String) -> Sample {
    let n = cfg.image_size as usize;
    let mut img = vec![0.0; n * n];
    match rng.gen_range(0..3) {
        0 => {
            let period = rng.gen_range(4.0..16.0);
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (s, c) = theta.sin_cos();
            for y in 0..n {
                for x in 0..n {
                    let t = (x as f64 * c + y as f64 * s) * std::f64::consts::TAU / period;
                    img[y * n + x] = 100.0 + 70.0 * t.sin();
                }
            }
        }
        1 => {
            let (a, b) = (rng.gen_range(20.0..80.0), rng.gen_range(100.0..170.0));
            let horizontal = rng.gen_bool(0.5);
            for y in 0..n {
                for x in 0..n {
                    let t = if horizontal { x } else { y } as f64 / (n - 1) as f64;
                    img[y * n + x] = a + (b - a) * t;
                }
            }
        }
        _ => {
            img.iter_mut().for_each(|p| *p = 40.0);
            for _ in 0..rng.gen_range(10..30) {
                let cx = rng.gen_range(0.0..n as f64);
                let cy = rng.gen_range(0.0..n as f64);
                let r = rng.gen_range(1.5..5.0);
                for y in 0..n {
                    for x in 0..n {
                        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                        if dx * dx + dy * dy <= r * r {
                            img[y * n + x] = 170.0;
                        }
                    }
                }
            }
        }
    }
    for p in img.iter_mut() {
        *p += rng.gen_range(-cfg.noise..=cfg.noise);
    }
    let image = quantize(&img, cfg.image_size, 175.0);
    Sample { id, image, annotations: vec![], kind: SampleKind::PureNegative, origin: None }
}

/// Deterministic per seed. Ids are `pos_NNN`, `hand_NNN`, `pure_NNN`.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.positives + cfg.hand_negatives + cfg.pure_negatives);
    for i in 0..cfg.positives {
        out.push(positive(&mut rng, cfg, format!("pos_{i:03}")));
    }
    for i in 0..cfg.hand_negatives {
        out.push(hand_negative(&mut rng, cfg, format!("hand_{i:03}")));
    }
    for i in 0..cfg.pure_negatives {
        out.push(pure_negative(&mut rng, cfg, format!("pure_{i:03}")));
    }
    out
}
