//! Synthetic shape dataset: a deterministic, generated stand-in for natural
//! image classes, distinguishable enough that a pixel-space k-NN baseline
//! separates them.

use crate::error::{AmvisError, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const CLASS_NAMES: [&str; 10] = [
    "circle",
    "square",
    "triangle",
    "h-stripes",
    "v-stripes",
    "checkerboard",
    "ring",
    "cross",
    "diamond",
    "dot-grid",
];

#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<Tensor>, // each [3,H,W] in [0,1]
    pub labels: Vec<usize>,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacks the given samples into a [B,3,H,W] batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(indices.len() * 3 * h * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.images[i].data);
            labels.push(self.labels[i]);
        }
        (
            Tensor::from_vec(vec![indices.len(), 3, h, w], data).expect("batch shape"),
            labels,
        )
    }
}

/// Deterministic renderer: `classes` shape classes, `n_per_class` samples
/// each, randomized position/scale/color plus background noise.
pub fn synth_dataset(
    classes: usize,
    n_per_class: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(4..=10).contains(&classes) {
        return Err(AmvisError::UnsupportedClassCount(classes));
    }
    if height < 16 || width < 16 {
        return Err(AmvisError::InputTooSmall {
            h: height,
            w: width,
            min: 16,
        });
    }
    let mut images = Vec::with_capacity(classes * n_per_class);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in 0..classes {
        for _ in 0..n_per_class {
            images.push(render_sample(class, height, width, &mut rng));
            labels.push(class);
        }
    }
    Ok(Dataset {
        images,
        labels,
        classes,
        height,
        width,
    })
}

fn render_sample(class: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let fg: [f64; 3] = [
        rng.gen_range(0.5..0.75),
        rng.gen_range(0.5..0.75),
        rng.gen_range(0.5..0.75),
    ];
    let bg: [f64; 3] = [
        rng.gen_range(0.25..0.45),
        rng.gen_range(0.25..0.45),
        rng.gen_range(0.25..0.45),
    ];
    let minside = h.min(w) as f64;
    let r = minside * rng.gen_range(0.22..0.38);
    let cx = w as f64 / 2.0 + minside * rng.gen_range(-0.12..0.12);
    let cy = h as f64 / 2.0 + minside * rng.gen_range(-0.12..0.12);
    let period = rng.gen_range(4.0..8.0);
    let phase = rng.gen_range(0.0..period);
    let noise_sigma = 0.1;

    let mut img = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let m = shape_mask(class, x as f64 - cx, y as f64 - cy, r, x as f64, y as f64, period, phase);
            for c in 0..3 {
                let base = bg[c] + m * (fg[c] - bg[c]);
                let v = base + noise_sigma * crate::tensor::sample_standard_normal(rng);
                img.data[c * h * w + y * w + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Coverage in [0,1] for one pixel. `px,py` are offsets from the shape
/// center, `ax,ay` absolute coordinates (for full-image textures).
fn shape_mask(class: usize, px: f64, py: f64, r: f64, ax: f64, ay: f64, period: f64, phase: f64) -> f64 {
    let soft = |signed_dist: f64| (0.5 - signed_dist).clamp(0.0, 1.0); // 1 px falloff
    let d = (px * px + py * py).sqrt();
    match class {
        0 => soft(d - r),                          // circle
        1 => soft(px.abs().max(py.abs()) - r),     // square
        2 => {
            // upward triangle inscribed in radius r
            let top = -r;
            let base = r * 0.8;
            if py < top || py > base {
                0.0
            } else {
                let half_width = r * (py - top) / (base - top);
                soft(px.abs() - half_width)
            }
        }
        3 => stripe(ay, period, phase),            // horizontal stripes
        4 => stripe(ax, period, phase),            // vertical stripes
        5 => {
            // checkerboard
            let sa = ((ax + phase) / period).floor() as i64;
            let sb = ((ay + phase) / period).floor() as i64;
            if (sa + sb).rem_euclid(2) == 0 {
                1.0
            } else {
                0.0
            }
        }
        6 => soft(d - r).min(soft(r * 0.55 - d)),  // ring
        7 => {
            // cross of arm width 0.35 r
            let t = r * 0.35;
            let in_v = soft(px.abs() - t).min(soft(py.abs() - r));
            let in_h = soft(py.abs() - t).min(soft(px.abs() - r));
            in_v.max(in_h)
        }
        8 => soft(px.abs() + py.abs() - r),        // diamond
        9 => {
            // dot grid
            let g = period * 1.5;
            let nx = (ax + phase).rem_euclid(g) - g / 2.0;
            let ny = (ay + phase).rem_euclid(g) - g / 2.0;
            soft((nx * nx + ny * ny).sqrt() - g * 0.28)
        }
        _ => unreachable!("class count validated"),
    }
}

fn stripe(coord: f64, period: f64, phase: f64) -> f64 {
    if ((coord + phase) / period).floor() as i64 % 2 == 0 {
        1.0
    } else {
        0.0
    }
}
