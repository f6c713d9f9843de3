//! Stochastic geometric transforms applied to the decoded image each
//! optimization step: rotation, then scale about the image center (bilinear
//! resampling), then integer jitter. Reflect padding throughout, so no
//! border values are injected.

use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One sampled transform: integer pixel jitter, scale factor, rotation angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformSpec {
    pub dx: i32,
    pub dy: i32,
    pub scale: f64,
    pub angle: f64,
}

impl TransformSpec {
    pub fn identity() -> TransformSpec {
        TransformSpec {
            dx: 0,
            dy: 0,
            scale: 1.0,
            angle: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.dx == 0 && self.dy == 0 && self.scale == 1.0 && self.angle == 0.0
    }

    fn is_integer_shift(&self) -> bool {
        self.scale == 1.0 && self.angle == 0.0
    }
}

/// Distribution the per-step transform is drawn from. Disabled components
/// yield identity.
#[derive(Clone, Debug)]
pub struct TransformPolicy {
    pub jitter_max: u32,
    pub scale_min: f64,
    pub scale_max: f64,
    pub angle_max: f64,
    pub jitter_enabled: bool,
    pub scale_enabled: bool,
    pub rotate_enabled: bool,
    pub seed: u64,
}

impl TransformPolicy {
    /// Mild defaults: 4 px jitter, scale [0.9, 1.1], rotation up to 5 degrees.
    pub fn default_with_seed(seed: u64) -> TransformPolicy {
        TransformPolicy {
            jitter_max: 4,
            scale_min: 0.9,
            scale_max: 1.1,
            angle_max: 5.0_f64.to_radians(),
            jitter_enabled: true,
            scale_enabled: true,
            rotate_enabled: true,
            seed,
        }
    }

    pub fn disabled(seed: u64) -> TransformPolicy {
        TransformPolicy {
            jitter_enabled: false,
            scale_enabled: false,
            rotate_enabled: false,
            ..TransformPolicy::default_with_seed(seed)
        }
    }

    /// Deterministic function of (seed, step); uniform over each enabled range.
    pub fn sample(&self, step: usize) -> TransformSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step as u64 + 1);
        let mut spec = TransformSpec::identity();
        if self.jitter_enabled && self.jitter_max > 0 {
            let j = self.jitter_max as i32;
            spec.dx = rng.gen_range(-j..=j);
            spec.dy = rng.gen_range(-j..=j);
        }
        if self.scale_enabled {
            spec.scale = rng.gen_range(self.scale_min..=self.scale_max);
        }
        if self.rotate_enabled {
            spec.angle = rng.gen_range(-self.angle_max..=self.angle_max);
        }
        spec
    }
}

/// Reflect (half-sample symmetric at the border, no edge duplication).
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Up to four (source index, weight) taps for one output pixel.
fn taps_for(y: usize, x: usize, spec: &TransformSpec, h: usize, w: usize) -> [(usize, usize, f64); 4] {
    let u = x as isize - spec.dx as isize;
    let v = y as isize - spec.dy as isize;
    let ui = reflect_index(u, w);
    let vi = reflect_index(v, h);
    if spec.is_integer_shift() {
        return [(vi, ui, 1.0), (0, 0, 0.0), (0, 0, 0.0), (0, 0, 0.0)];
    }
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let px = ui as f64 - cx;
    let py = vi as f64 - cy;
    let (sin, cos) = spec.angle.sin_cos();
    let sx = (cos * px + sin * py) / spec.scale + cx;
    let sy = (-sin * px + cos * py) / spec.scale + cy;
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let xi0 = reflect_index(x0 as isize, w);
    let xi1 = reflect_index(x0 as isize + 1, w);
    let yi0 = reflect_index(y0 as isize, h);
    let yi1 = reflect_index(y0 as isize + 1, h);
    [
        (yi0, xi0, (1.0 - fy) * (1.0 - fx)),
        (yi0, xi1, (1.0 - fy) * fx),
        (yi1, xi0, fy * (1.0 - fx)),
        (yi1, xi1, fy * fx),
    ]
}

/// Applies the transform to a [C,H,W] image; identity spec is a bit-exact copy.
pub(crate) fn warp_forward(image: &Tensor, spec: &TransformSpec) -> Tensor {
    let (c, h, w) = (image.shape[0], image.shape[1], image.shape[2]);
    if spec.is_identity() {
        let mut out = image.clone();
        out.requires_grad = false;
        out.grad = None;
        return out;
    }
    let mut out = Tensor::zeros(&image.shape);
    for y in 0..h {
        for x in 0..w {
            let taps = taps_for(y, x, spec, h, w);
            for ch in 0..c {
                let base = ch * h * w;
                let mut acc = 0.0;
                for &(ty, tx, wt) in &taps {
                    if wt != 0.0 {
                        acc += wt * image.data[base + ty * w + tx];
                    }
                }
                out.data[base + y * w + x] = acc;
            }
        }
    }
    out
}

/// Adjoint of `warp_forward`: scatters output gradients through the same
/// sampling weights.
pub(crate) fn warp_backward(g: &[f64], shape: &[usize], spec: &TransformSpec) -> Vec<f64> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if spec.is_identity() {
        return g.to_vec();
    }
    let mut out = vec![0.0f64; c * h * w];
    for y in 0..h {
        for x in 0..w {
            let taps = taps_for(y, x, spec, h, w);
            for ch in 0..c {
                let base = ch * h * w;
                let gv = g[base + y * w + x];
                for &(ty, tx, wt) in &taps {
                    if wt != 0.0 {
                        out[base + ty * w + tx] += wt * gv;
                    }
                }
            }
        }
    }
    out
}

/// Pure convenience wrapper (no tape participation).
pub fn apply(image: &Tensor, spec: &TransformSpec) -> Tensor {
    warp_forward(image, spec)
}
