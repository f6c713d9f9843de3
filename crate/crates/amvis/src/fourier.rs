//! Frequency-domain image parameterization.
//!
//! The optimization variable is a complex half-spectrum per color channel;
//! images are produced by scaling the spectrum, applying an orthonormal
//! inverse FFT and squashing through a sigmoid into [0,1]. Storing only the
//! non-redundant half of the spectrum keeps decoded images exactly real.

use crate::error::{AmvisError, Result};
use crate::tensor::tape::{Tape, VarId};
use crate::tensor::Tensor;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Per-channel complex half-spectrum z = a + bi with image extent (H, W).
/// Redundant bins (columns 0 and W/2) are kept Hermitian-consistent so the
/// decode/forward_fft roundtrip is exact.
#[derive(Clone, Debug)]
pub struct ComplexSpectrum {
    pub re: Tensor,
    pub im: Tensor,
    pub height: usize,
    pub width: usize,
}

impl ComplexSpectrum {
    pub fn channels(&self) -> usize {
        self.re.shape[0]
    }

    pub fn half_width(&self) -> usize {
        self.width / 2 + 1
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Per-frequency weight grid w(f) = max(f, f_min)^(-decay), f in
/// cycles/pixel. decay = 0 disables scaling.
#[derive(Clone, Debug)]
pub struct SpectralScale {
    pub decay: f64,
    pub f_min: f64,
    grid: Vec<f64>,
    pub height: usize,
    width: usize,
}

impl SpectralScale {
    pub fn new(height: usize, width: usize, decay: f64) -> SpectralScale {
        let f_min = 1.0 / height.max(width) as f64;
        let wh = width / 2 + 1;
        let mut grid = Vec::with_capacity(height * wh);
        for ky in 0..height {
            let fy = ky.min(height - ky) as f64 / height as f64;
            for kx in 0..wh {
                let fx = kx as f64 / width as f64;
                let f = (fy * fy + fx * fx).sqrt();
                grid.push(f.max(f_min).powf(-decay));
            }
        }
        SpectralScale {
            decay,
            f_min,
            grid,
            height,
            width,
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn weight(&self, ky: usize, kx: usize) -> f64 {
        self.grid[ky * (self.width / 2 + 1) + kx]
    }
}

/// Random spectrum with i.i.d. normal(0, amplitude^2) entries, made
/// Hermitian-consistent in the redundant columns. Deterministic in `seed`.
pub fn init_spectrum(extent: (usize, usize, usize), seed: u64, amplitude: f64) -> ComplexSpectrum {
    let (c, h, w) = extent;
    let wh = w / 2 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = c * h * wh;
    let mut re = Vec::with_capacity(n);
    let mut im = Vec::with_capacity(n);
    for _ in 0..n {
        re.push(amplitude * crate::tensor::sample_standard_normal(&mut rng));
        im.push(amplitude * crate::tensor::sample_standard_normal(&mut rng));
    }
    let mut spec = ComplexSpectrum {
        re: Tensor::from_vec(vec![c, h, wh], re).expect("shape"),
        im: Tensor::from_vec(vec![c, h, wh], im).expect("shape"),
        height: h,
        width: w,
    };
    canonicalize(&mut spec);
    spec
}

/// Enforces Hermitian consistency on the self-mirroring columns (kx = 0 and
/// kx = W/2 for even W): conjugate-mirror rows, zero imaginary part on
/// self-conjugate bins.
pub fn canonicalize(spec: &mut ComplexSpectrum) {
    let (c, h, w) = (spec.channels(), spec.height, spec.width);
    let wh = spec.half_width();
    let mut cols = vec![0usize];
    if w % 2 == 0 && w > 1 {
        cols.push(w / 2);
    }
    for ch in 0..c {
        for &kx in &cols {
            for ky in 0..h {
                let my = (h - ky) % h;
                let i = (ch * h + ky) * wh + kx;
                let j = (ch * h + my) * wh + kx;
                if ky == my {
                    spec.im.data[i] = 0.0;
                } else if ky < my {
                    spec.re.data[j] = spec.re.data[i];
                    spec.im.data[j] = -spec.im.data[i];
                }
            }
        }
    }
}

fn fft2(buf: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Multiplicity of a half-spectrum bin in the real-image reconstruction:
/// interior columns appear once more as their conjugate mirror.
fn bin_multiplicity(kx: usize, w: usize) -> f64 {
    if kx == 0 || (w % 2 == 0 && kx == w / 2) {
        1.0
    } else {
        2.0
    }
}

/// Pre-sigmoid decode: scaled half-spectrum -> real [C,H,W] image via
/// orthonormal inverse FFT. Shared by the tape op and the pure decode path.
pub(crate) fn decode_pre_sigmoid_raw(
    re: &[f64],
    im: &[f64],
    scale: &[f64],
    channels: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let wh = w / 2 + 1;
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0f64; channels * h * w];
    let mut grid = vec![Complex::new(0.0, 0.0); h * w];
    for c in 0..channels {
        for v in grid.iter_mut() {
            *v = Complex::new(0.0, 0.0);
        }
        for ky in 0..h {
            for kx in 0..wh {
                let s = scale[ky * wh + kx] * bin_multiplicity(kx, w);
                let i = (c * h + ky) * wh + kx;
                grid[ky * w + kx] = Complex::new(re[i] * s, im[i] * s);
            }
        }
        fft2(&mut grid, h, w, true);
        for (o, v) in out[c * h * w..(c + 1) * h * w].iter_mut().zip(&grid) {
            *o = v.re * norm;
        }
    }
    out
}

/// Adjoint of `decode_pre_sigmoid_raw` w.r.t. (re, im).
pub(crate) fn decode_backward_raw(
    g: &[f64],
    scale: &[f64],
    channels: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let wh = w / 2 + 1;
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut gre = vec![0.0f64; channels * h * wh];
    let mut gim = vec![0.0f64; channels * h * wh];
    let mut grid = vec![Complex::new(0.0, 0.0); h * w];
    for c in 0..channels {
        for (slot, &gv) in grid.iter_mut().zip(&g[c * h * w..(c + 1) * h * w]) {
            *slot = Complex::new(gv, 0.0);
        }
        fft2(&mut grid, h, w, false);
        for ky in 0..h {
            for kx in 0..wh {
                let s = scale[ky * wh + kx] * bin_multiplicity(kx, w);
                let i = (c * h + ky) * wh + kx;
                let gf = grid[ky * w + kx] * norm;
                gre[i] = s * gf.re;
                gim[i] = s * gf.im;
            }
        }
    }
    (gre, gim)
}

/// Decodes a spectrum into a [C,H,W] image in [0,1] (pure, no tape).
pub fn decode(z: &ComplexSpectrum, scale: &SpectralScale) -> Tensor {
    let pre = decode_pre_sigmoid_raw(
        &z.re.data,
        &z.im.data,
        scale.grid(),
        z.channels(),
        z.height,
        z.width,
    );
    let data = pre
        .into_iter()
        .map(crate::tensor::tape::sigmoid)
        .collect::<Vec<_>>();
    Tensor::from_vec(vec![z.channels(), z.height, z.width], data).expect("shape")
}

/// Pre-sigmoid decode as a plain tensor (diagnostics and tests).
pub fn decode_pre_sigmoid(z: &ComplexSpectrum, scale: &SpectralScale) -> Tensor {
    let pre = decode_pre_sigmoid_raw(
        &z.re.data,
        &z.im.data,
        scale.grid(),
        z.channels(),
        z.height,
        z.width,
    );
    Tensor::from_vec(vec![z.channels(), z.height, z.width], pre).expect("shape")
}

/// Differentiable decode on a tape: spectral scale, inverse FFT, sigmoid.
pub fn decode_on_tape(
    tape: &mut Tape,
    re: VarId,
    im: VarId,
    scale: &SpectralScale,
    height: usize,
    width: usize,
) -> Result<VarId> {
    let pre = tape.spectrum_decode(re, im, scale.grid(), height, width)?;
    Ok(tape.sigmoid(pre))
}

/// Orthonormal forward FFT of a real [C,H,W] image, returned as the
/// canonical half-spectrum. Inverse of the decode transform stage.
pub fn forward_fft(image: &Tensor) -> Result<ComplexSpectrum> {
    if image.rank() != 3 {
        return Err(AmvisError::ShapeMismatch {
            op: "forward_fft",
            detail: format!("expected [C,H,W], got {:?}", image.shape),
        });
    }
    let (c, h, w) = (image.shape[0], image.shape[1], image.shape[2]);
    let wh = w / 2 + 1;
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut re = vec![0.0f64; c * h * wh];
    let mut im = vec![0.0f64; c * h * wh];
    let mut grid = vec![Complex::new(0.0, 0.0); h * w];
    for ch in 0..c {
        for (slot, &v) in grid.iter_mut().zip(&image.data[ch * h * w..(ch + 1) * h * w]) {
            *slot = Complex::new(v, 0.0);
        }
        fft2(&mut grid, h, w, false);
        for ky in 0..h {
            for kx in 0..wh {
                let i = (ch * h + ky) * wh + kx;
                re[i] = grid[ky * w + kx].re * norm;
                im[i] = grid[ky * w + kx].im * norm;
            }
        }
    }
    Ok(ComplexSpectrum {
        re: Tensor::from_vec(vec![c, h, wh], re)?,
        im: Tensor::from_vec(vec![c, h, wh], im)?,
        height: h,
        width: w,
    })
}

/// Fraction of non-DC spectral energy above the cutoff radius (cycles/pixel).
pub fn high_freq_energy_ratio(image: &Tensor, cutoff: f64) -> Result<f64> {
    if image.rank() != 3 {
        return Err(AmvisError::ShapeMismatch {
            op: "high_freq_energy_ratio",
            detail: format!("expected [C,H,W], got {:?}", image.shape),
        });
    }
    if !(cutoff > 0.0 && cutoff <= 0.5 + 1e-12) {
        return Err(AmvisError::ShapeMismatch {
            op: "high_freq_energy_ratio",
            detail: format!("cutoff {} outside (0, 0.5]", cutoff),
        });
    }
    let (c, h, w) = (image.shape[0], image.shape[1], image.shape[2]);
    let mut total = 0.0f64;
    let mut high = 0.0f64;
    let mut grid = vec![Complex::new(0.0, 0.0); h * w];
    for ch in 0..c {
        for (slot, &v) in grid.iter_mut().zip(&image.data[ch * h * w..(ch + 1) * h * w]) {
            *slot = Complex::new(v, 0.0);
        }
        fft2(&mut grid, h, w, false);
        for ky in 0..h {
            let fy = ky.min(h - ky) as f64 / h as f64;
            for kx in 0..w {
                if ky == 0 && kx == 0 {
                    continue; // DC excluded
                }
                let fx = kx.min(w - kx) as f64 / w as f64;
                let f = (fy * fy + fx * fx).sqrt();
                let e = grid[ky * w + kx].norm_sqr();
                total += e;
                if f > cutoff {
                    high += e;
                }
            }
        }
    }
    if total == 0.0 {
        Ok(0.0)
    } else {
        Ok(high / total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: usize = 16;
    const W: usize = 16;

    #[test]
    fn zero_amplitude_gives_zero_spectrum() {
        let z = init_spectrum((3, H, W), 1, 0.0);
        assert!(z.re.data.iter().all(|&v| v == 0.0));
        assert!(z.im.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_spectrum((3, H, W), 42, 0.01);
        let b = init_spectrum((3, H, W), 42, 0.01);
        assert_eq!(a.re.data, b.re.data);
        assert_eq!(a.im.data, b.im.data);
    }

    #[test]
    fn zero_spectrum_decodes_to_constant_half() {
        let z = init_spectrum((3, H, W), 0, 0.0);
        let scale = SpectralScale::new(H, W, 1.0);
        let img = decode(&z, &scale);
        assert!(img.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn dc_only_spectrum_decodes_to_constant() {
        let mut z = init_spectrum((1, H, W), 0, 0.0);
        let d = 1.75;
        z.re.data[0] = d;
        let scale = SpectralScale::new(H, W, 1.0);
        let img = decode(&z, &scale);
        let expected = crate::tensor::tape::sigmoid(
            d * scale.weight(0, 0) / ((H * W) as f64).sqrt(),
        );
        for &v in &img.data {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_forward_fft_roundtrip() {
        let z = init_spectrum((2, H, W), 7, 0.05);
        let scale = SpectralScale::new(H, W, 1.0);
        let pre = decode_pre_sigmoid(&z, &scale);
        let back = forward_fft(&pre).unwrap();
        let wh = W / 2 + 1;
        for c in 0..2 {
            for ky in 0..H {
                for kx in 0..wh {
                    let i = (c * H + ky) * wh + kx;
                    let s = scale.weight(ky, kx);
                    assert!(
                        (back.re.data[i] - s * z.re.data[i]).abs() < 1e-5,
                        "re bin ({},{},{})",
                        c,
                        ky,
                        kx
                    );
                    assert!(
                        (back.im.data[i] - s * z.im.data[i]).abs() < 1e-5,
                        "im bin ({},{},{})",
                        c,
                        ky,
                        kx
                    );
                }
            }
        }
    }

    #[test]
    fn fft_of_constant_is_dc_only() {
        let img = Tensor::full(&[1, H, W], 0.7);
        let spec = forward_fft(&img).unwrap();
        let wh = W / 2 + 1;
        for ky in 0..H {
            for kx in 0..wh {
                let mag = spec.re.data[ky * wh + kx].hypot(spec.im.data[ky * wh + kx]);
                if ky == 0 && kx == 0 {
                    assert!((mag - 0.7 * (H * W) as f64 / ((H * W) as f64).sqrt()).abs() < 1e-9);
                } else {
                    assert!(mag < 1e-10);
                }
            }
        }
    }

    #[test]
    fn fft_of_impulse_is_flat() {
        let mut img = Tensor::zeros(&[1, H, W]);
        img.data[5 * W + 3] = 1.0;
        let spec = forward_fft(&img).unwrap();
        let wh = W / 2 + 1;
        let expect = 1.0 / ((H * W) as f64).sqrt();
        for i in 0..H * wh {
            let mag = spec.re.data[i].hypot(spec.im.data[i]);
            assert!((mag - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn transform_stage_is_linear() {
        let z1 = init_spectrum((1, H, W), 1, 0.05);
        let z2 = init_spectrum((1, H, W), 2, 0.05);
        let scale = SpectralScale::new(H, W, 1.0);
        let mut zsum = z1.clone();
        for i in 0..zsum.re.data.len() {
            zsum.re.data[i] += z2.re.data[i];
            zsum.im.data[i] += z2.im.data[i];
        }
        let a = decode_pre_sigmoid(&z1, &scale);
        let b = decode_pre_sigmoid(&z2, &scale);
        let s = decode_pre_sigmoid(&zsum, &scale);
        for i in 0..s.data.len() {
            assert!((s.data[i] - a.data[i] - b.data[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn parseval_on_canonical_spectra() {
        let z = init_spectrum((1, H, W), 9, 0.05);
        let scale = SpectralScale::new(H, W, 1.0);
        let pre = decode_pre_sigmoid(&z, &scale);
        let spatial: f64 = pre.data.iter().map(|v| v * v).sum();
        let wh = W / 2 + 1;
        let mut spectral = 0.0;
        for ky in 0..H {
            for kx in 0..wh {
                let i = ky * wh + kx;
                let s = scale.weight(ky, kx);
                let m = bin_multiplicity(kx, W);
                spectral += m * s * s * (z.re.data[i].powi(2) + z.im.data[i].powi(2));
            }
        }
        assert!(
            (spatial - spectral).abs() / spectral.max(1e-12) < 1e-4,
            "{} vs {}",
            spatial,
            spectral
        );
    }

    #[test]
    fn decode_gradient_passes_grad_check() {
        let z = init_spectrum((1, 8, 8), 3, 0.1);
        let scale = SpectralScale::new(8, 8, 1.0);
        let im_fixed = z.im.clone();
        let rep = crate::tensor::gradcheck::grad_check(
            |t, re| {
                let im = t.leaf(im_fixed.clone(), false);
                let x = decode_on_tape(t, re, im, &scale, 8, 8)?;
                t.mean_all(x)
            },
            &z.re,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-3, "err {}", rep.max_rel_err);
        let re_fixed = z.re.clone();
        let rep = crate::tensor::gradcheck::grad_check(
            |t, im| {
                let re = t.leaf(re_fixed.clone(), false);
                let x = decode_on_tape(t, re, im, &scale, 8, 8)?;
                t.mean_all(x)
            },
            &z.im,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-3, "err {}", rep.max_rel_err);
    }

    #[test]
    fn high_freq_ratio_trivial_cases() {
        let flat = Tensor::full(&[1, H, W], 0.3);
        assert_eq!(high_freq_energy_ratio(&flat, 0.25).unwrap(), 0.0);

        // checkerboard at Nyquist
        let mut checker = Tensor::zeros(&[1, H, W]);
        for y in 0..H {
            for x in 0..W {
                checker.data[y * W + x] = ((x + y) % 2) as f64;
            }
        }
        let r = high_freq_energy_ratio(&checker, 0.25).unwrap();
        assert!(r > 0.999, "ratio {}", r);
    }

    #[test]
    fn low_pass_reduces_ratio() {
        // raw noise vs 3x3 box-filtered noise
        let noise = Tensor::randn(&[1, H, W], 1.0, 17);
        let mut smooth = Tensor::zeros(&[1, H, W]);
        for y in 0..H {
            for x in 0..W {
                let mut acc = 0.0;
                for dy in 0..3i32 {
                    for dx in 0..3i32 {
                        let yy = (y as i32 + dy - 1).rem_euclid(H as i32) as usize;
                        let xx = (x as i32 + dx - 1).rem_euclid(W as i32) as usize;
                        acc += noise.data[yy * W + xx];
                    }
                }
                smooth.data[y * W + x] = acc / 9.0;
            }
        }
        let r_raw = high_freq_energy_ratio(&noise, 0.25).unwrap();
        let r_smooth = high_freq_energy_ratio(&smooth, 0.25).unwrap();
        assert!(r_smooth < r_raw, "{} vs {}", r_smooth, r_raw);
    }

    #[test]
    fn init_amplitude_controls_pre_sigmoid_std() {
        let z = init_spectrum((3, 32, 32), 5, 0.01);
        let scale = SpectralScale::new(32, 32, 1.0);
        let pre = decode_pre_sigmoid(&z, &scale);
        for c in 0..3 {
            let ch = &pre.data[c * 1024..(c + 1) * 1024];
            let mean: f64 = ch.iter().sum::<f64>() / 1024.0;
            let var: f64 = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1024.0;
            let std = var.sqrt();
            assert!(std > 0.0 && std < 0.2, "channel {} std {}", c, std);
        }
    }
}
