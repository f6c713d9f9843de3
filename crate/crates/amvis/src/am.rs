//! Activation-maximization loops: plain pixel-space gradient ascent and the
//! Fourier-parameterized variant with stochastic transforms applied each
//! step, plus step tracing for progression figures.

use crate::error::{AmvisError, Result};
use crate::fourier::{decode, decode_on_tape, init_spectrum, ComplexSpectrum, SpectralScale};
use crate::io::{encode_png, write_csv};
use crate::models::ModelGraph;
use crate::objectives::{objective_on_tape, UnitRef};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;
use crate::transforms::TransformPolicy;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parameterization {
    Pixel,
    Fourier,
}

#[derive(Clone, Debug)]
pub struct AmConfig {
    pub eta: f64,
    pub steps: usize,
    pub parameterization: Parameterization,
    pub transforms: TransformPolicy,
    pub decay: f64,
    pub seed: u64,
    /// Record a trace snapshot every this many steps (0 = endpoints only).
    pub trace_every: usize,
}

impl AmConfig {
    pub fn fourier(steps: usize, seed: u64) -> AmConfig {
        AmConfig {
            eta: 0.05,
            steps,
            parameterization: Parameterization::Fourier,
            transforms: TransformPolicy::default_with_seed(seed),
            decay: 1.0,
            seed,
            trace_every: 0,
        }
    }

    pub fn pixel(steps: usize, seed: u64) -> AmConfig {
        AmConfig {
            eta: 0.5,
            parameterization: Parameterization::Pixel,
            ..AmConfig::fourier(steps, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.eta < 0.0 || !self.eta.is_finite() {
            return Err(AmvisError::ModelConfig(format!("eta must be >= 0, got {}", self.eta)));
        }
        if self.steps == 0 {
            return Err(AmvisError::ModelConfig("steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TracePoint {
    pub step: usize,
    pub objective: f64,
    pub image: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct AmTrace {
    pub points: Vec<TracePoint>,
}

impl AmTrace {
    fn record(&mut self, step: usize, objective: f64, image: &Tensor) {
        self.points.push(TracePoint {
            step,
            objective,
            image: image.clone(),
        });
    }

    pub fn initial_objective(&self) -> f64 {
        self.points.first().map(|p| p.objective).unwrap_or(f64::NAN)
    }

    pub fn final_objective(&self) -> f64 {
        self.points.last().map(|p| p.objective).unwrap_or(f64::NAN)
    }

    /// One PNG per snapshot ("step_000123.png") plus "trace.csv".
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| AmvisError::io(dir.display().to_string(), e))?;
        for p in &self.points {
            encode_png(&p.image, &dir.join(format!("step_{:06}.png", p.step)))?;
        }
        let rows: Vec<Vec<String>> = self
            .points
            .iter()
            .map(|p| vec![p.step.to_string(), format!("{:.9}", p.objective)])
            .collect();
        write_csv(&dir.join("trace.csv"), &["step", "objective"], &rows)
    }
}

/// Pure Eq.-style ascent update: variable + eta * grad.
pub fn ascend_step(variable: &Tensor, grad: &Tensor, eta: f64) -> Result<Tensor> {
    if variable.shape != grad.shape {
        return Err(AmvisError::ShapeMismatch {
            op: "ascend_step",
            detail: format!("variable {:?} vs grad {:?}", variable.shape, grad.shape),
        });
    }
    let data = variable
        .data
        .iter()
        .zip(&grad.data)
        .map(|(v, g)| v + eta * g)
        .collect();
    Tensor::from_vec(variable.shape.clone(), data)
}

fn should_record(step: usize, steps: usize, every: usize) -> bool {
    step == 0 || step == steps || (every > 0 && step % every == 0)
}

fn check_finite(obj: f64, step: usize, last_finite: usize) -> Result<()> {
    if obj.is_finite() {
        Ok(())
    } else {
        Err(AmvisError::DivergedRun { step, last_finite })
    }
}

/// Fourier-domain ascent: the optimization variable is a half-spectrum per
/// channel; each step decodes, applies a sampled transform, and ascends the
/// spectrum along the objective gradient.
pub fn feature_vis(
    model: &ModelGraph,
    unit: &UnitRef,
    cfg: &AmConfig,
) -> Result<(Tensor, AmTrace)> {
    cfg.validate()?;
    let (c, h, w) = model.input;
    let scale = SpectralScale::new(h, w, cfg.decay);
    let mut spec = init_spectrum((c, h, w), cfg.seed, 0.01);
    let mut trace = AmTrace::default();
    let mut last_finite = 0usize;
    for step in 0..cfg.steps {
        let tf = cfg.transforms.sample(step);
        let mut tape = Tape::new();
        let re = tape.leaf(spec.re.clone(), true);
        let im = tape.leaf(spec.im.clone(), true);
        let img = decode_on_tape(&mut tape, re, im, &scale, h, w)?;
        let warped = tape.warp(img, tf)?;
        let batch = tape.reshape(warped, &[1, c, h, w])?;
        let obj = objective_on_tape(model, &mut tape, batch, unit)?;
        let obj_val = tape.value(obj).scalar_value();
        check_finite(obj_val, step, last_finite)?;
        last_finite = step;
        if should_record(step, cfg.steps, cfg.trace_every) {
            trace.record(step, obj_val, &decode(&spec, &scale));
        }
        tape.backward(obj)?;
        let gre = tape.grad_tensor(re).expect("spectrum real grad");
        let gim = tape.grad_tensor(im).expect("spectrum imag grad");
        spec = ComplexSpectrum {
            re: ascend_step(&spec.re, &gre, cfg.eta)?,
            im: ascend_step(&spec.im, &gim, cfg.eta)?,
            ..spec
        };
    }
    let x_star = decode(&spec, &scale);
    let final_obj = final_objective(model, unit, &x_star)?;
    check_finite(final_obj, cfg.steps, last_finite)?;
    trace.record(cfg.steps, final_obj, &x_star);
    Ok((x_star, trace))
}

/// Pixel-domain ascent (Eq. 2 literal form): uniform-noise init in
/// [0.4, 0.6], clamp to [0, 1] every step.
pub fn pixel_am(model: &ModelGraph, unit: &UnitRef, cfg: &AmConfig) -> Result<(Tensor, AmTrace)> {
    cfg.validate()?;
    let (c, h, w) = model.input;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data: Vec<f64> = (0..c * h * w)
        .map(|_| 0.4 + 0.2 * (rng.next_u64() as f64 / u64::MAX as f64))
        .collect();
    let mut x = Tensor::from_vec(vec![c, h, w], data)?;
    let mut trace = AmTrace::default();
    let mut last_finite = 0usize;
    for step in 0..cfg.steps {
        let tf = cfg.transforms.sample(step);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let warped = tape.warp(xv, tf)?;
        let batch = tape.reshape(warped, &[1, c, h, w])?;
        let obj = objective_on_tape(model, &mut tape, batch, unit)?;
        let obj_val = tape.value(obj).scalar_value();
        check_finite(obj_val, step, last_finite)?;
        last_finite = step;
        if should_record(step, cfg.steps, cfg.trace_every) {
            trace.record(step, obj_val, &x);
        }
        tape.backward(obj)?;
        let g = tape.grad_tensor(xv).expect("pixel grad");
        x = ascend_step(&x, &g, cfg.eta)?.clamp(0.0, 1.0);
    }
    let final_obj = final_objective(model, unit, &x)?;
    check_finite(final_obj, cfg.steps, last_finite)?;
    trace.record(cfg.steps, final_obj, &x);
    Ok((x, trace))
}

fn final_objective(model: &ModelGraph, unit: &UnitRef, x: &Tensor) -> Result<f64> {
    crate::objectives::objective(model, x, unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::high_freq_energy_ratio;
    use crate::models::build_small_cnn;
    use crate::objectives::UnitKind;

    fn zero_eta(mut cfg: AmConfig) -> AmConfig {
        cfg.eta = 0.0;
        cfg.transforms = TransformPolicy::disabled(0);
        cfg
    }

    #[test]
    fn ascend_step_algebra() {
        let v = Tensor::zeros(&[2, 2]);
        let g = Tensor::from_vec(vec![2, 2], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        // eta=1 from zero returns the gradient
        assert_eq!(ascend_step(&v, &g, 1.0).unwrap().data, g.data);
        // zero gradient leaves the variable unchanged
        let v2 = Tensor::full(&[2, 2], 0.7);
        assert_eq!(ascend_step(&v2, &Tensor::zeros(&[2, 2]), 5.0).unwrap().data, v2.data);
        // two half-steps with a fixed gradient equal one full step
        let one = ascend_step(&v2, &g, 0.5).unwrap();
        let two = ascend_step(&ascend_step(&v2, &g, 0.25).unwrap(), &g, 0.25).unwrap();
        for (a, b) in one.data.iter().zip(&two.data) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(ascend_step(&v, &Tensor::zeros(&[3]), 1.0).is_err());
    }

    #[test]
    fn zero_eta_fourier_returns_decoded_init() {
        let m = build_small_cnn((3, 32, 32), 6, 7).unwrap();
        let unit = UnitRef::new("logits", UnitKind::LogitNeuron, 2);
        let cfg = zero_eta(AmConfig::fourier(1, 42));
        let (x, trace) = feature_vis(&m, &unit, &cfg).unwrap();
        let scale = SpectralScale::new(32, 32, 1.0);
        let init = decode(&init_spectrum((3, 32, 32), 42, 0.01), &scale);
        assert_eq!(x.data, init.data);
        assert!((trace.initial_objective() - trace.final_objective()).abs() < 1e-12);
    }

    #[test]
    fn zero_eta_pixel_returns_init() {
        let m = build_small_cnn((3, 32, 32), 6, 7).unwrap();
        let unit = UnitRef::new("logits", UnitKind::LogitNeuron, 0);
        let cfg = zero_eta(AmConfig::pixel(2, 9));
        let (a, _) = pixel_am(&m, &unit, &cfg).unwrap();
        let (b, _) = pixel_am(&m, &unit, &cfg).unwrap();
        assert_eq!(a.data, b.data);
        assert!(a.data.iter().all(|&v| (0.4..=0.6).contains(&v)));
    }

    #[test]
    fn runs_are_deterministic_under_seed() {
        let m = build_small_cnn((3, 32, 32), 6, 7).unwrap();
        let unit = UnitRef::new("conv_pw_2", UnitKind::ConvChannel, 3);
        let cfg = AmConfig::fourier(5, 11);
        let (a, ta) = feature_vis(&m, &unit, &cfg).unwrap();
        let (b, tb) = feature_vis(&m, &unit, &cfg).unwrap();
        assert_eq!(a.data, b.data);
        let oa: Vec<f64> = ta.points.iter().map(|p| p.objective).collect();
        let ob: Vec<f64> = tb.points.iter().map(|p| p.objective).collect();
        assert_eq!(oa, ob);
    }

    #[test]
    fn model_weights_frozen_across_run() {
        let m = build_small_cnn((3, 32, 32), 6, 7).unwrap();
        let before = m.weights_checksum();
        let unit = UnitRef::new("conv_pw_1", UnitKind::ConvChannel, 0);
        feature_vis(&m, &unit, &AmConfig::fourier(3, 1)).unwrap();
        pixel_am(&m, &unit, &AmConfig::pixel(3, 1)).unwrap();
        assert_eq!(m.weights_checksum(), before);
    }

    #[test]
    fn ascent_increases_linear_objective() {
        // channel mean of the first conv block is close to linear in x, so a
        // few steps must strictly increase it even on an untrained model
        let m = build_small_cnn((3, 32, 32), 6, 13).unwrap();
        let unit = UnitRef::new("conv_pw_1", UnitKind::ConvChannel, 2);
        let mut cfg = zero_eta(AmConfig::pixel(25, 3));
        cfg.eta = 0.5;
        let (_, trace) = pixel_am(&m, &unit, &cfg).unwrap();
        assert!(
            trace.final_objective() > trace.initial_objective(),
            "{} -> {}",
            trace.initial_objective(),
            trace.final_objective()
        );
    }

    #[test]
    fn trace_steps_strictly_increase_and_are_finite() {
        let m = build_small_cnn((3, 32, 32), 6, 7).unwrap();
        let unit = UnitRef::new("logits", UnitKind::LogitNeuron, 1);
        let mut cfg = AmConfig::fourier(10, 2);
        cfg.trace_every = 3;
        let (_, trace) = feature_vis(&m, &unit, &cfg).unwrap();
        for w in trace.points.windows(2) {
            assert!(w[1].step > w[0].step);
        }
        assert!(trace.points.iter().all(|p| p.objective.is_finite()));
        assert_eq!(trace.points.first().unwrap().step, 0);
        assert_eq!(trace.points.last().unwrap().step, 10);
    }

    #[test]
    fn trace_export_writes_png_and_csv() {
        let dir = std::env::temp_dir().join("amvis_trace_test");
        let _ = std::fs::remove_dir_all(&dir);
        let m = build_small_cnn((3, 32, 32), 6, 7).unwrap();
        let unit = UnitRef::new("logits", UnitKind::LogitNeuron, 1);
        let (_, trace) = feature_vis(&m, &unit, &AmConfig::fourier(2, 2)).unwrap();
        trace.export(&dir).unwrap();
        assert!(dir.join("trace.csv").exists());
        assert!(dir.join("step_000000.png").exists());
        let csv = std::fs::read_to_string(dir.join("trace.csv")).unwrap();
        assert!(csv.starts_with("step,objective\n"));
    }

    #[test]
    fn pixel_output_has_more_high_freq_energy_than_fourier() {
        // untrained model, short budget: the spectral contrast between the
        // two parameterizations is already visible
        let m = build_small_cnn((3, 32, 32), 6, 21).unwrap();
        let unit = UnitRef::new("conv_pw_2", UnitKind::ConvChannel, 1);
        let mut ratios = Vec::new();
        for seed in 0..3 {
            let mut pcfg = AmConfig::pixel(40, seed);
            pcfg.transforms = TransformPolicy::disabled(0);
            let mut fcfg = AmConfig::fourier(40, seed);
            fcfg.transforms = TransformPolicy::disabled(0);
            let (px, _) = pixel_am(&m, &unit, &pcfg).unwrap();
            let (fx, _) = feature_vis(&m, &unit, &fcfg).unwrap();
            ratios.push((
                high_freq_energy_ratio(&px, 0.25).unwrap(),
                high_freq_energy_ratio(&fx, 0.25).unwrap(),
            ));
        }
        let wins = ratios.iter().filter(|(p, f)| p > f).count();
        assert!(wins >= 2, "ratios {:?}", ratios);
    }
}
