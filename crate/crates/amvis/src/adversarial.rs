//! Targeted adversarial attacks: TV-regularized raw-gradient ascent on a
//! target logit with two-step projection (L-inf ball clip, then valid-range
//! clamp).

use crate::error::{AmvisError, Result};
use crate::models::ModelGraph;
use crate::objectives::{objective_on_tape, UnitKind, UnitRef};
use crate::tensor::tape::{Tape, VarId};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdvConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub steps: usize,
    pub target_class: usize,
    /// L1 of forward differences by default; squared-sum-root variant when set.
    pub isotropic_tv: bool,
    /// Divide the gradient by its max-abs before stepping.
    pub normalize_grad: bool,
}

impl AdvConfig {
    fn preset(epsilon: f64, target_class: usize) -> AdvConfig {
        AdvConfig {
            epsilon,
            alpha: 0.01,
            lambda: 1e-4,
            steps: 30,
            target_class,
            isotropic_tv: false,
            normalize_grad: false,
        }
    }

    /// Tight-budget preset: epsilon 0.01, alpha 0.01, lambda 1e-4, 30 steps.
    pub fn resnet_preset(target_class: usize) -> AdvConfig {
        AdvConfig::preset(0.01, target_class)
    }

    /// Loose-budget preset: epsilon 0.05, same step schedule.
    pub fn vit_preset(target_class: usize) -> AdvConfig {
        AdvConfig::preset(0.05, target_class)
    }

    fn validate(&self, classes: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(AmvisError::ModelConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0) {
            return Err(AmvisError::ModelConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.lambda < 0.0 {
            return Err(AmvisError::ModelConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.steps == 0 {
            return Err(AmvisError::ModelConfig("steps must be >= 1".into()));
        }
        if self.target_class >= classes {
            return Err(AmvisError::LabelOutOfRange {
                label: self.target_class,
                classes,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub x_adv: Tensor,
    pub predicted: usize,
    pub logit_trace: Vec<f64>,
    pub linf: f64,
    pub tv: f64,
    pub success: bool,
}

/// Anisotropic total variation of a [C,H,W] tensor as a tape op chain:
/// sum of |forward differences| along H and W over all channels.
pub fn tv_on_tape(tape: &mut Tape, delta: VarId, isotropic: bool) -> Result<VarId> {
    let shape = tape.shape(delta).to_vec();
    if shape.len() != 3 {
        return Err(AmvisError::ShapeMismatch {
            op: "tv",
            detail: format!("expected [C,H,W], got {:?}", shape),
        });
    }
    let (h, w) = (shape[1], shape[2]);
    let mut terms = Vec::new();
    if h > 1 {
        let hi = tape.narrow(delta, 1, 1, h - 1)?;
        let lo = tape.narrow(delta, 1, 0, h - 1)?;
        terms.push(tape.sub(hi, lo)?);
    }
    if w > 1 {
        let hi = tape.narrow(delta, 2, 1, w - 1)?;
        let lo = tape.narrow(delta, 2, 0, w - 1)?;
        terms.push(tape.sub(hi, lo)?);
    }
    let mut total: Option<VarId> = None;
    for d in terms {
        let mag = if isotropic {
            let sq = tape.mul(d, d)?;
            let eps = tape.add_scalar(sq, 1e-12);
            tape.sqrt(eps)
        } else {
            tape.abs(d)
        };
        let s = tape.sum_all(mag)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => {
            let zero = tape.leaf(Tensor::scalar(0.0), false);
            Ok(zero)
        }
    }
}

/// Plain-value TV for reporting.
pub fn tv(delta: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let d = tape.leaf(delta.clone(), false);
    let t = tv_on_tape(&mut tape, d, false)?;
    Ok(tape.value(t).scalar_value())
}

/// Two-step projection onto the constraint set: clip the perturbation to the
/// L-inf ball of radius epsilon, then clamp pixels to [0,1].
pub fn project(x: &Tensor, x_orig: &Tensor, epsilon: f64) -> Result<Tensor> {
    if x.shape != x_orig.shape {
        return Err(AmvisError::ShapeMismatch {
            op: "project",
            detail: format!("x {:?} vs x_orig {:?}", x.shape, x_orig.shape),
        });
    }
    let data = x
        .data
        .iter()
        .zip(&x_orig.data)
        .map(|(&v, &o)| (o + (v - o).clamp(-epsilon, epsilon)).clamp(0.0, 1.0))
        .collect();
    Tensor::from_vec(x.shape.clone(), data)
}

/// Targeted attack on one [3,H,W] image, starting exactly at the original.
pub fn attack(model: &ModelGraph, x_orig: &Tensor, cfg: &AdvConfig) -> Result<AttackResult> {
    cfg.validate(model.classes)?;
    let (c, h, w) = model.input;
    if x_orig.shape != [c, h, w] {
        return Err(AmvisError::ShapeMismatch {
            op: "attack",
            detail: format!("image {:?}, model expects [{},{},{}]", x_orig.shape, c, h, w),
        });
    }
    let unit = UnitRef::new("logits", UnitKind::LogitNeuron, cfg.target_class);
    let mut x = x_orig.clone();
    let mut logit_trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let batch = tape.reshape(xv, &[1, c, h, w])?;
        let target_logit = objective_on_tape(model, &mut tape, batch, &unit)?;
        logit_trace.push(tape.value(target_logit).scalar_value());
        let orig = tape.leaf(x_orig.clone(), false);
        let delta = tape.sub(xv, orig)?;
        let smooth = tv_on_tape(&mut tape, delta, cfg.isotropic_tv)?;
        let penalty = tape.scale(smooth, cfg.lambda);
        let obj = tape.sub(target_logit, penalty)?;
        tape.backward(obj)?;
        let g = tape.grad_tensor(xv).expect("attack input grad");
        if !g.is_finite() {
            return Err(AmvisError::DivergedAttack { step });
        }
        let scale = if cfg.normalize_grad {
            let m = g.max_abs();
            if m > 0.0 {
                1.0 / m
            } else {
                0.0
            }
        } else {
            1.0
        };
        for (xi, gi) in x.data.iter_mut().zip(&g.data) {
            *xi += cfg.alpha * scale * gi;
        }
        x = project(&x, x_orig, cfg.epsilon)?;
    }
    let predicted = model.predict(std::slice::from_ref(&x))?[0];
    let final_logit = {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let batch = tape.reshape(xv, &[1, c, h, w])?;
        let t = objective_on_tape(model, &mut tape, batch, &unit)?;
        tape.value(t).scalar_value()
    };
    logit_trace.push(final_logit);
    let delta = Tensor::from_vec(
        x.shape.clone(),
        x.data.iter().zip(&x_orig.data).map(|(a, b)| a - b).collect(),
    )?;
    Ok(AttackResult {
        predicted,
        success: predicted == cfg.target_class,
        linf: delta.max_abs(),
        tv: tv(&delta)?,
        logit_trace,
        x_adv: x,
    })
}

#[derive(Clone, Debug)]
pub struct AblationPair {
    pub image_index: usize,
    pub tv_regularized: f64,
    pub tv_unregularized: f64,
    pub success_regularized: bool,
    pub success_unregularized: bool,
}

/// Runs the configured attack and its lambda=0 twin on each image.
pub fn smoothness_ablation(
    model: &ModelGraph,
    images: &[Tensor],
    cfg: &AdvConfig,
) -> Result<Vec<AblationPair>> {
    let zero = AdvConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    let mut out = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let a = attack(model, img, cfg)?;
        let b = attack(model, img, &zero)?;
        out.push(AblationPair {
            image_index: i,
            tv_regularized: a.tv,
            tv_unregularized: b.tv,
            success_regularized: a.success,
            success_unregularized: b.success,
        });
    }
    Ok(out)
}
