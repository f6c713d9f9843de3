//! Unit addressing and the scalar maximization objectives: raw pre-softmax
//! logit neurons, spatial means of conv channels, and token means of
//! transformer hidden dimensions.

use crate::error::{AmvisError, Result};
use crate::models::ModelGraph;
use crate::tensor::tape::{Tape, VarId};
use crate::tensor::Tensor;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    LogitNeuron,
    ConvChannel,
    VitHiddenDim,
}

impl UnitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnitKind::LogitNeuron => "logit-neuron",
            UnitKind::ConvChannel => "channel",
            UnitKind::VitHiddenDim => "hidden-dim",
        }
    }

    /// Rank of the batched tap this kind addresses.
    fn expected_rank(&self) -> usize {
        match self {
            UnitKind::LogitNeuron => 2,
            UnitKind::VitHiddenDim => 3,
            UnitKind::ConvChannel => 4,
        }
    }
}

/// Addresses one unit as "tap:kind:index", e.g. "conv_pw_3:channel:17" or
/// "logits:logit-neuron:2".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitRef {
    pub tap: String,
    pub kind: UnitKind,
    pub index: usize,
}

impl UnitRef {
    pub fn new(tap: impl Into<String>, kind: UnitKind, index: usize) -> UnitRef {
        UnitRef {
            tap: tap.into(),
            kind,
            index,
        }
    }
}

impl fmt::Display for UnitRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.tap, self.kind.as_str(), self.index)
    }
}

impl FromStr for UnitRef {
    type Err = AmvisError;

    fn from_str(s: &str) -> Result<UnitRef> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || AmvisError::InvalidUnitRef(s.to_string());
        if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
            return Err(bad());
        }
        let kind = match parts[1] {
            "logit-neuron" => UnitKind::LogitNeuron,
            "channel" | "conv-channel" => UnitKind::ConvChannel,
            "hidden-dim" | "vit-hidden-dim" => UnitKind::VitHiddenDim,
            _ => return Err(bad()),
        };
        let index = parts[0]
            .is_empty()
            .then_some(Err(bad()))
            .unwrap_or_else(|| parts[2].parse().map_err(|_| bad()))?;
        Ok(UnitRef {
            tap: parts[0].to_string(),
            kind,
            index,
        })
    }
}

/// Builds the scalar objective on a tape from an already-recorded batched
/// input variable (possibly post-transform); returns a live scalar VarId so
/// gradients flow back into `x`.
pub fn objective_on_tape(
    model: &ModelGraph,
    tape: &mut Tape,
    x: VarId,
    unit: &UnitRef,
) -> Result<VarId> {
    let tap = model.tap_info(&unit.tap)?;
    let rank = tap.shape.len() + 1; // batched rank
    if rank != unit.kind.expected_rank() {
        return Err(AmvisError::UnitKindMismatch {
            tap: unit.tap.clone(),
            kind: unit.kind.as_str().to_string(),
            rank,
        });
    }
    let axis = match unit.kind {
        UnitKind::LogitNeuron | UnitKind::ConvChannel => 1,
        UnitKind::VitHiddenDim => 2,
    };
    let extent = tap.shape[axis - 1];
    if unit.index >= extent {
        return Err(AmvisError::UnitIndexOutOfRange {
            tap: unit.tap.clone(),
            index: unit.index,
            extent,
        });
    }
    let act = model.activations_on_tape(tape, x, &unit.tap)?;
    let slice = tape.select(act, axis, unit.index)?;
    tape.mean_all(slice)
}

/// Scalar objective value f(x) for a single [3,H,W] image.
pub fn objective(model: &ModelGraph, x: &Tensor, unit: &UnitRef) -> Result<f64> {
    let (c, h, w) = model.input;
    if x.shape != [c, h, w] {
        return Err(AmvisError::ShapeMismatch {
            op: "objective",
            detail: format!("image {:?}, model expects [{},{},{}]", x.shape, c, h, w),
        });
    }
    let batch = Tensor::from_vec(vec![1, c, h, w], x.data.clone())?;
    let mut tape = Tape::new();
    let xv = tape.leaf(batch, false);
    let obj = objective_on_tape(model, &mut tape, xv, unit)?;
    Ok(tape.value(obj).scalar_value())
}

/// Exact top-k dataset indices by descending objective, ties broken by
/// ascending index. `k` is clamped to the dataset size.
pub fn top_activating_inputs(
    model: &ModelGraph,
    images: &[Tensor],
    unit: &UnitRef,
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if images.is_empty() {
        return Err(AmvisError::ModelConfig("top-k over an empty dataset".into()));
    }
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        scored.push((i, objective(model, img, unit)?));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k.min(images.len()));
    Ok(scored)
}
