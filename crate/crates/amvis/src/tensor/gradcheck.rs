//! Central finite-difference gradient checking.
//!
//! The checker is independent of the backward pass it verifies: it only
//! uses forward evaluations of the supplied function.

use crate::error::Result;
use crate::tensor::tape::{Tape, VarId};
use crate::tensor::Tensor;

pub struct GradCheckReport {
    /// max over checked coordinates of |analytic - central| / max(1, |analytic|),
    /// kink-flagged coordinates excluded
    pub max_rel_err: f64,
    /// coordinates excluded because the two one-sided derivatives disagree
    /// (nondifferentiable point within the probe interval)
    pub flagged: Vec<usize>,
    pub checked: usize,
}

/// Checks the analytic gradient of `f` at `x` against central differences
/// over every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, VarId) -> Result<VarId>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_coords(f, x, h, &coords)
}

/// Same check restricted to a subset of coordinates; used for inputs too
/// large to probe exhaustively.
pub fn grad_check_coords<F>(f: F, x: &Tensor, h: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, VarId) -> Result<VarId>,
{
    // analytic gradient
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape.grad(xv).expect("input gradient").to_vec();

    let eval = |xt: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.leaf(xt.clone(), false);
        let out = f(&mut tape, xv)?;
        Ok(tape.value(out).scalar_value())
    };

    let f0 = eval(x)?;
    let mut max_rel = 0.0f64;
    let mut flagged = Vec::new();
    let mut checked = 0usize;
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data[i] = orig;

        let central = (fp - fm) / (2.0 * h);
        let fwd = (fp - f0) / h;
        let bwd = (f0 - fm) / h;
        // one-sided derivatives disagreeing far beyond the O(h) smooth
        // discrepancy marks a kink inside the probe interval
        let scale = 1.0f64.max(fwd.abs()).max(bwd.abs());
        if (fwd - bwd).abs() > 1e-2 * scale {
            flagged.push(i);
            continue;
        }
        let rel = (analytic[i] - central).abs() / 1.0f64.max(analytic[i].abs());
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        flagged,
        checked,
    })
}
