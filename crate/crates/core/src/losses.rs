//! The training objective: a Charbonnier structure-reconstruction term
//! plus the fusion terms (SSIM, intensity-smoothness against the
//! elementwise source maximum, and gradient consistency), all
//! differentiable through the tape.
//!
//! Every loss reduces by the mean over elements, which keeps the
//! reconstruction weight meaningful across resolutions.

use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::structmap::StructurePyramid;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// SSIM dynamic range; planes live in [0,1].
pub const SSIM_L: f64 = 1.0;

/// Default trade-off weight for the reconstruction term.
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Default Charbonnier constant.
pub const DEFAULT_EPSILON: f64 = 1.0;

/// Scalar values of one objective evaluation.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub ssim: f64,
    pub smooth: f64,
    pub grad: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl LossBreakdown {
    /// The fusion part of the objective (everything except the weighted
    /// reconstruction term).
    pub fn fus(&self) -> f64 {
        self.ssim + self.smooth + self.grad
    }

    pub fn check_invariants(&self) -> Result<()> {
        let recomposed = self.alpha * self.rec + self.fus();
        if (self.total - recomposed).abs() > 1e-6 {
            return Err(Error::OutOfRange {
                context: "loss total does not decompose into its parts",
            });
        }
        if !(0.0..=2.0 + 1e-9).contains(&self.ssim) || self.smooth < 0.0 || self.grad < 0.0 {
            return Err(Error::OutOfRange {
                context: "loss component outside its valid range",
            });
        }
        if !self.total.is_finite() {
            return Err(Error::NonFinite {
                what: alloc::string::String::from("loss total"),
            });
        }
        Ok(())
    }
}

/// Assembles a breakdown from component values.
pub fn total_loss(
    rec: f64,
    ssim: f64,
    smooth: f64,
    grad: f64,
    alpha: f64,
    epsilon: f64,
) -> LossBreakdown {
    LossBreakdown {
        total: alpha * rec + ssim + smooth + grad,
        rec,
        ssim,
        smooth,
        grad,
        alpha,
        epsilon,
    }
}

// ---------------------------------------------------------------------------
// tape builders
// ---------------------------------------------------------------------------

/// Charbonnier reconstruction over a list of (soft prediction, binary
/// ground truth) map pairs: mean over every element of
/// sqrt((pred - gt)^2 + eps^2).
pub fn charbonnier_on_tape(
    tape: &mut Tape,
    preds: &[NodeId],
    gts: &[&Plane],
    epsilon: f64,
) -> Result<NodeId> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::ShapeMismatch {
            context: "charbonnier needs matching prediction/target lists",
        });
    }
    let eps2 = epsilon * epsilon;
    let mut total_count = 0usize;
    let mut sum: Option<NodeId> = None;
    for (&pred, gt) in preds.iter().zip(gts.iter()) {
        if tape.value(pred).shape() != [gt.h(), gt.w()] {
            return Err(Error::ShapeMismatch {
                context: "prediction level does not match target level",
            });
        }
        let gt_node = tape.leaf_plane(gt, false);
        let d = tape.sub(pred, gt_node)?;
        let sq = tape.square(d);
        let ch = tape.sqrt_shift(sq, eps2);
        let s = tape.sum_all(ch);
        total_count += gt.len();
        sum = Some(match sum {
            None => s,
            Some(prev) => tape.add(prev, s)?,
        });
    }
    Ok(tape.scale(sum.expect("non-empty"), 1.0 / total_count as f64))
}

/// Mean SSIM between two plane nodes over the valid filter region.
pub fn ssim_scalar_on_tape(tape: &mut Tape, a: NodeId, b: NodeId) -> Result<NodeId> {
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);

    let mu_a = tape.gauss_valid(a, SSIM_WINDOW, SSIM_SIGMA)?;
    let mu_b = tape.gauss_valid(b, SSIM_WINDOW, SSIM_SIGMA)?;
    let a2 = tape.square(a);
    let b2 = tape.square(b);
    let ab = tape.mul(a, b)?;
    let e_a2 = tape.gauss_valid(a2, SSIM_WINDOW, SSIM_SIGMA)?;
    let e_b2 = tape.gauss_valid(b2, SSIM_WINDOW, SSIM_SIGMA)?;
    let e_ab = tape.gauss_valid(ab, SSIM_WINDOW, SSIM_SIGMA)?;

    let mu_a2 = tape.square(mu_a);
    let mu_b2 = tape.square(mu_b);
    let mu_ab = tape.mul(mu_a, mu_b)?;
    let sig_a = tape.sub(e_a2, mu_a2)?;
    let sig_b = tape.sub(e_b2, mu_b2)?;
    let sig_ab = tape.sub(e_ab, mu_ab)?;

    let two_mu = tape.scale(mu_ab, 2.0);
    let num1 = tape.add_scalar(two_mu, c1);
    let two_sig = tape.scale(sig_ab, 2.0);
    let num2 = tape.add_scalar(two_sig, c2);
    let num = tape.mul(num1, num2)?;

    let mu_sum = tape.add(mu_a2, mu_b2)?;
    let den1 = tape.add_scalar(mu_sum, c1);
    let sig_sum = tape.add(sig_a, sig_b)?;
    let den2 = tape.add_scalar(sig_sum, c2);
    let den = tape.mul(den1, den2)?;

    let map = tape.div(num, den)?;
    Ok(tape.mean_all(map))
}

/// 1 - (SSIM(fused, ir) + SSIM(fused, vi)) / 2.
pub fn ssim_loss_on_tape(tape: &mut Tape, fused: NodeId, ir: NodeId, vi: NodeId) -> Result<NodeId> {
    let s1 = ssim_scalar_on_tape(tape, fused, ir)?;
    let s2 = ssim_scalar_on_tape(tape, fused, vi)?;
    let s = tape.add(s1, s2)?;
    let half = tape.scale(s, -0.5);
    Ok(tape.add_scalar(half, 1.0))
}

/// Mean |fused - max(ir, vi)|.
pub fn smooth_loss_on_tape(
    tape: &mut Tape,
    fused: NodeId,
    ir: NodeId,
    vi: NodeId,
) -> Result<NodeId> {
    let m = tape.max(ir, vi)?;
    let d = tape.sub(fused, m)?;
    let a = tape.abs(d);
    Ok(tape.mean_all(a))
}

/// Mean |grad(fused) - max(grad(ir), grad(vi))| where grad is the Sobel
/// magnitude used throughout the structure pipeline.
pub fn grad_loss_on_tape(tape: &mut Tape, fused: NodeId, ir: NodeId, vi: NodeId) -> Result<NodeId> {
    let gf = tape.sobel_mag(fused)?;
    let gi = tape.sobel_mag(ir)?;
    let gv = tape.sobel_mag(vi)?;
    let m = tape.max(gi, gv)?;
    let d = tape.sub(gf, m)?;
    let a = tape.abs(d);
    Ok(tape.mean_all(a))
}

/// total = alpha * rec + ssim + smooth + grad (rec optional for ablations).
pub fn total_on_tape(
    tape: &mut Tape,
    rec: Option<NodeId>,
    ssim: NodeId,
    smooth: NodeId,
    grad: NodeId,
    alpha: f64,
) -> Result<NodeId> {
    let sg = tape.add(smooth, grad)?;
    let fus = tape.add(ssim, sg)?;
    match rec {
        Some(r) => {
            let weighted = tape.scale(r, alpha);
            tape.add(weighted, fus)
        }
        None => Ok(fus),
    }
}

// ---------------------------------------------------------------------------
// pure evaluation wrappers
// ---------------------------------------------------------------------------

fn check_triple(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<()> {
    if !fused.same_shape(ir) || !fused.same_shape(vi) {
        return Err(Error::ShapeMismatch {
            context: "loss inputs differ in shape",
        });
    }
    Ok(())
}

/// Charbonnier reconstruction across both modalities and all levels.
pub fn charbonnier_rec(
    pred_ir: &[Plane],
    pred_vi: &[Plane],
    gt_ir: &StructurePyramid,
    gt_vi: &StructurePyramid,
    epsilon: f64,
) -> Result<f64> {
    if pred_ir.len() != gt_ir.n_levels() || pred_vi.len() != gt_vi.n_levels() {
        return Err(Error::ShapeMismatch {
            context: "prediction pyramids do not match target level counts",
        });
    }
    for (pred, gt) in pred_ir
        .iter()
        .zip(gt_ir.levels())
        .chain(pred_vi.iter().zip(gt_vi.levels()))
    {
        if !pred.same_shape(gt) {
            return Err(Error::ShapeMismatch {
                context: "prediction level does not match target level",
            });
        }
        if !gt.is_binary() {
            return Err(Error::NonBinary {
                context: "charbonnier targets must be binary",
            });
        }
        if pred.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::OutOfRange {
                context: "soft predictions must lie in [0,1]",
            });
        }
    }
    let mut tape = Tape::new();
    let mut pred_nodes = Vec::new();
    let mut gt_refs: Vec<&Plane> = Vec::new();
    for (pred, gt) in pred_ir
        .iter()
        .zip(gt_ir.levels())
        .chain(pred_vi.iter().zip(gt_vi.levels()))
    {
        pred_nodes.push(tape.leaf_plane(pred, false));
        gt_refs.push(gt);
    }
    let node = charbonnier_on_tape(&mut tape, &pred_nodes, &gt_refs, epsilon)?;
    Ok(tape.value(node).item())
}

/// SSIM fusion loss against both sources.
pub fn ssim_loss(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<f64> {
    check_triple(fused, ir, vi)?;
    let mut tape = Tape::new();
    let f = tape.leaf_plane(fused, false);
    let i = tape.leaf_plane(ir, false);
    let v = tape.leaf_plane(vi, false);
    let node = ssim_loss_on_tape(&mut tape, f, i, v)?;
    Ok(tape.value(node).item())
}

/// Mean SSIM between two planes (shared machinery with the loss).
pub fn ssim_value(a: &Plane, b: &Plane) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: "ssim inputs differ in shape",
        });
    }
    let mut tape = Tape::new();
    let an = tape.leaf_plane(a, false);
    let bn = tape.leaf_plane(b, false);
    let node = ssim_scalar_on_tape(&mut tape, an, bn)?;
    Ok(tape.value(node).item())
}

/// Intensity loss against the elementwise source maximum.
pub fn smooth_loss(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<f64> {
    check_triple(fused, ir, vi)?;
    let mut tape = Tape::new();
    let f = tape.leaf_plane(fused, false);
    let i = tape.leaf_plane(ir, false);
    let v = tape.leaf_plane(vi, false);
    let node = smooth_loss_on_tape(&mut tape, f, i, v)?;
    Ok(tape.value(node).item())
}

/// Gradient-consistency loss against the sharper source edge.
pub fn grad_loss(fused: &Plane, ir: &Plane, vi: &Plane) -> Result<f64> {
    check_triple(fused, ir, vi)?;
    let mut tape = Tape::new();
    let f = tape.leaf_plane(fused, false);
    let i = tape.leaf_plane(ir, false);
    let v = tape.leaf_plane(vi, false);
    let node = grad_loss_on_tape(&mut tape, f, i, v)?;
    Ok(tape.value(node).item())
}
