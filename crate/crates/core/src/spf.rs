//! Structure-preserving fusion: unique-structure masks, feature
//! enhancement, and per-scale merging of the two modality pyramids.
//!
//! Masks come from the classical ground-truth structure pyramids, never
//! from the soft predictions, so the fusion path carries no binarization
//! nonlinearity on the gradient path.

use alloc::vec::Vec;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::structmap::StructurePyramid;
use crate::tensor::Tensor;

/// Disjoint per-modality unique-structure masks and their union.
///
/// `m_ir` marks structures present only in the infrared map, `m_vi` those
/// only in the visible map; the union is their sum, which equals the
/// J-operator of the two inputs on binary maps.
#[derive(Clone, Debug, PartialEq)]
pub struct UniqueStructureMasks {
    pub m_ir: Plane,
    pub m_vi: Plane,
    pub m_union: Plane,
}

/// (1-x)y + (1-y)x elementwise; exactly XOR on binary inputs.
pub fn j_operator(x: &Plane, y: &Plane) -> Result<Plane> {
    if !x.same_shape(y) {
        return Err(Error::ShapeMismatch {
            context: "j_operator inputs differ in shape",
        });
    }
    let data = x
        .data()
        .iter()
        .zip(y.data().iter())
        .map(|(&a, &b)| (1.0 - a) * b + (1.0 - b) * a)
        .collect();
    Plane::new(x.h(), x.w(), data)
}

/// Splits two binary structure maps into disjoint unique masks.
pub fn split_unique_masks(s_ir: &Plane, s_vi: &Plane) -> Result<UniqueStructureMasks> {
    if !s_ir.same_shape(s_vi) {
        return Err(Error::ShapeMismatch {
            context: "structure maps differ in shape",
        });
    }
    if !s_ir.is_binary() || !s_vi.is_binary() {
        return Err(Error::NonBinary {
            context: "split_unique_masks needs binary structure maps",
        });
    }
    let n = s_ir.len();
    let mut m_ir = Plane::zeros(s_ir.h(), s_ir.w());
    let mut m_vi = Plane::zeros(s_ir.h(), s_ir.w());
    let mut m_union = Plane::zeros(s_ir.h(), s_ir.w());
    for p in 0..n {
        let a = s_ir.data()[p];
        let b = s_vi.data()[p];
        let mi = a * (1.0 - b);
        let mv = b * (1.0 - a);
        m_ir.data_mut()[p] = mi;
        m_vi.data_mut()[p] = mv;
        m_union.data_mut()[p] = mi + mv;
    }
    Ok(UniqueStructureMasks { m_ir, m_vi, m_union })
}

/// Enhances one pyramid level of each modality:
///
/// ```text
/// enhanced_ir = s_ir + (1 - m_ir) * f_ir + m_vi * f_vi
/// enhanced_vi = s_vi + m_ir * f_ir + (1 - m_vi) * f_vi
/// ```
///
/// Structure maps broadcast across channels as an additive bias; masks
/// broadcast multiplicatively.
pub fn enhance_features(
    f_ir: &Tensor,
    f_vi: &Tensor,
    s_ir: &Plane,
    s_vi: &Plane,
    masks: &UniqueStructureMasks,
) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = match f_ir.shape() {
        [c, h, w] => (*c, *h, *w),
        _ => {
            return Err(Error::ShapeMismatch {
                context: "feature level must be [C,H,W]",
            })
        }
    };
    if f_vi.shape() != [c, h, w] {
        return Err(Error::ShapeMismatch {
            context: "feature levels differ in shape",
        });
    }
    if (s_ir.h(), s_ir.w()) != (h, w) || !s_ir.same_shape(s_vi) || !masks.m_ir.same_shape(s_ir) {
        return Err(Error::ShapeMismatch {
            context: "structure maps do not match feature level",
        });
    }
    let n = h * w;
    let mut out_ir = Tensor::zeros(&[c, h, w]);
    let mut out_vi = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let base = ch * n;
        for p in 0..n {
            let mi = masks.m_ir.data()[p];
            let mv = masks.m_vi.data()[p];
            let fi = f_ir.data()[base + p];
            let fv = f_vi.data()[base + p];
            out_ir.data_mut()[base + p] = s_ir.data()[p] + (1.0 - mi) * fi + mv * fv;
            out_vi.data_mut()[base + p] = s_vi.data()[p] + mi * fi + (1.0 - mv) * fv;
        }
    }
    Ok((out_ir, out_vi))
}

/// Per-scale structure-preserving merge: masks from the ground-truth
/// pyramids, enhancement, then an elementwise sum across modalities.
pub fn fuse_pyramids(
    pyr_ir: &[Tensor],
    pyr_vi: &[Tensor],
    struct_ir: &StructurePyramid,
    struct_vi: &StructurePyramid,
) -> Result<Vec<Tensor>> {
    if pyr_ir.len() != pyr_vi.len()
        || pyr_ir.len() != struct_ir.n_levels()
        || pyr_ir.len() != struct_vi.n_levels()
    {
        return Err(Error::ShapeMismatch {
            context: "pyramids differ in level count",
        });
    }
    let mut fused = Vec::with_capacity(pyr_ir.len());
    for k in 0..pyr_ir.len() {
        let s_ir = struct_ir.level(k);
        let s_vi = struct_vi.level(k);
        let masks = split_unique_masks(s_ir, s_vi)?;
        let (e_ir, e_vi) = enhance_features(&pyr_ir[k], &pyr_vi[k], s_ir, s_vi, &masks)?;
        let mut level = e_ir;
        for (a, b) in level.data_mut().iter_mut().zip(e_vi.data()) {
            *a += b;
        }
        fused.push(level);
    }
    Ok(fused)
}

/// Tape counterpart of [`enhance_features`] for one level. The structure
/// maps and masks enter the graph as constants.
pub fn enhance_on_tape(
    tape: &mut Tape,
    f_ir: NodeId,
    f_vi: NodeId,
    s_ir: &Plane,
    s_vi: &Plane,
) -> Result<(NodeId, NodeId)> {
    let masks = split_unique_masks(s_ir, s_vi)?;
    let one_minus_mi = masks.m_ir.map(|v| 1.0 - v);
    let one_minus_mv = masks.m_vi.map(|v| 1.0 - v);

    let s_ir_n = tape.leaf_plane(s_ir, false);
    let s_vi_n = tape.leaf_plane(s_vi, false);
    let mi_n = tape.leaf_plane(&masks.m_ir, false);
    let mv_n = tape.leaf_plane(&masks.m_vi, false);
    let omi_n = tape.leaf_plane(&one_minus_mi, false);
    let omv_n = tape.leaf_plane(&one_minus_mv, false);

    // enhanced_ir = s_ir + (1-m_ir)*f_ir + m_vi*f_vi
    let t1 = tape.mul_bc(f_ir, omi_n)?;
    let t2 = tape.mul_bc(f_vi, mv_n)?;
    let t3 = tape.add(t1, t2)?;
    let e_ir = tape.add_bc(t3, s_ir_n)?;

    // enhanced_vi = s_vi + m_ir*f_ir + (1-m_vi)*f_vi
    let u1 = tape.mul_bc(f_ir, mi_n)?;
    let u2 = tape.mul_bc(f_vi, omv_n)?;
    let u3 = tape.add(u1, u2)?;
    let e_vi = tape.add_bc(u3, s_vi_n)?;

    Ok((e_ir, e_vi))
}

/// Enhancement followed by the parameter-free sum merge.
pub fn fuse_level_on_tape(
    tape: &mut Tape,
    f_ir: NodeId,
    f_vi: NodeId,
    s_ir: &Plane,
    s_vi: &Plane,
) -> Result<NodeId> {
    let (e_ir, e_vi) = enhance_on_tape(tape, f_ir, f_vi, s_ir, s_vi)?;
    tape.add(e_ir, e_vi)
}
