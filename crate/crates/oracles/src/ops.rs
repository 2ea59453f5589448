//! Scalar-loop references for the structure-map and fusion arithmetic.

/// 3x3 correlation with replicate borders, one pixel at a time.
pub fn conv3x3_replicate(h: usize, w: usize, src: &[f64], k: &[f64; 9]) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for di in -1..=1isize {
                for dj in -1..=1isize {
                    let si = (i + di).clamp(0, h as isize - 1) as usize;
                    let sj = (j + dj).clamp(0, w as isize - 1) as usize;
                    acc += k[((di + 1) * 3 + (dj + 1)) as usize] * src[si * w + sj];
                }
            }
            out[i as usize * w + j as usize] = acc;
        }
    }
    out
}

/// Sobel gradient magnitude via two explicit 3x3 correlations.
pub fn sobel_magnitude(h: usize, w: usize, src: &[f64]) -> Vec<f64> {
    let kx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let ky = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let gx = conv3x3_replicate(h, w, src, &kx);
    let gy = conv3x3_replicate(h, w, src, &ky);
    (0..h * w)
        .map(|i| (gx[i] * gx[i] + gy[i] * gy[i]).sqrt())
        .collect()
}

/// Per-pixel application of the global-mean threshold. `paper_literal`
/// assigns 1 where `grad - mean <= 0`; otherwise 1 where `grad >= mean`.
pub fn binarize_by_mean(grad: &[f64], paper_literal: bool) -> Vec<f64> {
    let mut sum = 0.0;
    for &g in grad {
        sum += g;
    }
    let mean = if grad.is_empty() { 0.0 } else { sum / grad.len() as f64 };
    grad.iter()
        .map(|&g| {
            let hit = if paper_literal { g - mean <= 0.0 } else { g >= mean };
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// 2x2 average pooling with floor semantics; returns (h, w, data).
pub fn avg_pool2(h: usize, w: usize, src: &[f64]) -> (usize, usize, Vec<f64>) {
    let h2 = h / 2;
    let w2 = w / 2;
    let mut out = vec![0.0; h2 * w2];
    for i in 0..h2 {
        for j in 0..w2 {
            out[i * w2 + j] = 0.25
                * (src[(2 * i) * w + 2 * j]
                    + src[(2 * i) * w + 2 * j + 1]
                    + src[(2 * i + 1) * w + 2 * j]
                    + src[(2 * i + 1) * w + 2 * j + 1]);
        }
    }
    (h2, w2, out)
}

/// (1-x)y + (1-y)x, elementwise; XOR on binary inputs.
pub fn j_operator(x: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y.iter())
        .map(|(&a, &b)| (1.0 - a) * b + (1.0 - b) * a)
        .collect()
}

/// The feature-enhancement formulas, evaluated pixel by pixel.
///
/// Inputs are `c` feature channels of `n` pixels each (`f_*` has length
/// c*n), binary structure maps `s_*` of length n, and the disjoint unique
/// masks `m_ir = s_ir*(1-s_vi)`, `m_vi = s_vi*(1-s_ir)` are derived here.
/// Returns (enhanced_ir, enhanced_vi):
///   enhanced_ir = s_ir + (1 - m_ir)*f_ir + m_vi*f_vi
///   enhanced_vi = s_vi + m_ir*f_ir + (1 - m_vi)*f_vi
pub fn enhance_features(
    c: usize,
    n: usize,
    f_ir: &[f64],
    f_vi: &[f64],
    s_ir: &[f64],
    s_vi: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(f_ir.len(), c * n);
    assert_eq!(f_vi.len(), c * n);
    assert_eq!(s_ir.len(), n);
    assert_eq!(s_vi.len(), n);
    let mut out_ir = vec![0.0; c * n];
    let mut out_vi = vec![0.0; c * n];
    for ch in 0..c {
        for p in 0..n {
            let m_ir = s_ir[p] * (1.0 - s_vi[p]);
            let m_vi = s_vi[p] * (1.0 - s_ir[p]);
            let idx = ch * n + p;
            out_ir[idx] = s_ir[p] + (1.0 - m_ir) * f_ir[idx] + m_vi * f_vi[idx];
            out_vi[idx] = s_vi[p] + m_ir * f_ir[idx] + (1.0 - m_vi) * f_vi[idx];
        }
    }
    (out_ir, out_vi)
}

/// Mean over every element of sqrt((pred - gt)^2 + eps^2), across a list of
/// (pred, gt) map pairs of arbitrary sizes.
pub fn charbonnier_mean(pairs: &[(&[f64], &[f64])], eps: f64) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pred, gt) in pairs {
        assert_eq!(pred.len(), gt.len());
        for i in 0..pred.len() {
            let d = pred[i] - gt[i];
            sum += (d * d + eps * eps).sqrt();
        }
        count += pred.len();
    }
    sum / count as f64
}
