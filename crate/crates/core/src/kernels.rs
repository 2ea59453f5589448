//! Raw convolution kernels shared by the structure-map pipeline and the
//! differentiable ops. All functions operate on row-major `f64` slices.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

/// Horizontal-derivative Sobel kernel (responds to vertical edges).
pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
/// Vertical-derivative Sobel kernel.
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

#[inline]
fn clamp_idx(v: isize, max: usize) -> usize {
    v.clamp(0, max as isize - 1) as usize
}

/// 3x3 correlation with replicate padding; output has input dimensions.
///
/// Positive and negative taps accumulate separately so that zero-sum
/// kernels (the Sobel pair) respond with an exact 0.0 on constant inputs.
pub fn conv3x3_replicate(h: usize, w: usize, src: &[f64], k: &[f64; 9]) -> Vec<f64> {
    debug_assert_eq!(src.len(), h * w);
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut pos = 0.0;
            let mut neg = 0.0;
            for di in 0..3usize {
                let si = clamp_idx(i as isize + di as isize - 1, h);
                for dj in 0..3usize {
                    let kv = k[di * 3 + dj];
                    let sj = clamp_idx(j as isize + dj as isize - 1, w);
                    if kv >= 0.0 {
                        pos += kv * src[si * w + sj];
                    } else {
                        neg += -kv * src[si * w + sj];
                    }
                }
            }
            out[i * w + j] = pos - neg;
        }
    }
    out
}

/// Adjoint of [`conv3x3_replicate`]: scatters `gout` back through the
/// correlation, accumulating into `gin` (which must be pre-zeroed by the
/// caller or hold a running sum).
pub fn conv3x3_replicate_adjoint(h: usize, w: usize, gout: &[f64], k: &[f64; 9], gin: &mut [f64]) {
    debug_assert_eq!(gout.len(), h * w);
    debug_assert_eq!(gin.len(), h * w);
    for i in 0..h {
        for j in 0..w {
            let g = gout[i * w + j];
            for di in 0..3usize {
                let si = clamp_idx(i as isize + di as isize - 1, h);
                for dj in 0..3usize {
                    let sj = clamp_idx(j as isize + dj as isize - 1, w);
                    gin[si * w + sj] += k[di * 3 + dj] * g;
                }
            }
        }
    }
}

/// Sobel gradient magnitude with replicate borders.
pub fn sobel_magnitude_raw(h: usize, w: usize, src: &[f64]) -> Vec<f64> {
    let gx = conv3x3_replicate(h, w, src, &SOBEL_X);
    let gy = conv3x3_replicate(h, w, src, &SOBEL_Y);
    gx.iter()
        .zip(gy.iter())
        .map(|(&x, &y)| fmath::sqrt(x * x + y * y))
        .collect()
}

/// Normalized 2-D Gaussian window of side `k` (odd) and width `sigma`.
pub fn gaussian_window(k: usize, sigma: f64) -> Vec<f64> {
    debug_assert!(k % 2 == 1);
    let c = (k / 2) as f64;
    let mut win = Vec::with_capacity(k * k);
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - c) * (i as f64 - c) + (j as f64 - c) * (j as f64 - c);
            let v = fmath::exp(-d2 / (2.0 * sigma * sigma));
            win.push(v);
            sum += v;
        }
    }
    for v in &mut win {
        *v /= sum;
    }
    win
}

/// Valid-region correlation with an arbitrary `k x k` window. Output is
/// `(h-k+1) x (w-k+1)`.
pub fn conv_valid(h: usize, w: usize, src: &[f64], k: usize, win: &[f64]) -> Vec<f64> {
    debug_assert_eq!(src.len(), h * w);
    debug_assert_eq!(win.len(), k * k);
    let oh = h - k + 1;
    let ow = w - k + 1;
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for di in 0..k {
                let row = &src[(i + di) * w + j..(i + di) * w + j + k];
                let wrow = &win[di * k..(di + 1) * k];
                for dj in 0..k {
                    acc += wrow[dj] * row[dj];
                }
            }
            out[i * ow + j] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`], accumulating into `gin` of size `h x w`.
pub fn conv_valid_adjoint(
    h: usize,
    w: usize,
    gout: &[f64],
    k: usize,
    win: &[f64],
    gin: &mut [f64],
) {
    let oh = h - k + 1;
    let ow = w - k + 1;
    debug_assert_eq!(gout.len(), oh * ow);
    debug_assert_eq!(gin.len(), h * w);
    for i in 0..oh {
        for j in 0..ow {
            let g = gout[i * ow + j];
            for di in 0..k {
                let wrow = &win[di * k..(di + 1) * k];
                let grow = &mut gin[(i + di) * w + j..(i + di) * w + j + k];
                for dj in 0..k {
                    grow[dj] += wrow[dj] * g;
                }
            }
        }
    }
}
