//! BT.601 full-range YUV <-> RGB conversion.
//!
//! All channels live in [0,1]; U and V are centered at 0.5. This is the
//! JPEG/YCbCr convention, fixed here so that emitted images are stable.

use crate::error::{Error, Result};
use crate::plane::Plane;

pub const KR: f64 = 0.299;
pub const KG: f64 = 0.587;
pub const KB: f64 = 0.114;

/// Converts one RGB pixel (each channel in [0,1]) to YUV.
#[inline]
pub fn rgb_to_yuv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + KG * g + KB * b;
    let u = (b - y) / (2.0 * (1.0 - KB)) + 0.5;
    let v = (r - y) / (2.0 * (1.0 - KR)) + 0.5;
    (y, u, v)
}

/// Converts one YUV pixel back to RGB, clamping each channel to [0,1].
#[inline]
pub fn yuv_to_rgb(y: f64, u: f64, v: f64) -> (f64, f64, f64) {
    let up = u - 0.5;
    let vp = v - 0.5;
    let r = y + 2.0 * (1.0 - KR) * vp;
    let b = y + 2.0 * (1.0 - KB) * up;
    let g = (y - KR * r - KB * b) / KG;
    (r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
}

/// Plane-level inverse transform: recombines a luminance plane with chroma
/// planes into `[r, g, b]` planes clamped to [0,1].
pub fn yuv_planes_to_rgb(y: &Plane, u: &Plane, v: &Plane) -> Result<[Plane; 3]> {
    if !y.same_shape(u) || !y.same_shape(v) {
        return Err(Error::ShapeMismatch {
            context: "yuv planes must share dimensions",
        });
    }
    let (h, w) = (y.h(), y.w());
    let mut r = Plane::zeros(h, w);
    let mut g = Plane::zeros(h, w);
    let mut b = Plane::zeros(h, w);
    for idx in 0..h * w {
        let (rv, gv, bv) = yuv_to_rgb(y.data()[idx], u.data()[idx], v.data()[idx]);
        r.data_mut()[idx] = rv;
        g.data_mut()[idx] = gv;
        b.data_mut()[idx] = bv;
    }
    Ok([r, g, b])
}

/// Plane-level forward transform.
pub fn rgb_planes_to_yuv(r: &Plane, g: &Plane, b: &Plane) -> Result<[Plane; 3]> {
    if !r.same_shape(g) || !r.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: "rgb planes must share dimensions",
        });
    }
    let (h, w) = (r.h(), r.w());
    let mut y = Plane::zeros(h, w);
    let mut u = Plane::zeros(h, w);
    let mut v = Plane::zeros(h, w);
    for idx in 0..h * w {
        let (yv, uv, vv) = rgb_to_yuv(r.data()[idx], g.data()[idx], b.data()[idx]);
        y.data_mut()[idx] = yv;
        u.data_mut()[idx] = uv;
        v.data_mut()[idx] = vv;
    }
    Ok([y, u, v])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn white_is_max_luma_neutral_chroma() {
        let (y, u, v) = rgb_to_yuv(1.0, 1.0, 1.0);
        assert!((y - 1.0).abs() < 1e-12);
        assert!((u - 0.5).abs() < 1e-12);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn neutral_chroma_round_trips_gray() {
        let (r, g, b) = yuv_to_rgb(1.0, 0.5, 0.5);
        assert_eq!((r, g, b), (1.0, 1.0, 1.0));
        let (r, g, b) = yuv_to_rgb(0.0, 0.5, 0.5);
        assert_eq!((r, g, b), (0.0, 0.0, 0.0));
    }

    #[test]
    fn matches_matrix_oracle() {
        // Independent 3x3 matrix application with the published BT.601
        // coefficients.
        let (r, g, b) = (81.0 / 255.0, 90.0 / 255.0, 38.0 / 255.0);
        let y_oracle = 0.299 * r + 0.587 * g + 0.114 * b;
        let u_oracle = -0.168_735_891_647_855_6 * r - 0.331_264_108_352_144_4 * g + 0.5 * b + 0.5;
        let v_oracle = 0.5 * r - 0.418_687_589_158_345_1 * g - 0.081_312_410_841_654_9 * b + 0.5;
        let (y, u, v) = rgb_to_yuv(r, g, b);
        assert!((y - y_oracle).abs() < 1e-3);
        assert!((u - u_oracle).abs() < 1e-3);
        assert!((v - v_oracle).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn round_trip_within_two_lsb(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (y, u, v) = rgb_to_yuv(r, g, b);
            let (r2, g2, b2) = yuv_to_rgb(y, u, v);
            let tol = 2.0 / 255.0;
            prop_assert!((r - r2).abs() <= tol);
            prop_assert!((g - g2).abs() <= tol);
            prop_assert!((b - b2).abs() <= tol);
        }
    }
}
