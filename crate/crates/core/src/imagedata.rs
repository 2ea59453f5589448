//! Registered infrared/visible pairs in YUV space: the pipeline's unit of
//! work. Decoding and file handling live in the companion IO crate; this
//! module owns the in-memory representation, registration checks, cropping
//! and padding.

use alloc::string::String;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::plane::Plane;

/// A registered infrared/visible pair. The infrared image contributes a
/// luminance plane; the visible image contributes luminance plus chroma.
/// All planes share dimensions and live in [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub pair_id: String,
    pub ir_y: Plane,
    pub vi_y: Plane,
    pub vi_u: Plane,
    pub vi_v: Plane,
}

impl ImagePair {
    /// Builds a pair, rejecting unregistered dimensions and out-of-range
    /// values. Violations are caught here, never later in the pipeline.
    pub fn new(pair_id: String, ir_y: Plane, vi_y: Plane, vi_u: Plane, vi_v: Plane) -> Result<Self> {
        if !ir_y.same_shape(&vi_y) {
            return Err(Error::Registration {
                ir_h: ir_y.h(),
                ir_w: ir_y.w(),
                vi_h: vi_y.h(),
                vi_w: vi_y.w(),
            });
        }
        if !vi_y.same_shape(&vi_u) || !vi_y.same_shape(&vi_v) {
            return Err(Error::ShapeMismatch {
                context: "visible chroma planes must match luma dimensions",
            });
        }
        for (plane, what) in [
            (&ir_y, "ir_y plane outside [0,1]"),
            (&vi_y, "vi_y plane outside [0,1]"),
            (&vi_u, "vi_u plane outside [0,1]"),
            (&vi_v, "vi_v plane outside [0,1]"),
        ] {
            if plane.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::OutOfRange { context: what });
            }
        }
        Ok(Self {
            pair_id,
            ir_y,
            vi_y,
            vi_u,
            vi_v,
        })
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.ir_y.h()
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.ir_y.w()
    }

    /// Crops an identical window out of every plane.
    pub fn crop_window(&self, top: usize, left: usize, size: usize) -> Result<ImagePair> {
        Ok(ImagePair {
            pair_id: self.pair_id.clone(),
            ir_y: self.ir_y.crop(top, left, size, size)?,
            vi_y: self.vi_y.crop(top, left, size, size)?,
            vi_u: self.vi_u.crop(top, left, size, size)?,
            vi_v: self.vi_v.crop(top, left, size, size)?,
        })
    }

    /// Random square crop, identical window for both modalities,
    /// deterministic under a fixed seed.
    pub fn random_crop(&self, size: usize, seed: u64) -> Result<ImagePair> {
        if size > self.h() || size > self.w() {
            return Err(Error::TooSmall {
                context: "crop size exceeds image dimensions",
            });
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let top = uniform_below(&mut rng, self.h() - size + 1);
        let left = uniform_below(&mut rng, self.w() - size + 1);
        self.crop_window(top, left, size)
    }

    /// Replicate-pads on the bottom/right so both dimensions become
    /// multiples of `m`. Returns the padded pair and the original size.
    pub fn pad_to_multiple(&self, m: usize) -> (ImagePair, (usize, usize)) {
        let orig = (self.h(), self.w());
        let bottom = (m - self.h() % m) % m;
        let right = (m - self.w() % m) % m;
        let padded = ImagePair {
            pair_id: self.pair_id.clone(),
            ir_y: self.ir_y.pad_replicate(bottom, right),
            vi_y: self.vi_y.pad_replicate(bottom, right),
            vi_u: self.vi_u.pad_replicate(bottom, right),
            vi_v: self.vi_v.pad_replicate(bottom, right),
        };
        (padded, orig)
    }
}

/// Uniform integer in [0, n) via the widening-multiply trick; deterministic
/// for a given RNG stream.
fn uniform_below(rng: &mut impl RngCore, n: usize) -> usize {
    debug_assert!(n > 0);
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn pair(h: usize, w: usize) -> ImagePair {
        let f = |i: usize, j: usize| ((i * 31 + j * 7) % 256) as f64 / 255.0;
        ImagePair::new(
            "t".to_string(),
            Plane::from_fn(h, w, f),
            Plane::from_fn(h, w, |i, j| f(j, i + 1)),
            Plane::filled(h, w, 0.5),
            Plane::filled(h, w, 0.25),
        )
        .unwrap()
    }

    #[test]
    fn rejects_unregistered_pair() {
        let err = ImagePair::new(
            "bad".to_string(),
            Plane::zeros(4, 4),
            Plane::zeros(4, 5),
            Plane::zeros(4, 5),
            Plane::zeros(4, 5),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Registration { .. }));
    }

    #[test]
    fn rejects_out_of_range_values() {
        let mut p = Plane::zeros(2, 2);
        p.set(0, 0, 1.5);
        let err = ImagePair::new(
            "bad".to_string(),
            p,
            Plane::zeros(2, 2),
            Plane::zeros(2, 2),
            Plane::zeros(2, 2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::OutOfRange { .. }));
    }

    #[test]
    fn crop_applies_same_window_to_both_modalities() {
        let p = pair(480, 640);
        let c = p.random_crop(256, 7).unwrap();
        assert_eq!((c.h(), c.w()), (256, 256));
        // find the window by matching the ir corner value, then check vi
        let c2 = p.random_crop(256, 7).unwrap();
        assert_eq!(c, c2, "same seed must give byte-identical crops");
    }

    #[test]
    fn full_size_crop_is_identity() {
        let p = pair(33, 33);
        let c = p.random_crop(33, 123).unwrap();
        assert_eq!(c, p);
    }

    #[test]
    fn oversize_crop_rejected() {
        let p = pair(16, 16);
        assert!(p.random_crop(17, 0).is_err());
    }

    #[test]
    fn pad_round_trip() {
        let p = pair(250, 250);
        let (padded, (h, w)) = p.pad_to_multiple(4);
        assert_eq!((padded.h(), padded.w()), (252, 252));
        let back = padded.ir_y.crop(0, 0, h, w).unwrap();
        assert_eq!(back, p.ir_y);
    }
}
