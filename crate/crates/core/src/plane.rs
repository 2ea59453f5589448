//! Single-channel image plane: row-major `f64` values.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A 2-D single-channel image, row-major, `f64` per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch {
                context: "plane data length != h*w",
            });
        }
        Ok(Self { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Self {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    /// Builds a plane from a per-pixel function of (row, col).
    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(f(i, j));
            }
        }
        Self { h, w, data }
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.w + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.w..(i + 1) * self.w]
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.h == other.h && self.w == other.w
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let mut s = 0.0;
        for &v in &self.data {
            s += v;
        }
        s / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// True when every value is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// 2x2 average pooling with stride 2. Odd trailing rows/columns are
    /// dropped (floor semantics).
    pub fn avg_pool2(&self) -> Result<Plane> {
        let h2 = self.h / 2;
        let w2 = self.w / 2;
        if h2 == 0 || w2 == 0 {
            return Err(Error::TooSmall {
                context: "avg_pool2 needs at least 2x2 input",
            });
        }
        let mut out = Vec::with_capacity(h2 * w2);
        for i in 0..h2 {
            let r0 = self.row(2 * i);
            let r1 = self.row(2 * i + 1);
            for j in 0..w2 {
                out.push(0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]));
            }
        }
        Plane::new(h2, w2, out)
    }

    /// Extracts the window with top-left corner (top, left).
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Plane> {
        if top + h > self.h || left + w > self.w {
            return Err(Error::OutOfRange {
                context: "crop window exceeds plane bounds",
            });
        }
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            let row = self.row(top + i);
            data.extend_from_slice(&row[left..left + w]);
        }
        Plane::new(h, w, data)
    }

    /// Replicate-pads on the bottom and right edges.
    pub fn pad_replicate(&self, bottom: usize, right: usize) -> Plane {
        let nh = self.h + bottom;
        let nw = self.w + right;
        Plane::from_fn(nh, nw, |i, j| {
            self.get(i.min(self.h - 1), j.min(self.w - 1))
        })
    }
}
