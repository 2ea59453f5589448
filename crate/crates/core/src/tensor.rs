//! Dense n-dimensional `f64` tensor (rank 1..=4), row-major.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::plane::Plane;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                context: "tensor data length != product of shape",
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// The single value of a `[1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Interprets a rank-2 tensor as a plane.
    pub fn to_plane(&self) -> Result<Plane> {
        match self.shape[..] {
            [h, w] => Plane::new(h, w, self.data.clone()),
            [1, h, w] => Plane::new(h, w, self.data.clone()),
            _ => Err(Error::ShapeMismatch {
                context: "tensor is not a single plane",
            }),
        }
    }

    pub fn from_plane(p: &Plane) -> Tensor {
        Tensor {
            shape: vec![p.h(), p.w()],
            data: p.data().to_vec(),
        }
    }

    /// Channel view of a `[C,H,W]` tensor.
    pub fn channel(&self, c: usize) -> &[f64] {
        let (ch, hw) = match self.shape[..] {
            [cc, h, w] => (cc, h * w),
            _ => panic!("channel() needs a rank-3 tensor"),
        };
        debug_assert!(c < ch);
        &self.data[c * hw..(c + 1) * hw]
    }
}
