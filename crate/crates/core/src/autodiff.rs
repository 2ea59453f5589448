//! Tape-based reverse-mode automatic differentiation over dense `f64`
//! tensors.
//!
//! The op set is exactly what the fusion network and its losses need:
//! stride-1 zero-padded convolutions (1x1 and 3x3), 2x2 average pooling,
//! nearest-neighbour upsampling, channel concatenation, elementwise
//! arithmetic, channel broadcasts for single-channel masks, the
//! replicate-padded Sobel magnitude, and valid-region Gaussian filtering
//! for SSIM. Nodes are appended in topological order, so the backward pass
//! is a single reverse sweep.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::kernels;
use crate::plane::Plane;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub struct NodeId(u32);

impl NodeId {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    AvgPool2 { x: NodeId },
    Upsample2 { x: NodeId },
    ConcatC { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    AddBc { x: NodeId, m: NodeId },
    MulBc { x: NodeId, m: NodeId },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Abs { x: NodeId },
    Square { x: NodeId },
    SqrtShift { x: NodeId, shift: f64 },
    Max { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    SobelMag { x: NodeId },
    GaussValid { x: NodeId, k: usize, sigma: f64 },
    MeanAll { x: NodeId },
    SumAll { x: NodeId },
    Reshape { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.idx()).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.idx()).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.idx()].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].needs_grad
    }

    pub fn leaf(&mut self, value: Tensor, needs_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, needs_grad)
    }

    pub fn leaf_plane(&mut self, p: &Plane, needs_grad: bool) -> NodeId {
        self.leaf(Tensor::from_plane(p), needs_grad)
    }

    fn chw(&self, id: NodeId) -> Result<(usize, usize, usize)> {
        match self.value(id).shape() {
            [c, h, w] => Ok((*c, *h, *w)),
            _ => Err(Error::ShapeMismatch {
                context: "expected a rank-3 [C,H,W] tensor",
            }),
        }
    }

    fn hw(&self, id: NodeId) -> Result<(usize, usize)> {
        match self.value(id).shape() {
            [h, w] => Ok((*h, *w)),
            _ => Err(Error::ShapeMismatch {
                context: "expected a rank-2 [H,W] tensor",
            }),
        }
    }

    fn same_shape(&self, a: NodeId, b: NodeId, context: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch { context });
        }
        Ok(())
    }

    /// Stride-1 zero-padded convolution. `x` is `[Cin,H,W]`, `w` is
    /// `[Cout,Cin,k,k]` with k odd, `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (cin, h, wd) = self.chw(x)?;
        let (cout, wcin, k) = match self.value(w).shape() {
            [co, ci, kh, kw] if kh == kw && kh % 2 == 1 => (*co, *ci, *kh),
            _ => {
                return Err(Error::ShapeMismatch {
                    context: "conv weight must be [Cout,Cin,k,k] with odd k",
                })
            }
        };
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                context: "conv weight Cin != input channels",
            });
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::ShapeMismatch {
                context: "conv bias must be [Cout]",
            });
        }
        let mut out = vec![0.0; cout * h * wd];
        conv_fwd(
            cin,
            h,
            wd,
            cout,
            k,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &mut out,
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(vec![cout, h, wd], out)?;
        Ok(self.push(Op::Conv2d { x, w, b }, value, needs))
    }

    /// 2x2 average pooling with stride 2 on a `[C,H,W]` tensor with even
    /// spatial dimensions.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw(x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::ShapeMismatch {
                context: "avg_pool2 needs even spatial dimensions",
            });
        }
        let (h2, w2) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            let sb = ch * h * w;
            let ob = ch * h2 * w2;
            for i in 0..h2 {
                for j in 0..w2 {
                    out[ob + i * w2 + j] = 0.25
                        * (src[sb + 2 * i * w + 2 * j]
                            + src[sb + 2 * i * w + 2 * j + 1]
                            + src[sb + (2 * i + 1) * w + 2 * j]
                            + src[sb + (2 * i + 1) * w + 2 * j + 1]);
                }
            }
        }
        let needs = self.needs(x);
        let value = Tensor::new(vec![c, h2, w2], out)?;
        Ok(self.push(Op::AvgPool2 { x }, value, needs))
    }

    /// Nearest-neighbour 2x upsampling of a `[C,H,W]` tensor.
    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw(x)?;
        let (h2, w2) = (2 * h, 2 * w);
        let src = self.value(x).data();
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            let sb = ch * h * w;
            let ob = ch * h2 * w2;
            for i in 0..h2 {
                for j in 0..w2 {
                    out[ob + i * w2 + j] = src[sb + (i / 2) * w + j / 2];
                }
            }
        }
        let needs = self.needs(x);
        let value = Tensor::new(vec![c, h2, w2], out)?;
        Ok(self.push(Op::Upsample2 { x }, value, needs))
    }

    /// Concatenates two `[C,H,W]` tensors along channels.
    pub fn concat_c(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, h, w) = self.chw(a)?;
        let (cb, hb, wb) = self.chw(b)?;
        if (h, w) != (hb, wb) {
            return Err(Error::ShapeMismatch {
                context: "concat_c spatial dimensions differ",
            });
        }
        let mut out = Vec::with_capacity((ca + cb) * h * w);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(vec![ca + cb, h, w], out)?;
        Ok(self.push(Op::ConcatC { a, b }, value, needs))
    }

    fn binary_ew(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        context: &'static str,
    ) -> Result<NodeId> {
        self.same_shape(a, b, context)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(op, value, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_ew(a, b, |x, y| x + y, Op::Add { a, b }, "add shapes differ")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_ew(a, b, |x, y| x - y, Op::Sub { a, b }, "sub shapes differ")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_ew(a, b, |x, y| x * y, Op::Mul { a, b }, "mul shapes differ")
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_ew(a, b, |x, y| x / y, Op::Div { a, b }, "div shapes differ")
    }

    /// Elementwise maximum; ties route their gradient to `a`.
    pub fn max(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_ew(
            a,
            b,
            |x, y| if x >= y { x } else { y },
            Op::Max { a, b },
            "max shapes differ",
        )
    }

    /// Adds a single-channel `[H,W]` map to every channel of a `[C,H,W]`
    /// tensor.
    pub fn add_bc(&mut self, x: NodeId, m: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw(x)?;
        let (mh, mw) = self.hw(m)?;
        if (h, w) != (mh, mw) {
            return Err(Error::ShapeMismatch {
                context: "broadcast map dimensions differ from tensor",
            });
        }
        let xs = self.value(x).data();
        let ms = self.value(m).data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let base = ch * h * w;
            for p in 0..h * w {
                out[base + p] = xs[base + p] + ms[p];
            }
        }
        let needs = self.needs(x) || self.needs(m);
        let value = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push(Op::AddBc { x, m }, value, needs))
    }

    /// Multiplies every channel of a `[C,H,W]` tensor by a `[H,W]` map.
    pub fn mul_bc(&mut self, x: NodeId, m: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.chw(x)?;
        let (mh, mw) = self.hw(m)?;
        if (h, w) != (mh, mw) {
            return Err(Error::ShapeMismatch {
                context: "broadcast map dimensions differ from tensor",
            });
        }
        let xs = self.value(x).data();
        let ms = self.value(m).data();
        let mut out = vec![0.0; c * h * w];
        for ch in 0..c {
            let base = ch * h * w;
            for p in 0..h * w {
                out[base + p] = xs[base + p] * ms[p];
            }
        }
        let needs = self.needs(x) || self.needs(m);
        let value = Tensor::new(vec![c, h, w], out)?;
        Ok(self.push(Op::MulBc { x, m }, value, needs))
    }

    fn unary_ew(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let needs = self.needs(x);
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        self.push(op, value, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary_ew(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary_ew(x, |v| 1.0 / (1.0 + fmath::exp(-v)), Op::Sigmoid { x })
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary_ew(x, fmath::abs, Op::Abs { x })
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary_ew(x, |v| v * v, Op::Square { x })
    }

    /// Elementwise sqrt(x + shift).
    pub fn sqrt_shift(&mut self, x: NodeId, shift: f64) -> NodeId {
        self.unary_ew(x, |v| fmath::sqrt(v + shift), Op::SqrtShift { x, shift })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary_ew(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary_ew(x, |v| v + c, Op::AddScalar { x })
    }

    /// Sobel gradient magnitude of a `[H,W]` plane, replicate borders.
    pub fn sobel_mag(&mut self, x: NodeId) -> Result<NodeId> {
        let (h, w) = self.hw(x)?;
        let data = kernels::sobel_magnitude_raw(h, w, self.value(x).data());
        let needs = self.needs(x);
        let value = Tensor::new(vec![h, w], data)?;
        Ok(self.push(Op::SobelMag { x }, value, needs))
    }

    /// Valid-region correlation of a `[H,W]` plane with a normalized
    /// Gaussian window of side `k` and width `sigma`.
    pub fn gauss_valid(&mut self, x: NodeId, k: usize, sigma: f64) -> Result<NodeId> {
        let (h, w) = self.hw(x)?;
        if h < k || w < k {
            return Err(Error::TooSmall {
                context: "image smaller than filter window",
            });
        }
        let win = kernels::gaussian_window(k, sigma);
        let data = kernels::conv_valid(h, w, self.value(x).data(), k, &win);
        let needs = self.needs(x);
        let value = Tensor::new(vec![h - k + 1, w - k + 1], data)?;
        Ok(self.push(Op::GaussValid { x, k, sigma }, value, needs))
    }

    /// Mean over every element, producing a `[1]` scalar node.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel() as f64;
        let mut s = 0.0;
        for &v in self.value(x).data() {
            s += v;
        }
        let needs = self.needs(x);
        self.push(Op::MeanAll { x }, Tensor::scalar(s / n), needs)
    }

    /// Sum over every element, producing a `[1]` scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let mut s = 0.0;
        for &v in self.value(x).data() {
            s += v;
        }
        let needs = self.needs(x);
        self.push(Op::SumAll { x }, Tensor::scalar(s), needs)
    }

    /// Reinterprets the data with a new shape of identical element count.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                context: "reshape changes element count",
            });
        }
        let data = self.value(x).data().to_vec();
        let needs = self.needs(x);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Op::Reshape { x }, value, needs))
    }

    /// Reverse sweep from a scalar root. Returns per-node gradients;
    /// gradients are retained for leaf nodes and released for interior
    /// nodes once consumed.
    pub fn backward(&self, root: NodeId) -> Result<Grads> {
        if self.value(root).numel() != 1 {
            return Err(Error::ShapeMismatch {
                context: "backward root must be scalar",
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.idx()] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.idx()).rev() {
            if !self.nodes[idx].needs_grad {
                grads[idx] = None;
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match self.nodes[idx].op.clone() {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d { x, w, b } => self.bwd_conv(&g, x, w, b, &mut grads),
                Op::AvgPool2 { x } => {
                    if self.needs(x) {
                        let (c, h2, w2) = match g.shape() {
                            [c, h, w] => (*c, *h, *w),
                            _ => unreachable!(),
                        };
                        let (h, w) = (2 * h2, 2 * w2);
                        let mut gin = Tensor::zeros(self.value(x).shape());
                        for ch in 0..c {
                            let gb = ch * h2 * w2;
                            let ib = ch * h * w;
                            for i in 0..h2 {
                                for j in 0..w2 {
                                    let gv = 0.25 * g.data()[gb + i * w2 + j];
                                    let d = gin.data_mut();
                                    d[ib + 2 * i * w + 2 * j] += gv;
                                    d[ib + 2 * i * w + 2 * j + 1] += gv;
                                    d[ib + (2 * i + 1) * w + 2 * j] += gv;
                                    d[ib + (2 * i + 1) * w + 2 * j + 1] += gv;
                                }
                            }
                        }
                        acc(&mut grads, x, gin);
                    }
                }
                Op::Upsample2 { x } => {
                    if self.needs(x) {
                        let (c, h, w) = match self.value(x).shape() {
                            [c, h, w] => (*c, *h, *w),
                            _ => unreachable!(),
                        };
                        let (h2, w2) = (2 * h, 2 * w);
                        let mut gin = Tensor::zeros(self.value(x).shape());
                        for ch in 0..c {
                            let ib = ch * h * w;
                            let gb = ch * h2 * w2;
                            for i in 0..h2 {
                                for j in 0..w2 {
                                    gin.data_mut()[ib + (i / 2) * w + j / 2] +=
                                        g.data()[gb + i * w2 + j];
                                }
                            }
                        }
                        acc(&mut grads, x, gin);
                    }
                }
                Op::ConcatC { a, b } => {
                    let na = self.value(a).numel();
                    if self.needs(a) {
                        let ga = Tensor::new(
                            self.value(a).shape().to_vec(),
                            g.data()[..na].to_vec(),
                        )
                        .expect("split");
                        acc(&mut grads, a, ga);
                    }
                    if self.needs(b) {
                        let gb = Tensor::new(
                            self.value(b).shape().to_vec(),
                            g.data()[na..].to_vec(),
                        )
                        .expect("split");
                        acc(&mut grads, b, gb);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs(a) {
                        acc(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        acc(&mut grads, b, g);
                    }
                }
                Op::Sub { a, b } => {
                    if self.needs(a) {
                        acc(&mut grads, a, g.clone());
                    }
                    if self.needs(b) {
                        acc(&mut grads, b, map1(&g, |v| -v));
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(a) {
                        acc(&mut grads, a, zip2(&g, self.value(b), |gv, bv| gv * bv));
                    }
                    if self.needs(b) {
                        acc(&mut grads, b, zip2(&g, self.value(a), |gv, av| gv * av));
                    }
                }
                Op::Div { a, b } => {
                    if self.needs(a) {
                        acc(&mut grads, a, zip2(&g, self.value(b), |gv, bv| gv / bv));
                    }
                    if self.needs(b) {
                        let av = self.value(a);
                        let bv = self.value(b);
                        let data: Vec<f64> = g
                            .data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data().iter()))
                            .map(|(&gv, (&a1, &b1))| -gv * a1 / (b1 * b1))
                            .collect();
                        acc(
                            &mut grads,
                            b,
                            Tensor::new(bv.shape().to_vec(), data).expect("shape"),
                        );
                    }
                }
                Op::AddBc { x, m } => {
                    if self.needs(x) {
                        acc(&mut grads, x, g.clone());
                    }
                    if self.needs(m) {
                        acc(&mut grads, m, sum_channels(&g, self.value(m).shape()));
                    }
                }
                Op::MulBc { x, m } => {
                    let (c, h, w) = match self.value(x).shape() {
                        [c, h, w] => (*c, *h, *w),
                        _ => unreachable!(),
                    };
                    if self.needs(x) {
                        let ms = self.value(m).data();
                        let mut data = vec![0.0; c * h * w];
                        for ch in 0..c {
                            let base = ch * h * w;
                            for p in 0..h * w {
                                data[base + p] = g.data()[base + p] * ms[p];
                            }
                        }
                        acc(
                            &mut grads,
                            x,
                            Tensor::new(vec![c, h, w], data).expect("shape"),
                        );
                    }
                    if self.needs(m) {
                        let xs = self.value(x).data();
                        let mut data = vec![0.0; h * w];
                        for ch in 0..c {
                            let base = ch * h * w;
                            for p in 0..h * w {
                                data[p] += g.data()[base + p] * xs[base + p];
                            }
                        }
                        acc(&mut grads, m, Tensor::new(vec![h, w], data).expect("shape"));
                    }
                }
                Op::Relu { x } => {
                    if self.needs(x) {
                        acc(
                            &mut grads,
                            x,
                            zip2(&g, self.value(x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                        );
                    }
                }
                Op::Sigmoid { x } => {
                    if self.needs(x) {
                        let s = &self.nodes[idx].value;
                        acc(&mut grads, x, zip2(&g, s, |gv, sv| gv * sv * (1.0 - sv)));
                    }
                }
                Op::Abs { x } => {
                    if self.needs(x) {
                        acc(
                            &mut grads,
                            x,
                            zip2(&g, self.value(x), |gv, xv| {
                                if xv > 0.0 {
                                    gv
                                } else if xv < 0.0 {
                                    -gv
                                } else {
                                    0.0
                                }
                            }),
                        );
                    }
                }
                Op::Square { x } => {
                    if self.needs(x) {
                        acc(&mut grads, x, zip2(&g, self.value(x), |gv, xv| 2.0 * xv * gv));
                    }
                }
                Op::SqrtShift { x, shift } => {
                    if self.needs(x) {
                        acc(
                            &mut grads,
                            x,
                            zip2(&g, self.value(x), |gv, xv| {
                                let root = fmath::sqrt(xv + shift);
                                if root > 0.0 {
                                    0.5 * gv / root
                                } else {
                                    0.0
                                }
                            }),
                        );
                    }
                }
                Op::Max { a, b } => {
                    let av = self.value(a);
                    let bv = self.value(b);
                    if self.needs(a) {
                        let data: Vec<f64> = g
                            .data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data().iter()))
                            .map(|(&gv, (&a1, &b1))| if a1 >= b1 { gv } else { 0.0 })
                            .collect();
                        acc(
                            &mut grads,
                            a,
                            Tensor::new(av.shape().to_vec(), data).expect("shape"),
                        );
                    }
                    if self.needs(b) {
                        let data: Vec<f64> = g
                            .data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data().iter()))
                            .map(|(&gv, (&a1, &b1))| if a1 >= b1 { 0.0 } else { gv })
                            .collect();
                        acc(
                            &mut grads,
                            b,
                            Tensor::new(bv.shape().to_vec(), data).expect("shape"),
                        );
                    }
                }
                Op::Scale { x, c } => {
                    if self.needs(x) {
                        acc(&mut grads, x, map1(&g, |v| v * c));
                    }
                }
                Op::AddScalar { x } => {
                    if self.needs(x) {
                        acc(&mut grads, x, g);
                    }
                }
                Op::SobelMag { x } => {
                    if self.needs(x) {
                        let (h, w) = match self.value(x).shape() {
                            [h, w] => (*h, *w),
                            _ => unreachable!(),
                        };
                        let src = self.value(x).data();
                        let gx = kernels::conv3x3_replicate(h, w, src, &kernels::SOBEL_X);
                        let gy = kernels::conv3x3_replicate(h, w, src, &kernels::SOBEL_Y);
                        let mag = self.nodes[idx].value.data();
                        let mut tx = vec![0.0; h * w];
                        let mut ty = vec![0.0; h * w];
                        for p in 0..h * w {
                            if mag[p] > 0.0 {
                                let s = g.data()[p] / mag[p];
                                tx[p] = s * gx[p];
                                ty[p] = s * gy[p];
                            }
                        }
                        let mut gin = vec![0.0; h * w];
                        kernels::conv3x3_replicate_adjoint(h, w, &tx, &kernels::SOBEL_X, &mut gin);
                        kernels::conv3x3_replicate_adjoint(h, w, &ty, &kernels::SOBEL_Y, &mut gin);
                        acc(&mut grads, x, Tensor::new(vec![h, w], gin).expect("shape"));
                    }
                }
                Op::GaussValid { x, k, sigma } => {
                    if self.needs(x) {
                        let (h, w) = match self.value(x).shape() {
                            [h, w] => (*h, *w),
                            _ => unreachable!(),
                        };
                        let win = kernels::gaussian_window(k, sigma);
                        let mut gin = vec![0.0; h * w];
                        kernels::conv_valid_adjoint(h, w, g.data(), k, &win, &mut gin);
                        acc(&mut grads, x, Tensor::new(vec![h, w], gin).expect("shape"));
                    }
                }
                Op::MeanAll { x } => {
                    if self.needs(x) {
                        let n = self.value(x).numel();
                        let gv = g.item() / n as f64;
                        let mut gin = Tensor::zeros(self.value(x).shape());
                        gin.data_mut().fill(gv);
                        acc(&mut grads, x, gin);
                    }
                }
                Op::SumAll { x } => {
                    if self.needs(x) {
                        let gv = g.item();
                        let mut gin = Tensor::zeros(self.value(x).shape());
                        gin.data_mut().fill(gv);
                        acc(&mut grads, x, gin);
                    }
                }
                Op::Reshape { x } => {
                    if self.needs(x) {
                        let gin = Tensor::new(self.value(x).shape().to_vec(), g.data().to_vec())
                            .expect("shape");
                        acc(&mut grads, x, gin);
                    }
                }
            }
        }
        Ok(Grads { grads })
    }

    fn bwd_conv(&self, g: &Tensor, x: NodeId, w: NodeId, b: NodeId, grads: &mut Vec<Option<Tensor>>) {
        let (cin, h, wd) = match self.value(x).shape() {
            [c, h, w] => (*c, *h, *w),
            _ => unreachable!(),
        };
        let (cout, k) = match self.value(w).shape() {
            [co, _, kh, _] => (*co, *kh),
            _ => unreachable!(),
        };
        if self.needs(x) {
            let mut gin = vec![0.0; cin * h * wd];
            conv_bwd_input(cin, h, wd, cout, k, g.data(), self.value(w).data(), &mut gin);
            acc(grads, x, Tensor::new(vec![cin, h, wd], gin).expect("shape"));
        }
        if self.needs(w) {
            let mut gw = vec![0.0; cout * cin * k * k];
            conv_bwd_weight(cin, h, wd, cout, k, self.value(x).data(), g.data(), &mut gw);
            acc(
                grads,
                w,
                Tensor::new(vec![cout, cin, k, k], gw).expect("shape"),
            );
        }
        if self.needs(b) {
            let mut gb = vec![0.0; cout];
            for (co, gbv) in gb.iter_mut().enumerate() {
                let base = co * h * wd;
                for p in 0..h * wd {
                    *gbv += g.data()[base + p];
                }
            }
            acc(grads, b, Tensor::new(vec![cout], gb).expect("shape"));
        }
    }
}

fn acc(grads: &mut [Option<Tensor>], id: NodeId, contribution: Tensor) {
    match &mut grads[id.idx()] {
        Some(existing) => {
            for (e, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn map1(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect()).expect("shape")
}

fn zip2(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data: Vec<f64> = g
        .data()
        .iter()
        .zip(other.data().iter())
        .map(|(&a, &b)| f(a, b))
        .collect();
    Tensor::new(other.shape().to_vec(), data).expect("shape")
}

/// Sums a `[C,H,W]` gradient over channels down to `[H,W]`.
fn sum_channels(g: &Tensor, target_shape: &[usize]) -> Tensor {
    let (c, hw) = match g.shape() {
        [c, h, w] => (*c, h * w),
        _ => unreachable!(),
    };
    let mut data = vec![0.0; hw];
    for ch in 0..c {
        for p in 0..hw {
            data[p] += g.data()[ch * hw + p];
        }
    }
    Tensor::new(target_shape.to_vec(), data).expect("shape")
}

fn conv_fwd(
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    x: &[f64],
    wgt: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    let p = (k - 1) / 2;
    for co in 0..cout {
        let ob = co * h * w;
        out[ob..ob + h * w].fill(bias[co]);
        for ci in 0..cin {
            let xb = ci * h * w;
            for di in 0..k {
                let i0 = p.saturating_sub(di);
                let i1 = (h + p - di).min(h);
                for dj in 0..k {
                    let wv = wgt[((co * cin + ci) * k + di) * k + dj];
                    if wv == 0.0 {
                        continue;
                    }
                    let j0 = p.saturating_sub(dj);
                    let j1 = (w + p - dj).min(w);
                    for i in i0..i1 {
                        let srow = xb + (i + di - p) * w;
                        let orow = ob + i * w;
                        for j in j0..j1 {
                            out[orow + j] += wv * x[srow + (j + dj) - p];
                        }
                    }
                }
            }
        }
    }
}

fn conv_bwd_input(
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    gout: &[f64],
    wgt: &[f64],
    gin: &mut [f64],
) {
    let p = (k - 1) / 2;
    for co in 0..cout {
        let gb = co * h * w;
        for ci in 0..cin {
            let ib = ci * h * w;
            for di in 0..k {
                let i0 = p.saturating_sub(di);
                let i1 = (h + p - di).min(h);
                for dj in 0..k {
                    let wv = wgt[((co * cin + ci) * k + di) * k + dj];
                    if wv == 0.0 {
                        continue;
                    }
                    let j0 = p.saturating_sub(dj);
                    let j1 = (w + p - dj).min(w);
                    for i in i0..i1 {
                        let grow = gb + i * w;
                        let irow = ib + (i + di - p) * w;
                        for j in j0..j1 {
                            gin[irow + (j + dj) - p] += wv * gout[grow + j];
                        }
                    }
                }
            }
        }
    }
}

fn conv_bwd_weight(
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    x: &[f64],
    gout: &[f64],
    gw: &mut [f64],
) {
    let p = (k - 1) / 2;
    for co in 0..cout {
        let gb = co * h * w;
        for ci in 0..cin {
            let xb = ci * h * w;
            for di in 0..k {
                let i0 = p.saturating_sub(di);
                let i1 = (h + p - di).min(h);
                for dj in 0..k {
                    let j0 = p.saturating_sub(dj);
                    let j1 = (w + p - dj).min(w);
                    let mut accv = 0.0;
                    for i in i0..i1 {
                        let grow = gb + i * w;
                        let xrow = xb + (i + di - p) * w;
                        for j in j0..j1 {
                            accv += gout[grow + j] * x[xrow + (j + dj) - p];
                        }
                    }
                    gw[((co * cin + ci) * k + di) * k + dj] = accv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]), false);
        let b = t.leaf(Tensor::zeros(&[3, 2]), false);
        assert!(t.add(a, b).is_err());
        let x = t.leaf(Tensor::zeros(&[1, 4, 4]), false);
        let w = t.leaf(Tensor::zeros(&[2, 3, 3, 3]), false);
        let bias = t.leaf(Tensor::zeros(&[2]), false);
        assert!(t.conv2d(x, w, bias).is_err(), "cin mismatch");
        let odd = t.leaf(Tensor::zeros(&[1, 5, 4]), false);
        assert!(t.avg_pool2(odd).is_err());
    }

    #[test]
    fn conv_identity_kernel() {
        let mut t = Tape::new();
        let x = t.leaf(
            Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        // center-tap kernel copies the input
        let mut kw = vec![0.0; 9];
        kw[4] = 1.0;
        let w = t.leaf(Tensor::new(vec![1, 1, 3, 3], kw).unwrap(), false);
        let b = t.leaf(Tensor::new(vec![1], vec![0.5]).unwrap(), false);
        let y = t.conv2d(x, w, b).unwrap();
        assert_eq!(t.value(y).data(), &[1.5, 2.5, 3.5, 4.5]);
    }

    #[test]
    fn backward_through_sum_of_squares() {
        // d/dx mean(x^2) = 2x/n
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap(), true);
        let sq = t.square(x);
        let m = t.mean_all(sq);
        let grads = t.backward(m).unwrap();
        let gx = grads.get(x).unwrap();
        for (g, v) in gx.data().iter().zip([1.0, -2.0, 3.0, 0.5]) {
            assert!((g - 2.0 * v / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unvisited_leaves_have_no_grad() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0), true);
        let unused = t.leaf(Tensor::scalar(5.0), true);
        let y = t.square(x);
        let grads = t.backward(y).unwrap();
        assert!(grads.get(x).is_some());
        assert!(grads.get(unused).is_none());
    }
}
