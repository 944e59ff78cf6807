//! Differentiable tensor operations. Every op's VJP is itself expressed in
//! tensor ops (recorded under `create_graph`), so gradients-of-gradients
//! work through the smooth primitives; piecewise-linear ops use the usual
//! almost-everywhere masks.

use super::graph::{op1, op_outputs, VjpFn};
use super::kernels;
pub use super::kernels::Conv2dDims;
use super::Tensor;
use crate::num::{c, Elem};

fn same_or_bcast<T: Elem>(name: &str, a: &Tensor<T>, b: &Tensor<T>) -> Vec<usize> {
    kernels::broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!(
            "{name}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )
    })
}

impl<T: Elem> Tensor<T> {
    // ---- binary elementwise (broadcasting) ----

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        let shape = same_or_bcast("add", self, other);
        let data = kernels::broadcast_apply(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &shape,
            |a, b| a + b,
        );
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        op1(&[self, other], shape, data, move |g, needs| {
            vec![
                needs[0].then(|| g.reduce_sum_to(&sa)),
                needs[1].then(|| g.reduce_sum_to(&sb)),
            ]
        })
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        let shape = same_or_bcast("sub", self, other);
        let data = kernels::broadcast_apply(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &shape,
            |a, b| a - b,
        );
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        op1(&[self, other], shape, data, move |g, needs| {
            vec![
                needs[0].then(|| g.reduce_sum_to(&sa)),
                needs[1].then(|| g.neg().reduce_sum_to(&sb)),
            ]
        })
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        let shape = same_or_bcast("mul", self, other);
        let data = kernels::broadcast_apply(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &shape,
            |a, b| a * b,
        );
        let (a, b) = (self.clone(), other.clone());
        op1(&[self, other], shape, data, move |g, needs| {
            vec![
                needs[0].then(|| g.mul(&b).reduce_sum_to(a.shape())),
                needs[1].then(|| g.mul(&a).reduce_sum_to(b.shape())),
            ]
        })
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        let shape = same_or_bcast("div", self, other);
        let data = kernels::broadcast_apply(
            self.data(),
            self.shape(),
            other.data(),
            other.shape(),
            &shape,
            |a, b| a / b,
        );
        let (a, b) = (self.clone(), other.clone());
        op1(&[self, other], shape, data, move |g, needs| {
            vec![
                needs[0].then(|| g.div(&b).reduce_sum_to(a.shape())),
                needs[1].then(|| {
                    g.mul(&a)
                        .neg()
                        .div(&b.mul(&b))
                        .reduce_sum_to(b.shape())
                }),
            ]
        })
    }

    // ---- unary elementwise ----

    pub fn neg(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| -x).collect();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.neg())]
        })
    }

    pub fn scale(&self, k: f64) -> Tensor<T> {
        let kt: T = c(k);
        let data = self.data().iter().map(|&x| x * kt).collect();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.scale(k))]
        })
    }

    pub fn add_scalar(&self, k: f64) -> Tensor<T> {
        let kt: T = c(k);
        let data = self.data().iter().map(|&x| x + kt).collect();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.clone())]
        })
    }

    pub fn sin(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.sin()).collect();
        let x = self.clone();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.mul(&x.cos()))]
        })
    }

    pub fn cos(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.cos()).collect();
        let x = self.clone();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.mul(&x.sin().neg()))]
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.exp()).collect();
        let x = self.clone();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.mul(&x.exp()))]
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| sigmoid_scalar(x)).collect();
        let x = self.clone();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            let s = x.sigmoid();
            let one_minus = s.neg().add_scalar(1.0);
            vec![Some(g.mul(&s.mul(&one_minus)))]
        })
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&self) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|&x| {
                let zero = T::zero();
                x.max(zero) + (-x.abs()).exp().ln_1p()
            })
            .collect();
        let x = self.clone();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.mul(&x.sigmoid()))]
        })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let s: T = c(slope);
        let data = self
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { x * s })
            .collect();
        let mask = Tensor::from_vec(
            self.shape(),
            self.data()
                .iter()
                .map(|&x| if x > T::zero() { T::one() } else { s })
                .collect(),
        );
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.mul(&mask))]
        })
    }

    pub fn relu(&self) -> Tensor<T> {
        self.leaky_relu(0.0)
    }

    pub fn abs(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.abs()).collect();
        let sign = Tensor::from_vec(
            self.shape(),
            self.data()
                .iter()
                .map(|&x| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect(),
        );
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.mul(&sign))]
        })
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.sqrt()).collect();
        let x = self.clone();
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.div(&x.sqrt().scale(2.0)))]
        })
    }

    /// Elementwise max(x, k); subgradient 1 at the tie.
    pub fn max_scalar(&self, k: f64) -> Tensor<T> {
        let kt: T = c(k);
        let data = self.data().iter().map(|&x| x.max(kt)).collect();
        let mask = Tensor::from_vec(
            self.shape(),
            self.data()
                .iter()
                .map(|&x| if x >= kt { T::one() } else { T::zero() })
                .collect(),
        );
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.mul(&mask))]
        })
    }

    // ---- linear algebra / shape ----

    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert!(
            self.shape().len() == 2 && other.shape().len() == 2,
            "matmul: expects rank-2 operands, got {:?} and {:?}",
            self.shape(),
            other.shape()
        );
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        assert_eq!(
            k, k2,
            "matmul: inner dimensions disagree, {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let data = kernels::matmul(self.data(), other.data(), m, k, n);
        let (a, b) = (self.clone(), other.clone());
        op1(&[self, other], vec![m, n], data, move |g, needs| {
            vec![
                needs[0].then(|| g.matmul(&b.t())),
                needs[1].then(|| a.t().matmul(g)),
            ]
        })
    }

    /// 2-D transpose.
    pub fn t(&self) -> Tensor<T> {
        assert_eq!(self.shape().len(), 2, "t(): rank-2 only, got {:?}", self.shape());
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let data = kernels::transpose2d(self.data(), m, n);
        op1(&[self], vec![n, m], data, move |g, _| vec![Some(g.t())])
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.numel(),
            "reshape: cannot view {:?} as {:?}",
            self.shape(),
            shape
        );
        let orig = self.shape().to_vec();
        op1(
            &[self],
            shape.to_vec(),
            self.data().to_vec(),
            move |g, _| vec![Some(g.reshape(&orig))],
        )
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor<T> {
        let data = kernels::broadcast_to(self.data(), self.shape(), shape);
        let orig = self.shape().to_vec();
        op1(&[self], shape.to_vec(), data, move |g, _| {
            vec![Some(g.reduce_sum_to(&orig))]
        })
    }

    /// Sum down to a broadcast-compatible smaller shape.
    pub fn reduce_sum_to(&self, shape: &[usize]) -> Tensor<T> {
        if shape == self.shape() {
            return self.clone();
        }
        let data = kernels::reduce_sum_to(self.data(), self.shape(), shape);
        let orig = self.shape().to_vec();
        op1(&[self], shape.to_vec(), data, move |g, _| {
            vec![Some(g.broadcast_to(&orig))]
        })
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = kernels::pairwise_sum(self.data());
        let orig = self.shape().to_vec();
        op1(&[self], vec![1], vec![s], move |g, _| {
            vec![Some(g.broadcast_to(&orig))]
        })
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sum over one axis, keeping it as an extent of 1.
    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        assert!(axis < self.shape().len(), "sum_axis: bad axis");
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = 1;
        self.reduce_sum_to(&out_shape)
    }

    pub fn mean_axis(&self, axis: usize) -> Tensor<T> {
        let n = self.shape()[axis].max(1);
        self.sum_axis(axis).scale(1.0 / n as f64)
    }

    // ---- scan / ordering ----

    /// Exclusive prefix sum along the last axis.
    pub fn cumsum_exclusive(&self) -> Tensor<T> {
        let last = *self.shape().last().expect("cumsum on rank >= 1");
        let data = kernels::cumsum_exclusive(self.data(), last);
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.flip_last().cumsum_exclusive().flip_last())]
        })
    }

    pub fn flip_last(&self) -> Tensor<T> {
        let last = *self.shape().last().expect("flip on rank >= 1");
        let data = kernels::flip_last(self.data(), last);
        op1(&[self], self.shape().to_vec(), data, move |g, _| {
            vec![Some(g.flip_last())]
        })
    }

    /// Slice along one axis.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let shape = self.shape().to_vec();
        assert!(axis < shape.len() && start + len <= shape[axis], "slice out of range");
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let orig = shape;
        op1(&[self], out_shape, data, move |g, _| {
            vec![Some(g.pad_slice(axis, start, &orig))]
        })
    }

    /// Embed into zeros of `full_shape` at `start` along `axis` (adjoint of
    /// [`Tensor::slice`]).
    pub fn pad_slice(&self, axis: usize, start: usize, full_shape: &[usize]) -> Tensor<T> {
        let shape = self.shape().to_vec();
        let len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![T::zero(); full_shape.iter().product()];
        for o in 0..outer {
            let src = o * len * inner;
            let dst = (o * full_shape[axis] + start) * inner;
            data[dst..dst + len * inner].copy_from_slice(&self.data()[src..src + len * inner]);
        }
        op1(&[self], full_shape.to_vec(), data, move |g, _| {
            vec![Some(g.slice(axis, start, len))]
        })
    }

    /// Select rows of a [N, ...] tensor (duplicates allowed).
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor<T> {
        let n = self.shape()[0];
        let rest: usize = self.shape()[1..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = idx.len();
        let mut data = Vec::with_capacity(idx.len() * rest);
        for &i in idx {
            assert!(i < n, "gather_rows: index {i} out of {n}");
            data.extend_from_slice(&self.data()[i * rest..(i + 1) * rest]);
        }
        let idx = idx.to_vec();
        op1(&[self], out_shape, data, move |g, _| {
            vec![Some(g.scatter_add_rows(&idx, n))]
        })
    }

    /// Scatter-add rows into a fresh [n, ...] tensor (adjoint of
    /// [`Tensor::gather_rows`]).
    pub fn scatter_add_rows(&self, idx: &[usize], n: usize) -> Tensor<T> {
        let rest: usize = self.shape()[1..].iter().product();
        assert_eq!(self.shape()[0], idx.len());
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = n;
        let mut data = vec![T::zero(); n * rest];
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..rest {
                data[i * rest + j] += self.data()[r * rest + j];
            }
        }
        let idx = idx.to_vec();
        op1(&[self], out_shape, data, move |g, _| {
            vec![Some(g.gather_rows(&idx))]
        })
    }

    // ---- image ops (NHWC) ----

    /// Patch unfolding for convolution: [B,H,W,C] -> [B*OH*OW, K*K*C].
    pub fn im2col(&self, k: usize, stride: usize, pad: usize) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "im2col: expects [B,H,W,C], got {s:?}");
        let dims = Conv2dDims {
            batch: s[0],
            h: s[1],
            w: s[2],
            c: s[3],
            k,
            stride,
            pad,
        };
        let (oh, ow) = dims.out_hw();
        let data = kernels::im2col(self.data(), &dims);
        let in_shape = s.to_vec();
        op1(
            &[self],
            vec![dims.batch * oh * ow, k * k * dims.c],
            data,
            move |g, _| vec![Some(g.col2im(k, stride, pad, &in_shape))],
        )
    }

    /// Adjoint of [`Tensor::im2col`].
    pub fn col2im(&self, k: usize, stride: usize, pad: usize, img_shape: &[usize]) -> Tensor<T> {
        let dims = Conv2dDims {
            batch: img_shape[0],
            h: img_shape[1],
            w: img_shape[2],
            c: img_shape[3],
            k,
            stride,
            pad,
        };
        let data = kernels::col2im(self.data(), &dims);
        op1(&[self], img_shape.to_vec(), data, move |g, _| {
            vec![Some(g.im2col(k, stride, pad))]
        })
    }

    /// 2x average downsampling of [B,H,W,C].
    pub fn avg_pool2(&self) -> Tensor<T> {
        let s = self.shape();
        assert!(
            s.len() == 4 && s[1] % 2 == 0 && s[2] % 2 == 0,
            "avg_pool2: expects [B,even,even,C], got {s:?}"
        );
        let (b, h, w, ch) = (s[0], s[1], s[2], s[3]);
        let data = kernels::avg_pool2(self.data(), b, h, w, ch);
        op1(&[self], vec![b, h / 2, w / 2, ch], data, move |g, _| {
            vec![Some(g.upsample2().scale(0.25))]
        })
    }

    /// Nearest 2x upsampling of [B,H,W,C].
    pub fn upsample2(&self) -> Tensor<T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "upsample2: expects [B,H,W,C], got {s:?}");
        let (b, h, w, ch) = (s[0], s[1], s[2], s[3]);
        let data = kernels::upsample2(self.data(), b, h, w, ch);
        op1(&[self], vec![b, 2 * h, 2 * w, ch], data, move |g, _| {
            vec![Some(g.avg_pool2().scale(4.0))]
        })
    }
}

/// Concatenate along an axis.
pub fn concat<T: Elem>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    assert!(!parts.is_empty(), "concat: no operands");
    let base = parts[0].shape().to_vec();
    for p in parts {
        assert_eq!(p.shape().len(), base.len(), "concat: rank mismatch");
        for (d, (&a, &b)) in base.iter().zip(p.shape()).enumerate() {
            assert!(d == axis || a == b, "concat: shape mismatch off-axis at dim {d}");
        }
    }
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let mut data = vec![T::zero(); out_shape.iter().product()];
    let mut offset = 0usize;
    for p in parts {
        let len = p.shape()[axis];
        for o in 0..outer {
            let src = o * len * inner;
            let dst = (o * total + offset) * inner;
            data[dst..dst + len * inner].copy_from_slice(&p.data()[src..src + len * inner]);
        }
        offset += len;
    }
    let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let vjp: VjpFn<T> = Box::new(move |gouts, needs| {
        let Some(g) = &gouts[0] else {
            return vec![None; needs.len()];
        };
        let mut offset = 0usize;
        lens.iter()
            .zip(needs)
            .map(|(&len, &need)| {
                let out = need.then(|| g.slice(axis, offset, len));
                offset += len;
                out
            })
            .collect()
    });
    let inputs: Vec<&Tensor<T>> = parts.to_vec();
    op_outputs(&inputs, vec![(out_shape, data)], vjp)
        .pop()
        .expect("single output")
}

/// Stack scalar ([1]) tensors into a vector.
pub fn stack_scalars<T: Elem>(parts: &[&Tensor<T>]) -> Tensor<T> {
    concat(parts, 0)
}

/// Bilinear lookup in an image: img [H,W,C], coords [N,2] as (x,y) in pixel
/// units with (0,0) the centre of the top-left pixel. Differentiable in both
/// the image and the coordinates (coordinate gradients are first-order
/// only: they do not themselves extend the graph).
pub fn bilinear_sample<T: Elem>(img: &Tensor<T>, coords: &Tensor<T>) -> Tensor<T> {
    let s = img.shape();
    assert_eq!(s.len(), 3, "bilinear_sample: img must be [H,W,C], got {s:?}");
    assert!(
        coords.shape().len() == 2 && coords.shape()[1] == 2,
        "bilinear_sample: coords must be [N,2], got {:?}",
        coords.shape()
    );
    let (h, w, ch) = (s[0], s[1], s[2]);
    let n = coords.shape()[0];
    let data = kernels::bilinear_sample(img.data(), h, w, ch, coords.data(), n);
    let (img_c, coords_c) = (img.clone(), coords.clone());
    op1(&[img, coords], vec![n, ch], data, move |g, needs| {
        let dimg = needs[0].then(|| bilinear_scatter_op(g, &coords_c.detach(), h, w));
        let dcoords = needs[1].then(|| {
            Tensor::from_vec(
                &[n, 2],
                kernels::bilinear_coord_grad(
                    img_c.data(),
                    h,
                    w,
                    ch,
                    coords_c.data(),
                    n,
                    g.data(),
                ),
            )
        });
        vec![dimg, dcoords]
    })
}

/// Adjoint of [`bilinear_sample`] with respect to the image: splat [N,C]
/// values at [N,2] coordinates into an [H,W,C] canvas.
pub fn bilinear_scatter_op<T: Elem>(
    values: &Tensor<T>,
    coords: &Tensor<T>,
    h: usize,
    w: usize,
) -> Tensor<T> {
    let n = coords.shape()[0];
    let ch = values.shape()[1];
    let data = kernels::bilinear_scatter(values.data(), h, w, ch, coords.data(), n);
    let coords_c = coords.detach();
    op1(&[values, coords], vec![h, w, ch], data, move |g, needs| {
        vec![needs[0].then(|| bilinear_sample(g, &coords_c)), None]
    })
}

// Operator sugar for loss code.
impl<T: Elem> std::ops::Add for &Tensor<T> {
    type Output = Tensor<T>;
    fn add(self, rhs: &Tensor<T>) -> Tensor<T> {
        Tensor::add(self, rhs)
    }
}

impl<T: Elem> std::ops::Sub for &Tensor<T> {
    type Output = Tensor<T>;
    fn sub(self, rhs: &Tensor<T>) -> Tensor<T> {
        Tensor::sub(self, rhs)
    }
}

impl<T: Elem> std::ops::Mul for &Tensor<T> {
    type Output = Tensor<T>;
    fn mul(self, rhs: &Tensor<T>) -> Tensor<T> {
        Tensor::mul(self, rhs)
    }
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Elem>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::graph::backward;

    #[test]
    fn analytic_point_values() {
        assert_eq!(Tensor::<f32>::scalar(0.0).sin().item(), 0.0);
        assert_eq!(Tensor::<f32>::scalar(0.0).sigmoid().item(), 0.5);
        assert_eq!(Tensor::<f32>::scalar(-1.0).leaky_relu(0.2).item(), -0.2);
        let sp0 = Tensor::<f64>::scalar(0.0).softplus().item();
        assert!((sp0 - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bilinear_center_value() {
        let img = Tensor::<f64>::from_vec(&[2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]);
        let coords = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]);
        let out = bilinear_sample(&img, &coords);
        assert!((out.item() - 1.5).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn matmul_shape_mismatch_names_op() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        let _ = a.matmul(&b);
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let a = Tensor::<f64>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).tracked();
        let b = Tensor::<f64>::from_vec(&[3], vec![10., 20., 30.]).tracked();
        let y = a.add(&b).sum_all();
        let g = backward(&y, false).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[1.0; 6]);
        assert_eq!(g.get(&b).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn matmul_gradients() {
        let a = Tensor::<f64>::from_vec(&[1, 2], vec![2.0, 3.0]).tracked();
        let b = Tensor::<f64>::from_vec(&[2, 1], vec![5.0, 7.0]).tracked();
        let y = a.matmul(&b).sum_all();
        let g = backward(&y, false).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(g.get(&b).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn cumsum_gradient() {
        // y = sum(cumsum_excl(x)) over x of len 4 => dy/dx_j = 3-j
        let x = Tensor::<f64>::from_vec(&[4], vec![1., 2., 3., 4.]).tracked();
        let y = x.cumsum_exclusive().sum_all();
        let g = backward(&y, false).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn concat_slice_roundtrip_grad() {
        let a = Tensor::<f64>::from_vec(&[2], vec![1., 2.]).tracked();
        let b = Tensor::<f64>::from_vec(&[3], vec![3., 4., 5.]).tracked();
        let y = concat(&[&a, &b], 0).slice(0, 1, 3).sum_all();
        let g = backward(&y, false).unwrap();
        assert_eq!(g.get(&a).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(g.get(&b).unwrap().data(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn gather_scatter_grad() {
        let x = Tensor::<f64>::from_vec(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).tracked();
        let y = x.gather_rows(&[2, 0, 2]).sum_all();
        let g = backward(&y, false).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn avg_pool_grad_is_quarter() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 1], vec![1., 2., 3., 4.]).tracked();
        let y = x.avg_pool2().sum_all();
        assert_eq!(y.item(), 2.5);
        let g = backward(&y, false).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn bilinear_image_grad_is_scatter() {
        let img = Tensor::<f64>::from_vec(&[2, 2, 1], vec![0., 1., 2., 3.]).tracked();
        let coords = Tensor::from_vec(&[1, 2], vec![0.5, 0.5]);
        let y = bilinear_sample(&img, &coords).sum_all();
        let g = backward(&y, false).unwrap();
        assert_eq!(g.get(&img).unwrap().data(), &[0.25; 4]);
    }
}
