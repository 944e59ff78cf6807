//! Raw compute kernels behind the differentiable ops. Pure functions on
//! slices; all parallel paths write disjoint output chunks so results do
//! not depend on scheduling.

use crate::num::Elem;
use rayon::prelude::*;

/// C[m,n] = A[m,k] * B[k,n], row-major.
pub fn matmul<T: Elem>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let flops = m * k * n;
    let body = |i0: usize, rows: &mut [T]| {
        for (di, crow) in rows.chunks_mut(n).enumerate() {
            let arow = &a[(i0 + di) * k..(i0 + di) * k + k];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n..p * n + n];
                for (c, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *c += av * bv;
                }
            }
        }
    };
    if flops >= 1 << 16 && m > 1 {
        let rows_per = m.div_ceil(rayon::current_num_threads() * 4).max(8);
        out.par_chunks_mut(rows_per * n)
            .enumerate()
            .for_each(|(ci, chunk)| body(ci * rows_per, chunk));
    } else {
        body(0, &mut out);
    }
    out
}

pub fn transpose2d<T: Elem>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

/// Broadcast-result shape of two operand shapes (right-aligned, numpy
/// rules), or None if incompatible.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for d in 0..nd {
        let da = if d < nd - a.len() { 1 } else { a[d - (nd - a.len())] };
        let db = if d < nd - b.len() { 1 } else { b[d - (nd - b.len())] };
        if da != db && da != 1 && db != 1 {
            return None;
        }
        out[d] = da.max(db);
    }
    Some(out)
}

/// Strides for reading an operand of `shape` at positions of `out_shape`
/// (0 where the operand is broadcast).
fn bcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let own = row_major_strides(shape);
    let off = nd - shape.len();
    (0..nd)
        .map(|d| {
            if d < off || shape[d - off] == 1 {
                0
            } else {
                own[d - off]
            }
        })
        .collect()
}

/// Elementwise binary op with broadcasting.
pub fn broadcast_apply<T: Elem>(
    a: &[T],
    a_shape: &[usize],
    b: &[T],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    let numel: usize = out_shape.iter().product();
    // Same-shape fast path.
    if a_shape == out_shape && b_shape == out_shape {
        return a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
    }
    // Scalar operand fast paths.
    if b.len() == 1 && a_shape == out_shape {
        let s = b[0];
        return a.iter().map(|&x| f(x, s)).collect();
    }
    if a.len() == 1 && b_shape == out_shape {
        let s = a[0];
        return b.iter().map(|&y| f(s, y)).collect();
    }
    // Trailing-suffix fast path: operand repeats contiguously.
    if a_shape == out_shape && is_suffix(b_shape, out_shape) {
        let bl = b.len();
        return a
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b[i % bl]))
            .collect();
    }
    if b_shape == out_shape && is_suffix(a_shape, out_shape) {
        let al = a.len();
        return b
            .iter()
            .enumerate()
            .map(|(i, &y)| f(a[i % al], y))
            .collect();
    }
    // General strided path.
    let sa = bcast_strides(a_shape, out_shape);
    let sb = bcast_strides(b_shape, out_shape);
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut oa = 0usize;
    let mut ob = 0usize;
    let mut out = Vec::with_capacity(numel);
    for _ in 0..numel {
        out.push(f(a[oa], b[ob]));
        for d in (0..nd).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
        }
    }
    out
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    if small.len() > big.len() {
        return false;
    }
    let off = big.len() - small.len();
    small.iter().enumerate().all(|(d, &s)| s == big[off + d]) && !small.is_empty()
}

/// Sum `data` (of `in_shape`) down to `out_shape` (the adjoint of
/// broadcasting `out_shape` up to `in_shape`).
pub fn reduce_sum_to<T: Elem>(data: &[T], in_shape: &[usize], out_shape: &[usize]) -> Vec<T> {
    if in_shape == out_shape {
        return data.to_vec();
    }
    let out_numel: usize = out_shape.iter().product();
    let mut out = vec![T::zero(); out_numel];
    if out_numel == 1 {
        out[0] = pairwise_sum(data);
        return out;
    }
    if is_suffix(out_shape, in_shape) {
        for (i, &v) in data.iter().enumerate() {
            out[i % out_numel] += v;
        }
        return out;
    }
    let so = bcast_strides(out_shape, in_shape);
    let nd = in_shape.len();
    let mut idx = vec![0usize; nd];
    let mut oo = 0usize;
    for &v in data.iter() {
        out[oo] += v;
        for d in (0..nd).rev() {
            idx[d] += 1;
            oo += so[d];
            if idx[d] < in_shape[d] {
                break;
            }
            idx[d] = 0;
            oo -= so[d] * in_shape[d];
        }
    }
    out
}

/// Deterministic fixed-structure pairwise sum.
pub fn pairwise_sum<T: Elem>(data: &[T]) -> T {
    const LEAF: usize = 128;
    if data.len() <= LEAF {
        let mut s = T::zero();
        for &v in data {
            s += v;
        }
        return s;
    }
    let mid = data.len() / 2;
    pairwise_sum(&data[..mid]) + pairwise_sum(&data[mid..])
}

/// Broadcast `data` of `in_shape` up to `out_shape`.
pub fn broadcast_to<T: Elem>(data: &[T], in_shape: &[usize], out_shape: &[usize]) -> Vec<T> {
    broadcast_apply(
        data,
        in_shape,
        &[T::zero()],
        &[1],
        out_shape,
        |x, _| x,
    )
}

/// Exclusive prefix sum along the last axis.
pub fn cumsum_exclusive<T: Elem>(data: &[T], last: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for (row_in, row_out) in data.chunks(last).zip(out.chunks_mut(last)) {
        let mut acc = T::zero();
        for (i, &v) in row_in.iter().enumerate() {
            row_out[i] = acc;
            acc += v;
        }
    }
    out
}

/// Reverse along the last axis.
pub fn flip_last<T: Elem>(data: &[T], last: usize) -> Vec<T> {
    let mut out = data.to_vec();
    for row in out.chunks_mut(last) {
        row.reverse();
    }
    out
}

// ---- image kernels (NHWC layout) ----

pub struct Conv2dDims {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dDims {
    pub fn out_hw(&self) -> (usize, usize) {
        let oh = (self.h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (self.w + 2 * self.pad - self.k) / self.stride + 1;
        (oh, ow)
    }
}

/// Unfold patches: [B,H,W,C] -> [B*OH*OW, K*K*C] with explicit zero padding.
pub fn im2col<T: Elem>(x: &[T], d: &Conv2dDims) -> Vec<T> {
    let (oh, ow) = d.out_hw();
    let patch = d.k * d.k * d.c;
    let mut out = vec![T::zero(); d.batch * oh * ow * patch];
    for b in 0..d.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * patch;
                for ky in 0..d.k {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.k {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let src = ((b * d.h + iy as usize) * d.w + ix as usize) * d.c;
                        let dst = row + (ky * d.k + kx) * d.c;
                        out[dst..dst + d.c].copy_from_slice(&x[src..src + d.c]);
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add patches back to [B,H,W,C].
pub fn col2im<T: Elem>(cols: &[T], d: &Conv2dDims) -> Vec<T> {
    let (oh, ow) = d.out_hw();
    let patch = d.k * d.k * d.c;
    let mut out = vec![T::zero(); d.batch * d.h * d.w * d.c];
    for b in 0..d.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * patch;
                for ky in 0..d.k {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    for kx in 0..d.k {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix < 0 || ix >= d.w as isize {
                            continue;
                        }
                        let dst = ((b * d.h + iy as usize) * d.w + ix as usize) * d.c;
                        let src = row + (ky * d.k + kx) * d.c;
                        for ch in 0..d.c {
                            out[dst + ch] += cols[src + ch];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2x average pooling: [B,H,W,C] -> [B,H/2,W/2,C]. H and W must be even.
pub fn avg_pool2<T: Elem>(x: &[T], b: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = crate::num::c::<T>(0.25);
    let mut out = vec![T::zero(); b * oh * ow * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = ((bi * oh + oy) * ow + ox) * c;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c;
                    for ch in 0..c {
                        out[dst + ch] += x[src + ch];
                    }
                }
                for ch in 0..c {
                    out[dst + ch] *= quarter;
                }
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling: [B,H,W,C] -> [B,2H,2W,C].
pub fn upsample2<T: Elem>(x: &[T], b: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); b * oh * ow * c];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((bi * h + oy / 2) * w + ox / 2) * c;
                let dst = ((bi * oh + oy) * ow + ox) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    out
}

struct BilinearCell {
    x0: usize,
    y0: usize,
    fx: f64,
    fy: f64,
    inside_x: bool,
    inside_y: bool,
}

/// Corner cell for a continuous coordinate, clamped to the image border.
/// Coordinates are in pixel units with (0,0) at the centre of the top-left
/// pixel, x along width, y along height.
fn bilinear_cell(x: f64, y: f64, h: usize, w: usize) -> BilinearCell {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = (xc.floor() as usize).min(w.saturating_sub(2));
    let y0 = (yc.floor() as usize).min(h.saturating_sub(2));
    BilinearCell {
        x0,
        y0,
        fx: xc - x0 as f64,
        fy: yc - y0 as f64,
        inside_x: (0.0..=(w - 1) as f64).contains(&x),
        inside_y: (0.0..=(h - 1) as f64).contains(&y),
    }
}

/// Bilinear lookup: img [H,W,C], coords [N,2] (x,y) -> [N,C].
pub fn bilinear_sample<T: Elem>(
    img: &[T],
    h: usize,
    w: usize,
    c: usize,
    coords: &[T],
    n: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * c];
    for i in 0..n {
        let cell = bilinear_cell(coords[2 * i].as_f64(), coords[2 * i + 1].as_f64(), h, w);
        let (x0, y0) = (cell.x0, cell.y0);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let (fx, fy) = (crate::num::c::<T>(cell.fx), crate::num::c::<T>(cell.fy));
        let one = T::one();
        for ch in 0..c {
            let i00 = img[(y0 * w + x0) * c + ch];
            let i01 = img[(y0 * w + x1) * c + ch];
            let i10 = img[(y1 * w + x0) * c + ch];
            let i11 = img[(y1 * w + x1) * c + ch];
            out[i * c + ch] = (one - fy) * ((one - fx) * i00 + fx * i01)
                + fy * ((one - fx) * i10 + fx * i11);
        }
    }
    out
}

/// Adjoint of [`bilinear_sample`] with respect to the image.
pub fn bilinear_scatter<T: Elem>(
    grad: &[T],
    h: usize,
    w: usize,
    c: usize,
    coords: &[T],
    n: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); h * w * c];
    for i in 0..n {
        let cell = bilinear_cell(coords[2 * i].as_f64(), coords[2 * i + 1].as_f64(), h, w);
        let (x0, y0) = (cell.x0, cell.y0);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let (fx, fy) = (crate::num::c::<T>(cell.fx), crate::num::c::<T>(cell.fy));
        let one = T::one();
        for ch in 0..c {
            let g = grad[i * c + ch];
            out[(y0 * w + x0) * c + ch] += (one - fy) * (one - fx) * g;
            out[(y0 * w + x1) * c + ch] += (one - fy) * fx * g;
            out[(y1 * w + x0) * c + ch] += fy * (one - fx) * g;
            out[(y1 * w + x1) * c + ch] += fy * fx * g;
        }
    }
    out
}

/// Gradient of the bilinear lookup with respect to the coordinates.
/// Zero outside the image (the sample is clamped there).
pub fn bilinear_coord_grad<T: Elem>(
    img: &[T],
    h: usize,
    w: usize,
    c: usize,
    coords: &[T],
    n: usize,
    grad_out: &[T],
) -> Vec<T> {
    let mut out = vec![T::zero(); n * 2];
    for i in 0..n {
        let cell = bilinear_cell(coords[2 * i].as_f64(), coords[2 * i + 1].as_f64(), h, w);
        let (x0, y0) = (cell.x0, cell.y0);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let (fx, fy) = (crate::num::c::<T>(cell.fx), crate::num::c::<T>(cell.fy));
        let one = T::one();
        let mut gx = T::zero();
        let mut gy = T::zero();
        for ch in 0..c {
            let i00 = img[(y0 * w + x0) * c + ch];
            let i01 = img[(y0 * w + x1) * c + ch];
            let i10 = img[(y1 * w + x0) * c + ch];
            let i11 = img[(y1 * w + x1) * c + ch];
            let g = grad_out[i * c + ch];
            gx += g * ((one - fy) * (i01 - i00) + fy * (i11 - i10));
            gy += g * ((one - fx) * (i10 - i00) + fx * (i11 - i01));
        }
        out[2 * i] = if cell.inside_x { gx } else { T::zero() };
        out[2 * i + 1] = if cell.inside_y { gy } else { T::zero() };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let c = matmul::<f32>(&[1., 2., 3., 4.], &[5., 6., 7., 8.], 2, 2, 2);
        assert_eq!(c, vec![19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_parallel_matches_serial() {
        let m = 257;
        let k = 33;
        let n = 19;
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 29) % 17) as f64 - 8.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 13) % 11) as f64 - 5.0).collect();
        let fast = matmul(&a, &b, m, k, n);
        let mut slow = vec![0.0f64; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    slow[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        assert_eq!(fast, slow);
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[4, 1, 3], &[2, 3]), Some(vec![4, 2, 3]));
        assert_eq!(broadcast_shape(&[4, 2], &[3]), None);
        let out = broadcast_apply(
            &[1.0f32, 2.0],
            &[2, 1],
            &[10.0, 20.0, 30.0],
            &[3],
            &[2, 3],
            |a, b| a + b,
        );
        assert_eq!(out, vec![11., 21., 31., 12., 22., 32.]);
    }

    #[test]
    fn reduce_is_broadcast_adjoint() {
        let r = reduce_sum_to(&[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], &[3]);
        assert_eq!(r, vec![5.0, 7.0, 9.0]);
        let r = reduce_sum_to(&[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3], &[2, 1]);
        assert_eq!(r, vec![6.0, 15.0]);
    }

    #[test]
    fn cumsum_exclusive_rows() {
        let y = cumsum_exclusive(&[1.0f32, 2.0, 3.0, 10.0, 20.0, 30.0], 3);
        assert_eq!(y, vec![0.0, 1.0, 3.0, 0.0, 10.0, 30.0]);
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let d = Conv2dDims {
            batch: 2,
            h: 5,
            w: 4,
            c: 3,
            k: 3,
            stride: 2,
            pad: 1,
        };
        let xn = d.batch * d.h * d.w * d.c;
        let x: Vec<f64> = (0..xn).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let cols = im2col(&x, &d);
        let y: Vec<f64> = (0..cols.len()).map(|i| ((i * 11) % 7) as f64 - 3.0).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, &d);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn bilinear_center_of_2x2() {
        let img = [0.0f64, 1.0, 2.0, 3.0];
        let out = bilinear_sample(&img, 2, 2, 1, &[0.5, 0.5], 1);
        assert!((out[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_scatter_adjoint() {
        let img: Vec<f64> = (0..4 * 5 * 2).map(|i| (i as f64) * 0.37 - 3.0).collect();
        let coords = [0.3f64, 1.7, 3.9, 0.1, 2.5, 2.5];
        let n = 3;
        let g: Vec<f64> = (0..n * 2).map(|i| (i as f64) - 2.5).collect();
        let sampled = bilinear_sample(&img, 4, 5, 2, &coords, n);
        let lhs: f64 = sampled.iter().zip(&g).map(|(a, b)| a * b).sum();
        let scat = bilinear_scatter(&g, 4, 5, 2, &coords, n);
        let rhs: f64 = img.iter().zip(&scat).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
