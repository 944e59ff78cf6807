//! Differentiable 3x3 singular value decomposition and the rotation
//! projection built on it.
//!
//! The forward pass runs in f64 internally regardless of tensor precision
//! (it is a 3x3 solve; robustness is worth more than the cast). The
//! backward pass uses the standard SVD adjoint with the pairwise factor
//! 1/(s_j^2 - s_i^2) clamped in magnitude, so near-degenerate spectra give
//! bounded approximate gradients instead of blow-ups.

use super::graph::{op_outputs, VjpFn};
use super::Tensor;
use crate::error::D3dError;
use crate::num::{c, Elem};

/// Magnitude cap for the pairwise spectral factor in the SVD adjoint.
pub const SVD_GRAD_CLAMP: f64 = 1e6;

type M3 = [[f64; 3]; 3];

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mat_t(a: &M3) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub(crate) fn det3(a: &M3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Jacobi eigendecomposition of a symmetric 3x3: returns (eigenvalues,
/// eigenvectors as columns), unsorted.
fn sym_eigen3(a: &M3) -> ([f64; 3], M3) {
    let mut a = *a;
    let mut v = [[0.0; 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-30 * (diag + 1e-300) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq.abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let cos = 1.0 / (t * t + 1.0).sqrt();
            let sin = t * cos;
            // Apply rotation on both sides of A and accumulate into V.
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = cos * akp - sin * akq;
                a[k][q] = sin * akp + cos * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = cos * apk - sin * aqk;
                a[q][k] = sin * apk + cos * aqk;
            }
            for row in v.iter_mut() {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = cos * vkp - sin * vkq;
                row[q] = sin * vkp + cos * vkq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

fn normalize(v: &mut [f64; 3]) -> f64 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Plain (non-differentiable) SVD of one 3x3 in f64: M = U diag(S) V^T with
/// S descending and non-negative, U and V orthogonal.
pub(crate) fn svd3_f64(m: &M3) -> (M3, [f64; 3], M3) {
    let mtm = mat_mul(&mat_t(m), m);
    let (vals, vecs) = sym_eigen3(&mtm);
    // Sort eigenpairs descending.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).expect("finite eigenvalues"));
    let mut s = [0.0; 3];
    let mut v = [[0.0; 3]; 3];
    for (k, &i) in order.iter().enumerate() {
        s[k] = vals[i].max(0.0).sqrt();
        for r in 0..3 {
            v[r][k] = vecs[r][i];
        }
    }
    // U columns: M v_k / s_k, completed orthonormally for tiny s.
    let scale = s[0].max(1e-300);
    let mut ucols: [[f64; 3]; 3] = [[0.0; 3]; 3];
    let mut good = [false; 3];
    for k in 0..3 {
        if s[k] > 1e-12 * scale {
            let mut col = [0.0; 3];
            for r in 0..3 {
                col[r] = m[r][0] * v[0][k] + m[r][1] * v[1][k] + m[r][2] * v[2][k];
            }
            for x in col.iter_mut() {
                *x /= s[k];
            }
            normalize(&mut col);
            ucols[k] = col;
            good[k] = true;
        }
    }
    // Fill missing columns with an orthonormal completion.
    for k in 0..3 {
        if good[k] {
            continue;
        }
        let mut cand = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        if let Some(first) = (0..3).find(|&j| good[j]) {
            if let Some(second) = (first + 1..3).find(|&j| good[j]) {
                cand[0] = cross(&ucols[first], &ucols[second]);
            } else {
                // One good column: pick any perpendicular.
                let u = ucols[first];
                let pick = if u[0].abs() < 0.9 {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 1.0, 0.0]
                };
                cand[0] = cross(&u, &pick);
            }
        }
        for mut col in cand {
            // Gram-Schmidt against established columns.
            for j in 0..3 {
                if !good[j] {
                    continue;
                }
                let d = col[0] * ucols[j][0] + col[1] * ucols[j][1] + col[2] * ucols[j][2];
                for r in 0..3 {
                    col[r] -= d * ucols[j][r];
                }
            }
            if normalize(&mut col) > 1e-8 {
                ucols[k] = col;
                good[k] = true;
                break;
            }
        }
    }
    let mut u = [[0.0; 3]; 3];
    for k in 0..3 {
        for r in 0..3 {
            u[r][k] = ucols[k][r];
        }
    }
    (u, s, v)
}

fn read_mats<T: Elem>(t: &Tensor<T>) -> Vec<M3> {
    let n = t.numel() / 9;
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = t.data()[b * 9 + i * 3 + j].as_f64();
            }
        }
        out.push(m);
    }
    out
}

/// Differentiable SVD of 3x3 matrices. Accepts [3,3] or [K,3,3]; returns
/// (U, S, V) of shapes matching the input batching, with S descending and
/// non-negative and M = U diag(S) V^T.
///
/// Gradients flow from all three outputs back to M; the backward pass is
/// first-order (it does not extend a higher-order graph).
pub fn svd3<T: Elem>(m: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), D3dError> {
    let shape = m.shape().to_vec();
    let batched = match shape.as_slice() {
        [3, 3] => false,
        [_, 3, 3] => true,
        _ => {
            return Err(D3dError::Autodiff(format!(
                "svd3: expected [3,3] or [K,3,3], got {shape:?}"
            )))
        }
    };
    if !m.all_finite() {
        return Err(D3dError::Autodiff("svd3: non-finite input".into()));
    }
    let mats = read_mats(m);
    let k = mats.len();
    let mut u_data = Vec::with_capacity(k * 9);
    let mut s_data = Vec::with_capacity(k * 3);
    let mut v_data = Vec::with_capacity(k * 9);
    let mut triples = Vec::with_capacity(k);
    for mat in &mats {
        let (u, s, v) = svd3_f64(mat);
        for row in &u {
            u_data.extend(row.iter().map(|&x| c::<T>(x)));
        }
        s_data.extend(s.iter().map(|&x| c::<T>(x)));
        for row in &v {
            v_data.extend(row.iter().map(|&x| c::<T>(x)));
        }
        triples.push((u, s, v));
    }
    let (u_shape, s_shape, v_shape) = if batched {
        (vec![k, 3, 3], vec![k, 3], vec![k, 3, 3])
    } else {
        (vec![3, 3], vec![3], vec![3, 3])
    };

    let vjp: VjpFn<T> = Box::new(move |gouts, needs| {
        if !needs[0] {
            return vec![None];
        }
        let mut grad = vec![T::zero(); k * 9];
        for (b, (u, s, v)) in triples.iter().enumerate() {
            let gu = read_slot(&gouts[0], b, 9);
            let gs = read_slot(&gouts[1], b, 3);
            let gv = read_slot(&gouts[2], b, 9);
            let gm = svd3_adjoint(u, s, v, &gu, &gs, &gv);
            for i in 0..3 {
                for j in 0..3 {
                    grad[b * 9 + i * 3 + j] = c(gm[i][j]);
                }
            }
        }
        let gshape = if batched { vec![k, 3, 3] } else { vec![3, 3] };
        vec![Some(Tensor::from_vec(&gshape, grad))]
    });

    let mut outs = op_outputs(
        &[m],
        vec![(u_shape, u_data), (s_shape, s_data), (v_shape, v_data)],
        vjp,
    );
    let v = outs.pop().expect("v");
    let s = outs.pop().expect("s");
    let u = outs.pop().expect("u");
    Ok((u, s, v))
}

fn read_slot<T: Elem>(g: &Option<Tensor<T>>, b: usize, len: usize) -> Vec<f64> {
    match g {
        Some(t) => t.data()[b * len..(b + 1) * len]
            .iter()
            .map(|x| x.as_f64())
            .collect(),
        None => vec![0.0; len],
    }
}

/// Reverse-mode adjoint of the 3x3 SVD with clamped spectral factor.
fn svd3_adjoint(u: &M3, s: &[f64; 3], v: &M3, gu: &[f64], gs: &[f64], gv: &[f64]) -> M3 {
    let gu_m: M3 = [
        [gu[0], gu[1], gu[2]],
        [gu[3], gu[4], gu[5]],
        [gu[6], gu[7], gu[8]],
    ];
    let gv_m: M3 = [
        [gv[0], gv[1], gv[2]],
        [gv[3], gv[4], gv[5]],
        [gv[6], gv[7], gv[8]],
    ];
    let gu_t_u = mat_mul(&mat_t(u), &gu_m);
    let gv_t_v = mat_mul(&mat_t(v), &gv_m);
    let mut x = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                x[i][j] = gs[i];
                continue;
            }
            let denom = s[j] * s[j] - s[i] * s[i];
            let f = (1.0 / denom).clamp(-SVD_GRAD_CLAMP, SVD_GRAD_CLAMP);
            let au = gu_t_u[i][j] - gu_t_u[j][i];
            let av = gv_t_v[i][j] - gv_t_v[j][i];
            x[i][j] = f * au * s[j] + s[i] * f * av;
        }
    }
    mat_mul(&mat_mul(u, &x), &mat_t(v))
}

/// Nearest rotation to M in the Frobenius sense:
/// R = U diag(1, 1, det(U V^T)) V^T. Differentiable through U and V.
///
/// Rejects near-singular inputs (smallest singular value <= 1e-8 relative)
/// so callers can skip the pose term for that batch.
pub fn svd_orthogonalize<T: Elem>(m: &Tensor<T>) -> Result<Tensor<T>, D3dError> {
    if m.shape() != [3, 3] {
        return Err(D3dError::Autodiff(format!(
            "svd_orthogonalize: expected [3,3], got {:?}",
            m.shape()
        )));
    }
    let (u, s, v) = svd3(m)?;
    let smin = s.data()[2].as_f64();
    let smax = s.data()[0].as_f64().max(1e-300);
    if smin <= 1e-8 * smax.max(1.0) {
        return Err(D3dError::DegenerateRotation { smin });
    }
    // Sign correction is locally constant: keep it out of the graph.
    let um = read_mats(&u.detach());
    let vm = read_mats(&v.detach());
    let det = det3(&mat_mul(&um[0], &mat_t(&vm[0])));
    let sign = if det < 0.0 { -1.0 } else { 1.0 };
    let corr = Tensor::from_f64_slice(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, sign]);
    Ok(u.matmul(&corr).matmul(&v.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;

    fn frob(t: &Tensor<f64>) -> f64 {
        t.data().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn random_m3(stream: &mut crate::rng::RngStream) -> Tensor<f64> {
        Tensor::from_f64_slice(&[3, 3], &(0..9).map(|_| stream.normal()).collect::<Vec<_>>())
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let m = Tensor::<f64>::from_f64_slice(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let (u, s, v) = svd3(&m).unwrap();
        for i in 0..3 {
            assert!((s.data()[i] - 1.0).abs() < 1e-12);
        }
        let uvt = u.matmul(&v.t());
        let gram = uvt.t().matmul(&uvt);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram.at(&[i, j]) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn diagonal_spectrum_sorted() {
        let m = Tensor::<f64>::from_f64_slice(&[3, 3], &[3., 0., 0., 0., 2., 0., 0., 0., 1.]);
        let (_, s, _) = svd3(&m).unwrap();
        assert!((s.data()[0] - 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 2.0).abs() < 1e-12);
        assert!((s.data()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_and_orthogonality_random() {
        let mut stream = RngKey::new(42).stream();
        for _ in 0..200 {
            let m = random_m3(&mut stream);
            let (u, s, v) = svd3(&m).unwrap();
            assert!(s.data()[0] >= s.data()[1] && s.data()[1] >= s.data()[2]);
            assert!(s.data()[2] >= 0.0);
            let sd = Tensor::from_f64_slice(
                &[3, 3],
                &[
                    s.data()[0],
                    0.,
                    0.,
                    0.,
                    s.data()[1],
                    0.,
                    0.,
                    0.,
                    s.data()[2],
                ],
            );
            let recon = u.matmul(&sd).matmul(&v.t());
            assert!(frob(&recon.sub(&m)) < 1e-5, "reconstruction error");
            for q in [&u, &v] {
                let gram = q.t().matmul(q);
                for i in 0..3 {
                    for j in 0..3 {
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!((gram.at(&[i, j]) - want).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn orthogonalize_identity_and_scale() {
        let eye = Tensor::<f64>::from_f64_slice(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let r = svd_orthogonalize(&eye).unwrap();
        assert!(frob(&r.sub(&eye)) < 1e-10);
        let r2 = svd_orthogonalize(&eye.scale(2.0)).unwrap();
        assert!(frob(&r2.sub(&eye)) < 1e-10);
    }

    #[test]
    fn orthogonalize_fixes_reflection() {
        // diag(1,1,-1): U=I, S=(1,1,1), V=diag(1,1,-1); det(UV^T)=-1 flips
        // the last axis back, giving R = I.
        let eye = Tensor::<f64>::from_f64_slice(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let m = Tensor::<f64>::from_f64_slice(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., -1.]);
        let r = svd_orthogonalize(&m).unwrap();
        assert!(frob(&r.sub(&eye)) < 1e-10, "got {r:?}");
    }

    #[test]
    fn orthogonalize_always_proper_rotation() {
        let mut stream = RngKey::new(7).stream();
        let mut checked = 0;
        while checked < 1000 {
            let m = random_m3(&mut stream);
            let r = match svd_orthogonalize(&m) {
                Ok(r) => r,
                Err(_) => continue, // degenerate draw: skipped by contract
            };
            checked += 1;
            let gram = r.t().matmul(&r);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram.at(&[i, j]) - want).abs() < 1e-5);
                }
            }
            let rm = read_mats(&r);
            assert!((det3(&rm[0]) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn orthogonalize_scale_invariant_random() {
        let mut stream = RngKey::new(9).stream();
        for _ in 0..100 {
            let m = random_m3(&mut stream);
            let (Ok(r1), Ok(r2)) = (svd_orthogonalize(&m), svd_orthogonalize(&m.scale(3.7)))
            else {
                continue;
            };
            assert!(frob(&r1.sub(&r2)) < 1e-5);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let m = Tensor::<f64>::from_f64_slice(&[3, 3], &[f64::NAN; 9]);
        assert!(svd3(&m).is_err());
    }

    #[test]
    fn near_singular_rejected_with_degeneracy() {
        let m = Tensor::<f64>::from_f64_slice(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 0.]);
        match svd_orthogonalize(&m) {
            Err(D3dError::DegenerateRotation { .. }) => {}
            other => panic!("expected degeneracy signal, got {other:?}"),
        }
    }
}

#[cfg(test)]
mod grad_tests {
    use super::*;
    use crate::rng::RngKey;
    use crate::tensor::gradcheck::grad_check_fn;

    /// Random matrix with singular-value gaps > 0.1 (well-separated spectra).
    fn gapped_matrix(stream: &mut crate::rng::RngStream) -> Option<Tensor<f64>> {
        let m = Tensor::from_f64_slice(
            &[3, 3],
            &(0..9).map(|_| stream.normal()).collect::<Vec<_>>(),
        );
        let (_, s, _) = svd3(&m).ok()?;
        let sd = s.data();
        (sd[0] - sd[1] > 0.1 && sd[1] - sd[2] > 0.1 && sd[2] > 0.1).then_some(m)
    }

    #[test]
    fn svd_gradient_matches_finite_differences() {
        let mut stream = RngKey::new(31).stream();
        let pu = Tensor::from_f64_slice(&[3, 3], &(0..9).map(|_| stream.normal()).collect::<Vec<_>>());
        let ps = Tensor::from_f64_slice(&[3], &(0..3).map(|_| stream.normal()).collect::<Vec<_>>());
        let pv = Tensor::from_f64_slice(&[3, 3], &(0..9).map(|_| stream.normal()).collect::<Vec<_>>());
        let mut checked = 0;
        while checked < 20 {
            let Some(m) = gapped_matrix(&mut stream) else { continue };
            checked += 1;
            let check = grad_check_fn(
                "svd3",
                |ins| {
                    let (u, s, v) = svd3(&ins[0]).unwrap();
                    u.mul(&pu)
                        .sum_all()
                        .add(&s.mul(&ps).sum_all())
                        .add(&v.mul(&pv).sum_all())
                },
                &[m],
                1e-4,
                1e-3,
                16,
            );
            assert!(check.pass(), "{check:?}");
        }
    }

    #[test]
    fn orthogonalize_gradient_matches_finite_differences() {
        let mut stream = RngKey::new(77).stream();
        let proj = Tensor::from_f64_slice(&[3, 3], &(0..9).map(|_| stream.normal()).collect::<Vec<_>>());
        let mut checked = 0;
        while checked < 20 {
            let Some(m) = gapped_matrix(&mut stream) else { continue };
            checked += 1;
            let check = grad_check_fn(
                "svd_orthogonalize",
                |ins| svd_orthogonalize(&ins[0]).unwrap().mul(&proj).sum_all(),
                &[m],
                1e-4,
                1e-3,
                16,
            );
            assert!(check.pass(), "{check:?}");
        }
    }
}
