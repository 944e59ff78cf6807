//! Training objectives: non-saturating adversarial loss with R1 penalty,
//! pose regularization via Procrustes rotation fitting, the composite stage
//! objectives, inverse-deformation consistency, and the embedding loss.

use crate::camera::Camera;
use crate::discriminator::{disc_forward, disc_forward_features, DiscConfig};
use crate::error::{D3dError, Result};
use crate::num::{c, Elem};
use crate::params::ParamSet;
use crate::tensor::graph::backward;
use crate::tensor::ops::{bilinear_sample, concat};
use crate::tensor::svd3::svd_orthogonalize;
use crate::tensor::Tensor;

/// Loss coefficients. Defaults follow the published head-dataset settings.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// R1 coefficient (lambda).
    pub lambda_r1: f64,
    pub lambda_pose: f64,
    pub lambda_img: f64,
    pub lambda_inv: f64,
    pub lambda_perc: f64,
    pub lambda_reg: f64,
    /// Rendering-weight cutoff selecting points for the pose fit.
    pub weight_threshold: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_r1: 1.0,
            lambda_pose: 50.0,
            lambda_img: 0.001,
            lambda_inv: 1.0,
            lambda_perc: 1.0,
            lambda_reg: 10.0,
            weight_threshold: 0.02,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_r1,
            self.lambda_pose,
            self.lambda_img,
            self.lambda_inv,
            self.lambda_perc,
            self.lambda_reg,
            self.weight_threshold,
        ];
        if all.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(D3dError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Critic objective: softplus(-real) + softplus(fake), batch-averaged,
/// plus lambda times the R1 term.
pub fn disc_loss<T: Elem>(
    real_logits: &Tensor<T>,
    fake_logits: &Tensor<T>,
    r1_term: &Tensor<T>,
    lambda: f64,
) -> Tensor<T> {
    let real = real_logits.neg().softplus().mean_all();
    let fake = fake_logits.softplus().mean_all();
    real.add(&fake).add(&r1_term.scale(lambda))
}

/// Non-saturating generator objective: mean softplus(-fake).
pub fn gen_loss<T: Elem>(fake_logits: &Tensor<T>) -> Tensor<T> {
    fake_logits.neg().softplus().mean_all()
}

/// R1 penalty of an arbitrary per-image critic: squared norm of the input
/// gradient, summed over pixels/channels and averaged over the batch. The
/// returned tensor participates in the graph, so optimizing it trains the
/// critic parameters (gradients of gradients).
pub fn r1_penalty_with<T: Elem>(
    critic: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    real_images: &Tensor<T>,
) -> Result<Tensor<T>> {
    let batch = real_images.shape()[0];
    let imgs = real_images.detach().tracked();
    let logits = critic(&imgs)?;
    // Per-image logits are independent, so the gradient of the sum gives
    // each image's own gradient.
    let grads = backward(&logits.sum_all(), true)?;
    let g = grads.get(&imgs).ok_or_else(|| {
        D3dError::Autodiff("r1_penalty: critic does not differentiate through its input".into())
    })?;
    Ok(g.mul(g).sum_all().scale(1.0 / batch as f64))
}

/// R1 penalty of the convolutional critic on real images.
pub fn r1_penalty<T: Elem>(
    cfg: &DiscConfig,
    params: &ParamSet<T>,
    real_images: &Tensor<T>,
) -> Result<Tensor<T>> {
    r1_penalty_with(|imgs| disc_forward(cfg, params, imgs), real_images)
}

/// Minimum points the pose fit needs after thresholding.
pub const POSE_FIT_MIN_POINTS: usize = 16;

/// Global rotation component of a deformation field by weighted Procrustes:
/// both point sets are centred at their weighted centroids, the weighted
/// cross-covariance between them is formed, and its SVD orthogonalization
/// gives the rotation R best aligning deformed points x onto canonical
/// points x'. Differentiable through `x_prime` and `weights`.
pub fn fit_global_rotation<T: Elem>(
    x: &Tensor<T>,
    x_prime: &Tensor<T>,
    weights: &Tensor<T>,
    threshold: f64,
) -> Result<Tensor<T>> {
    let n = x.shape()[0];
    if x.shape() != x_prime.shape() || x.shape()[1] != 3 || weights.numel() != n {
        return Err(D3dError::PoseFit(format!(
            "fit_global_rotation: shapes x {:?}, x' {:?}, w {:?}",
            x.shape(),
            x_prime.shape(),
            weights.shape()
        )));
    }
    let selected: Vec<usize> = (0..n)
        .filter(|&i| weights.data()[i].as_f64() > threshold)
        .collect();
    if selected.len() < POSE_FIT_MIN_POINTS {
        return Err(D3dError::PoseFit(format!(
            "fit_global_rotation: only {} points above threshold {threshold} (need {})",
            selected.len(),
            POSE_FIT_MIN_POINTS
        )));
    }
    let xs = x.gather_rows(&selected);
    let xps = x_prime.gather_rows(&selected);
    let w = weights.reshape(&[n]).gather_rows(&selected);
    let k = selected.len();
    let wcol = w.reshape(&[k, 1]);
    let wsum = w.sum_all().max_scalar(1e-12);
    let cx = xs.mul(&wcol).reduce_sum_to(&[3]).div(&wsum);
    let cxp = xps.mul(&wcol).reduce_sum_to(&[3]).div(&wsum);
    let xc = xs.sub(&cx);
    let xpc = xps.sub(&cxp);
    // Cross-covariance of canonical against deformed points; its nearest
    // rotation maps x-space onto x'-space, recovering a planted x' = Q x
    // as R = Q.
    let cross = xpc.mul(&wcol).t().matmul(&xc);
    svd_orthogonalize(&cross)
}

/// Pose regularization: squared Frobenius distance of R from the identity.
pub fn pose_loss<T: Elem>(r: &Tensor<T>) -> Tensor<T> {
    let eye = Tensor::from_f64_slice(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
    let d = r.sub(&eye);
    d.mul(&d).sum_all()
}

/// First-stage objective: adversarial plus weighted pose term.
pub fn stage1_loss<T: Elem>(
    adv: &Tensor<T>,
    pose: Option<&Tensor<T>>,
    w: &LossWeights,
) -> Tensor<T> {
    match pose {
        Some(p) => adv.add(&p.scale(w.lambda_pose)),
        None => adv.clone(),
    }
}

/// Joint objective: adversarial + pose + inverse-consistency terms.
pub fn joint_loss<T: Elem>(
    adv: &Tensor<T>,
    pose: Option<&Tensor<T>>,
    inverse: Option<&Tensor<T>>,
    w: &LossWeights,
) -> Tensor<T> {
    let mut total = stage1_loss(adv, pose, w);
    if let Some(inv) = inverse {
        total = total.add(&inv.scale(w.lambda_inv));
    }
    total
}

/// Project world points to pixel coordinates of `cam` (differentiable with
/// respect to the points; the camera is a constant here).
pub fn project_points<T: Elem>(
    cam: &Camera,
    points: &Tensor<T>,
    h: usize,
    w: usize,
) -> Tensor<T> {
    let n = points.shape()[0];
    let (r, u, f, o) = cam.basis();
    let basis = Tensor::from_f64_slice(&[3, 3], &[r, u, f].concat());
    let origin = Tensor::from_f64_slice(&[3], &o);
    let q = points.sub(&origin).matmul(&basis.t());
    let qx = q.slice(1, 0, 1);
    let qy = q.slice(1, 1, 1);
    let qz = q.slice(1, 2, 1);
    let t = (cam.fov_deg.to_radians() / 2.0).tan();
    let aspect = w as f64 / h as f64;
    let px = qx
        .div(&qz)
        .scale(1.0 / (t * aspect))
        .add_scalar(1.0)
        .scale(w as f64 / 2.0)
        .add_scalar(-0.5);
    let py = qy
        .div(&qz)
        .scale(-1.0 / t)
        .add_scalar(1.0)
        .scale(h as f64 / 2.0)
        .add_scalar(-0.5);
    concat(&[&px, &py], 1).reshape(&[n, 2])
}

pub struct InverseLossOut<T: Elem> {
    pub loss: Tensor<T>,
    /// Fraction of points whose projection left the image (their color
    /// term was dropped).
    pub out_of_frame: f64,
}

/// Inverse-deformation consistency: squared geometric deviation of the
/// cycle points plus a bilinear color-lookup term on the rendered image.
/// Points projecting outside the image contribute the geometric term only.
pub fn inverse_loss<T: Elem>(
    x: &Tensor<T>,
    x_cycle: &Tensor<T>,
    image: &Tensor<T>,
    cam: &Camera,
    lambda_img: f64,
) -> Result<InverseLossOut<T>> {
    let n = x.shape()[0];
    if x.shape() != x_cycle.shape() || x.shape()[1] != 3 {
        return Err(D3dError::Autodiff(format!(
            "inverse_loss: point shapes {:?} vs {:?}",
            x.shape(),
            x_cycle.shape()
        )));
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let d = x_cycle.sub(x);
    let geometric = d.mul(&d).sum_axis(1).mean_all();

    let px = project_points(cam, x, h, w);
    let pxc = project_points(cam, x_cycle, h, w);
    let in_frame: Vec<usize> = (0..n)
        .filter(|&i| {
            let ok = |p: &Tensor<T>| {
                let xx = p.data()[2 * i].as_f64();
                let yy = p.data()[2 * i + 1].as_f64();
                xx >= 0.0 && xx <= (w - 1) as f64 && yy >= 0.0 && yy <= (h - 1) as f64
            };
            ok(&px) && ok(&pxc)
        })
        .collect();
    let out_of_frame = 1.0 - in_frame.len() as f64 / n.max(1) as f64;
    let loss = if in_frame.is_empty() || lambda_img == 0.0 {
        geometric
    } else {
        let ca = bilinear_sample(image, &px.gather_rows(&in_frame));
        let cb = bilinear_sample(image, &pxc.gather_rows(&in_frame));
        let dc = cb.sub(&ca);
        let color = dc.mul(&dc).sum_axis(1).mean_all();
        geometric.add(&color.scale(lambda_img))
    };
    Ok(InverseLossOut { loss, out_of_frame })
}

/// Embedding objective: L1 reconstruction + perceptual distance on critic
/// features + regularization of the FiLM parameters toward their running
/// mean.
pub fn embed_loss<T: Elem>(
    recon: &Tensor<T>,
    target: &Tensor<T>,
    film: &Tensor<T>,
    film_mean: &Tensor<T>,
    perc: Option<(&DiscConfig, &ParamSet<T>)>,
    w: &LossWeights,
) -> Result<Tensor<T>> {
    if recon.shape() != target.shape() {
        return Err(D3dError::Autodiff(format!(
            "embed_loss: resolution mismatch {:?} vs {:?}",
            recon.shape(),
            target.shape()
        )));
    }
    let l1 = recon.sub(target).abs().mean_all();
    let mut total = l1;
    if let Some((dcfg, dparams)) = perc {
        if w.lambda_perc > 0.0 {
            let (h, wd) = (recon.shape()[0], recon.shape()[1]);
            let as_batch = |t: &Tensor<T>| t.reshape(&[1, h, wd, 3]);
            let (_, fr) = disc_forward_features(dcfg, dparams, &as_batch(recon))?;
            let (_, ft) = disc_forward_features(dcfg, dparams, &as_batch(&target.detach()))?;
            let mid = fr.len() / 2;
            let d = fr[mid].sub(&ft[mid].detach());
            total = total.add(&d.mul(&d).mean_all().scale(w.lambda_perc));
        }
    }
    if w.lambda_reg > 0.0 {
        let d = film.sub(film_mean);
        total = total.add(&d.mul(&d).mean_all().scale(w.lambda_reg));
    }
    Ok(total)
}

/// Rotation matrix from an axis (need not be unit) and angle in radians.
pub fn axis_angle_rotation(axis: [f64; 3], angle: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngKey;
    use std::f64::consts::LN_2;

    fn scalar_t(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn disc_loss_at_zero_logits() {
        let real = Tensor::from_f64_slice(&[4], &[0.0; 4]);
        let fake = Tensor::from_f64_slice(&[4], &[0.0; 4]);
        let loss = disc_loss(&real, &fake, &scalar_t(0.0), 1.0);
        assert!((loss.item() - 2.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_critic_drives_loss_to_zero() {
        let real = Tensor::from_f64_slice(&[2], &[40.0; 2]);
        let fake = Tensor::from_f64_slice(&[2], &[-40.0; 2]);
        let loss = disc_loss(&real, &fake, &scalar_t(0.0), 1.0);
        assert!(loss.item() < 1e-12);
    }

    #[test]
    fn disc_loss_gradient_wrt_fake_at_zero() {
        let real = Tensor::from_f64_slice(&[1], &[0.0]);
        let fake = Tensor::from_f64_slice(&[1], &[0.0]).tracked();
        let loss = disc_loss(&real, &fake, &scalar_t(0.0), 1.0);
        let g = backward(&loss, false).unwrap();
        assert!((g.get(&fake).unwrap().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gen_loss_values_and_monotonicity() {
        assert!((gen_loss(&scalar_t(0.0)).item() - LN_2).abs() < 1e-12);
        assert!(gen_loss(&scalar_t(40.0)).item() < 1e-12);
        let mut prev = f64::INFINITY;
        for logit in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let l = gen_loss(&scalar_t(logit)).item();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn r1_of_input_blind_critic_is_zero() {
        let imgs = Tensor::<f64>::from_f64_slice(&[2, 2, 2, 3], &[0.3; 24]);
        let r1 = r1_penalty_with(
            |i| Ok(Tensor::full(&[i.shape()[0]], 1.25)),
            &imgs,
        );
        // A constant critic never touches its input: no gradient path.
        assert!(r1.is_err() || r1.unwrap().item() == 0.0);
    }

    #[test]
    fn r1_of_linear_critic_is_pixels_times_k_squared() {
        let (h, w) = (4, 4);
        let k = 0.35f64;
        let imgs = Tensor::<f64>::from_f64_slice(&[2, h, w, 3], &vec![0.2; 2 * h * w * 3]);
        let r1 = r1_penalty_with(
            |i| {
                let b = i.shape()[0];
                Ok(i.reshape(&[b, h * w * 3]).sum_axis(1).reshape(&[b]).scale(k))
            },
            &imgs,
        )
        .unwrap();
        let expect = (h * w * 3) as f64 * k * k;
        assert!((r1.item() - expect).abs() < 1e-9, "{} vs {expect}", r1.item());
    }

    #[test]
    fn r1_nonnegative_on_conv_critic() {
        use crate::discriminator::{init_discriminator, DiscConfig};
        let cfg = DiscConfig::desk(16);
        let params = init_discriminator::<f64>(&cfg, RngKey::new(3)).unwrap();
        let mut s = RngKey::new(4).stream();
        let imgs = Tensor::from_vec(
            &[2, 16, 16, 3],
            (0..2 * 16 * 16 * 3).map(|_| s.uniform()).collect(),
        );
        let r1 = r1_penalty(&cfg, &params, &imgs).unwrap();
        assert!(r1.item() >= 0.0);
    }

    fn random_cloud(n: usize, key: u64) -> Tensor<f64> {
        let mut s = RngKey::new(key).stream();
        Tensor::from_vec(&[n, 3], (0..3 * n).map(|_| s.normal()).collect())
    }

    #[test]
    fn translation_gives_identity_and_zero_loss() {
        let x = random_cloud(64, 1);
        let t = Tensor::from_f64_slice(&[3], &[0.3, -0.7, 0.2]);
        let xp = x.add(&t);
        let w = Tensor::from_f64_slice(&[64], &[1.0; 64]);
        let r = fit_global_rotation(&x, &xp, &w, 0.02).unwrap();
        let loss = pose_loss(&r).item();
        assert!(loss < 1e-8, "pose loss {loss}");
    }

    #[test]
    fn planted_rotation_recovered() {
        for seed in 0..10 {
            let x = random_cloud(100, 100 + seed);
            let mut s = RngKey::new(200 + seed).stream();
            let q = axis_angle_rotation(
                [s.normal(), s.normal(), s.normal()],
                s.uniform_in(-2.5, 2.5),
            );
            let qt = Tensor::from_f64_slice(&[3, 3], &q.concat());
            let xp = x.matmul(&qt.t());
            let w = Tensor::from_f64_slice(&[100], &[0.5; 100]);
            let r = fit_global_rotation(&x, &xp, &w, 0.02).unwrap();
            let err: f64 = r
                .sub(&qt)
                .data()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(err < 1e-3, "seed {seed}: |R - Q| = {err}");
        }
    }

    #[test]
    fn identity_field_gives_identity() {
        let x = random_cloud(50, 7);
        let w = Tensor::from_f64_slice(&[50], &[1.0; 50]);
        let r = fit_global_rotation(&x, &x, &w, 0.02).unwrap();
        assert!(pose_loss(&r).item() < 1e-10);
    }

    #[test]
    fn too_few_points_reports_skip() {
        let x = random_cloud(20, 9);
        let w = Tensor::from_f64_slice(&[20], &[0.0; 20]);
        match fit_global_rotation(&x, &x, &w, 0.02) {
            Err(D3dError::PoseFit(_)) => {}
            other => panic!("expected pose-fit skip, got {:?}", other.map(|t| t.shape().to_vec())),
        }
    }

    #[test]
    fn scale_invariance_in_canonical_points() {
        let x = random_cloud(80, 11);
        let mut s = RngKey::new(12).stream();
        let q = axis_angle_rotation([1.0, 2.0, -0.5], 0.8);
        let qt = Tensor::from_f64_slice(&[3, 3], &q.concat());
        let xp = x.matmul(&qt.t());
        let w = Tensor::from_vec(&[80], (0..80).map(|_| 0.1 + s.uniform()).collect());
        let r1 = fit_global_rotation(&x, &xp, &w, 0.02).unwrap();
        let r2 = fit_global_rotation(&x, &xp.scale(3.7), &w, 0.02).unwrap();
        let d: f64 = r1.sub(&r2).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(d < 1e-5, "scale changed the fit by {d}");
    }

    #[test]
    fn pose_loss_identities() {
        let eye = Tensor::<f64>::from_f64_slice(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(pose_loss(&eye).item(), 0.0);
        // Quarter turn about z: ||R - I||^2 = 4 (1 - cos a) = 4.
        let q = axis_angle_rotation([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let qt = Tensor::<f64>::from_f64_slice(&[3, 3], &q.concat());
        assert!((pose_loss(&qt).item() - 4.0).abs() < 1e-12);
        // Axis invariance and the trace identity 6 - 2 tr(R).
        for (axis, angle) in [
            ([1.0, 0.0, 0.0], 0.9),
            ([0.0, 1.0, 0.0], 0.9),
            ([1.0, 1.0, 1.0], 0.9),
            ([0.3, -2.0, 0.5], 2.1),
        ] {
            let r = axis_angle_rotation(axis, angle);
            let rt = Tensor::<f64>::from_f64_slice(&[3, 3], &r.concat());
            let tr = r[0][0] + r[1][1] + r[2][2];
            let direct = pose_loss(&rt).item();
            assert!((direct - (6.0 - 2.0 * tr)).abs() < 1e-12);
            assert!((direct - 4.0 * (1.0 - angle.cos())).abs() < 1e-9);
        }
    }

    #[test]
    fn stage_losses_combine_linearly() {
        let w = LossWeights::default();
        let adv = scalar_t(1.5);
        let pose = scalar_t(0.01);
        let s1 = stage1_loss(&adv, Some(&pose), &w);
        assert!((s1.item() - (1.5 + 50.0 * 0.01)).abs() < 1e-12);
        let w0 = LossWeights {
            lambda_pose: 0.0,
            ..w.clone()
        };
        assert_eq!(stage1_loss(&adv, Some(&pose), &w0).item(), 1.5);
        let inv = scalar_t(0.2);
        let j = joint_loss(&adv, Some(&pose), Some(&inv), &w);
        assert!((j.item() - (1.5 + 0.5 + 0.2)).abs() < 1e-12);
        let wnoinv = LossWeights {
            lambda_inv: 0.0,
            ..w
        };
        let j0 = joint_loss(&adv, Some(&pose), Some(&inv), &wnoinv);
        assert!((j0.item() - s1.item()).abs() < 1e-12);
        assert_eq!(
            joint_loss(&scalar_t(0.0), Some(&scalar_t(0.0)), Some(&scalar_t(0.0)), &LossWeights::default()).item(),
            0.0
        );
    }

    #[test]
    fn inverse_loss_zero_on_exact_cycle() {
        let cam = Camera::frontal(1.0, 55.0);
        let x = random_cloud(30, 21).scale(0.1);
        let img = Tensor::from_f64_slice(&[8, 8, 3], &vec![0.5; 192]);
        let out = inverse_loss(&x, &x, &img, &cam, 0.001).unwrap();
        assert_eq!(out.loss.item(), 0.0);
    }

    #[test]
    fn inverse_loss_flat_image_gives_pure_geometric() {
        let cam = Camera::frontal(1.0, 55.0);
        let x = random_cloud(25, 22).scale(0.05);
        let eps = 0.01;
        let shift = Tensor::from_f64_slice(&[3], &[eps, 0.0, 0.0]);
        let xc = x.add(&shift);
        let img = Tensor::from_f64_slice(&[8, 8, 3], &vec![0.5; 192]);
        let out = inverse_loss(&x, &xc, &img, &cam, 0.001).unwrap();
        assert!(
            (out.loss.item() - eps * eps).abs() < 1e-12,
            "{} vs {}",
            out.loss.item(),
            eps * eps
        );
    }

    #[test]
    fn inverse_loss_nonnegative_and_zero_iff_identity() {
        let cam = Camera::frontal(1.0, 55.0);
        let mut s = RngKey::new(23).stream();
        let img = Tensor::from_f64_slice(
            &[8, 8, 3],
            &(0..192).map(|_| s.uniform()).collect::<Vec<_>>(),
        );
        let x = random_cloud(40, 24).scale(0.08);
        let out_same = inverse_loss(&x, &x, &img, &cam, 0.001).unwrap();
        assert_eq!(out_same.loss.item(), 0.0);
        let xc = x.add(&Tensor::from_f64_slice(&[3], &[0.02, -0.01, 0.03]));
        let out = inverse_loss(&x, &xc, &img, &cam, 0.001).unwrap();
        assert!(out.loss.item() > 0.0);
    }

    #[test]
    fn embed_loss_zero_at_perfect_reconstruction() {
        let img = Tensor::<f64>::from_f64_slice(&[4, 4, 3], &vec![0.3; 48]);
        let film = Tensor::from_f64_slice(&[6], &[0.1; 6]);
        let out = embed_loss(&img, &img, &film, &film, None, &LossWeights::default()).unwrap();
        assert_eq!(out.item(), 0.0);
    }

    #[test]
    fn embed_loss_l1_of_opposite_images() {
        let zeros = Tensor::<f64>::zeros(&[4, 4, 3]);
        let ones = Tensor::<f64>::ones(&[4, 4, 3]);
        let film = Tensor::zeros(&[2]);
        let w = LossWeights {
            lambda_reg: 0.0,
            ..LossWeights::default()
        };
        let out = embed_loss(&zeros, &ones, &film, &film, None, &w).unwrap();
        assert!((out.item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pose_loss_through_fit_gradcheck() {
        use crate::tensor::gradcheck::grad_check_fn;
        // Well-separated spectrum: random rotation plus noise.
        let x = random_cloud(40, 31);
        let q = axis_angle_rotation([0.2, 1.0, -0.4], 0.7);
        let qt = Tensor::from_f64_slice(&[3, 3], &q.concat());
        let mut s = RngKey::new(32).stream();
        let noise = Tensor::from_vec(&[40, 3], (0..120).map(|_| s.normal() * 0.05).collect());
        let xp = x.matmul(&qt.t()).add(&noise);
        let w = Tensor::from_f64_slice(&[40], &[0.5; 40]);
        let check = grad_check_fn(
            "pose_loss_through_fit",
            |ins| {
                let r = fit_global_rotation(&x, &ins[0], &w, 0.02).unwrap();
                pose_loss(&r)
            },
            &[xp],
            1e-4,
            1e-3,
            36,
        );
        assert!(check.pass(), "{check:?}");
    }

    #[test]
    fn inverse_loss_gradcheck() {
        use crate::tensor::gradcheck::grad_check_fn;
        let cam = Camera::frontal(1.0, 55.0);
        let mut s = RngKey::new(41).stream();
        // Smooth image so bilinear gradients are informative.
        let img = Tensor::from_f64_slice(
            &[8, 8, 3],
            &(0..192)
                .map(|i| 0.5 + 0.4 * ((i as f64) * 0.13).sin())
                .collect::<Vec<_>>(),
        );
        let x = random_cloud(20, 42).scale(0.06);
        let xc = x.add(&Tensor::from_vec(
            &[20, 3],
            (0..60).map(|_| s.normal() * 0.01).collect(),
        ));
        let check = grad_check_fn(
            "inverse_loss",
            |ins| {
                inverse_loss(&x, &ins[0], &img, &cam, 0.5)
                    .unwrap()
                    .loss
            },
            &[xc],
            1e-5,
            1e-3,
            30,
        );
        assert!(check.pass(), "{check:?}");
    }
}
