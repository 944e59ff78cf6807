//! Cameras, pose priors, and pinhole ray generation.
//!
//! A camera sits on a sphere of fixed radius looking at the origin with a
//! fixed world up-axis (+y). Ray generation is expressed in tensor ops on
//! the yaw/pitch scalars, so camera pose can be optimized by gradient
//! descent (used by image embedding); for ordinary rendering the pose
//! tensors are constants and nothing is recorded.

use crate::num::{c, Elem};
use crate::rng::RngKey;
use crate::tensor::ops::{concat, stack_scalars};
use crate::tensor::Tensor;

/// Distribution family for a pose angle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AngleDist {
    Gaussian,
    /// Uniform on [-half_width, +half_width]; the `std` field is the
    /// half-width.
    Uniform,
}

/// Prior over camera poses. Radius and field of view are fixed constants.
#[derive(Clone, Debug)]
pub struct CameraPrior {
    pub yaw_dist: AngleDist,
    pub yaw_std: f64,
    pub pitch_dist: AngleDist,
    pub pitch_std: f64,
    pub radius: f64,
    pub fov_deg: f64,
}

impl Default for CameraPrior {
    fn default() -> Self {
        CameraPrior {
            yaw_dist: AngleDist::Gaussian,
            yaw_std: 0.3,
            pitch_dist: AngleDist::Gaussian,
            pitch_std: 0.15,
            radius: 1.0,
            fov_deg: 55.0,
        }
    }
}

/// Camera pose: yaw and pitch in radians, radius in scene units, field of
/// view (full angle) in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub yaw: f64,
    pub pitch: f64,
    pub radius: f64,
    pub fov_deg: f64,
}

impl Camera {
    pub fn frontal(radius: f64, fov_deg: f64) -> Self {
        Camera {
            yaw: 0.0,
            pitch: 0.0,
            radius,
            fov_deg,
        }
    }

    /// Orthonormal basis (right, up, forward) and origin, in world space.
    pub fn basis(&self) -> ([f64; 3], [f64; 3], [f64; 3], [f64; 3]) {
        let (sy, cy) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let right = [cy, 0.0, -sy];
        let up = [-sy * sp, cp, -cy * sp];
        let fwd = [-sy * cp, -sp, -cy * cp];
        let origin = [
            self.radius * sy * cp,
            self.radius * sp,
            self.radius * cy * cp,
        ];
        (right, up, fwd, origin)
    }

    /// Project a world point to pixel coordinates (x, y) with (0,0) at the
    /// centre of the top-left pixel, plus the Euclidean distance from the
    /// camera origin. Points behind the camera get a negative distance
    /// sign convention via `in_front`.
    pub fn project(&self, p: [f64; 3], h: usize, w: usize) -> Projected {
        let (r, u, f, o) = self.basis();
        let d = [p[0] - o[0], p[1] - o[1], p[2] - o[2]];
        let qx = dot(d, r);
        let qy = dot(d, u);
        let qz = dot(d, f);
        let t = (self.fov_deg.to_radians() / 2.0).tan();
        let aspect = w as f64 / h as f64;
        let px = ((qx / qz) / (t * aspect) + 1.0) * w as f64 / 2.0 - 0.5;
        let py = (1.0 - (qy / qz) / t) * h as f64 / 2.0 - 0.5;
        Projected {
            x: px,
            y: py,
            dist: (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt(),
            in_front: qz > 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Projected {
    pub x: f64,
    pub y: f64,
    pub dist: f64,
    pub in_front: bool,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Sample a camera pose from the prior. Radius and fov come straight from
/// the prior; zero-variance priors always give the frontal camera.
pub fn sample_camera(prior: &CameraPrior, key: RngKey) -> Camera {
    let mut s = key.stream();
    let draw = |dist: AngleDist, scale: f64, s: &mut crate::rng::RngStream| match dist {
        AngleDist::Gaussian => s.normal_scaled(0.0, scale),
        AngleDist::Uniform => s.uniform_in(-scale, scale),
    };
    let yaw = draw(prior.yaw_dist, prior.yaw_std, &mut s);
    let pitch = draw(prior.pitch_dist, prior.pitch_std, &mut s);
    Camera {
        yaw,
        pitch,
        radius: prior.radius,
        fov_deg: prior.fov_deg,
    }
}

/// Camera pose as tensors, for differentiable ray generation.
pub struct CameraT<T: Elem> {
    pub yaw: Tensor<T>,
    pub pitch: Tensor<T>,
    pub radius: f64,
    pub fov_deg: f64,
}

impl<T: Elem> CameraT<T> {
    pub fn constant(cam: &Camera) -> Self {
        CameraT {
            yaw: Tensor::scalar(c(cam.yaw)),
            pitch: Tensor::scalar(c(cam.pitch)),
            radius: cam.radius,
            fov_deg: cam.fov_deg,
        }
    }

    pub fn to_camera(&self) -> Camera {
        Camera {
            yaw: self.yaw.item_f64(),
            pitch: self.pitch.item_f64(),
            radius: self.radius,
            fov_deg: self.fov_deg,
        }
    }
}

/// Pixel-centre rays of a pinhole camera: shared origin [3] and unit
/// directions [H*W, 3], row-major over (row, col).
pub struct Rays<T: Elem> {
    pub origin: Tensor<T>,
    pub dirs: Tensor<T>,
}

/// Camera-frame unit directions for every pixel centre (constants).
fn pixel_dirs<T: Elem>(h: usize, w: usize, fov_deg: f64) -> Tensor<T> {
    let t = (fov_deg.to_radians() / 2.0).tan();
    let aspect = w as f64 / h as f64;
    let mut data = Vec::with_capacity(h * w * 3);
    for i in 0..h {
        for j in 0..w {
            let x = (2.0 * (j as f64 + 0.5) / w as f64 - 1.0) * t * aspect;
            let y = (1.0 - 2.0 * (i as f64 + 0.5) / h as f64) * t;
            let n = (x * x + y * y + 1.0).sqrt();
            data.push(c::<T>(x / n));
            data.push(c::<T>(y / n));
            data.push(c::<T>(1.0 / n));
        }
    }
    Tensor::from_vec(&[h * w, 3], data)
}

/// Generate pixel-centre rays. Differentiable with respect to the camera
/// yaw/pitch tensors; the rotation preserves the unit norm of the
/// camera-frame directions.
pub fn generate_rays<T: Elem>(cam: &CameraT<T>, h: usize, w: usize) -> Rays<T> {
    assert!(h >= 1 && w >= 1, "generate_rays: empty image");
    let sy = cam.yaw.sin();
    let cy = cam.yaw.cos();
    let sp = cam.pitch.sin();
    let cp = cam.pitch.cos();
    let zero = Tensor::zeros(&[1]);
    let neg = |t: &Tensor<T>| t.neg();
    // Rows of the world-from-camera rotation: right, up, forward.
    let right = [cy.clone(), zero.clone(), neg(&sy)];
    let up = [sy.mul(&sp).neg(), cp.clone(), cy.mul(&sp).neg()];
    let fwd = [sy.mul(&cp).neg(), sp.neg(), cy.mul(&cp).neg()];
    let basis = stack_scalars(&[
        &right[0], &right[1], &right[2],
        &up[0], &up[1], &up[2],
        &fwd[0], &fwd[1], &fwd[2],
    ])
    .reshape(&[3, 3]);
    let origin = stack_scalars(&[&sy.mul(&cp), &sp, &cy.mul(&cp)])
        .scale(cam.radius)
        .reshape(&[3]);
    let dirs = pixel_dirs::<T>(h, w, cam.fov_deg).matmul(&basis);
    Rays { origin, dirs }
}
