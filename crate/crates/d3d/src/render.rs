//! Full image rendering: coarse stratified pass, hierarchical refinement,
//! and integration of the merged sample set.

use crate::camera::{generate_rays, Camera, CameraT};
use crate::error::Result;
use crate::fields::RadianceField;
use crate::integrate::{integrate, weights_from_sigma};
use crate::num::Elem;
use crate::rng::RngKey;
use crate::sampling::{
    hierarchical_samples, sample_dirs, sample_positions, stratified_samples, SampleSet,
};
use crate::tensor::graph::no_grad;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub near: f64,
    pub far: f64,
    /// Stratified jitter on the coarse pass; off gives bin midpoints.
    pub jitter: bool,
}

impl RenderConfig {
    pub fn desk(resolution: usize) -> Self {
        RenderConfig {
            height: resolution,
            width: resolution,
            n_coarse: 16,
            n_fine: 16,
            near: 0.5,
            far: 1.5,
            jitter: true,
        }
    }

    pub fn rays(&self) -> usize {
        self.height * self.width
    }
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig::desk(32)
    }
}

/// Everything produced by rendering one sample.
pub struct RenderOutput<T: Elem> {
    /// [H, W, 3] color in [0,1], composited over black.
    pub rgb: Tensor<T>,
    /// [H, W] expected depth (scene units along the ray).
    pub expected_depth: Tensor<T>,
    /// [H, W] accumulated weight in [0,1].
    pub acc: Tensor<T>,
    /// [H*W, S] fine-pass rendering weights.
    pub weights: Tensor<T>,
    /// Fine-pass sample set (depths are plain values).
    pub samples: SampleSet<T>,
    /// [H*W*S, 3] fine-pass sample positions.
    pub positions: Tensor<T>,
    /// [H*W, 3] unit ray directions and [3] shared origin.
    pub ray_dirs: Tensor<T>,
    pub ray_origin: Tensor<T>,
    /// Per-pixel: expected depth is meaningful (acc >= 0.5).
    pub depth_valid: Vec<bool>,
}

impl<T: Elem> RenderOutput<T> {
    /// Detached copy (no graph references), for metric and IO paths.
    pub fn detach(&self) -> RenderOutput<T> {
        RenderOutput {
            rgb: self.rgb.detach(),
            expected_depth: self.expected_depth.detach(),
            acc: self.acc.detach(),
            weights: self.weights.detach(),
            samples: SampleSet {
                depths: self.samples.depths.detach(),
                deltas: self.samples.deltas.detach(),
                near: self.samples.near,
                far: self.samples.far,
            },
            positions: self.positions.detach(),
            ray_dirs: self.ray_dirs.detach(),
            ray_origin: self.ray_origin.detach(),
            depth_valid: self.depth_valid.clone(),
        }
    }
}

/// Render a field from a camera given as tensors (pose may be tracked for
/// embedding). The coarse sigma pass runs without graph recording; sample
/// depths are never differentiated through.
pub fn render_t<T: Elem, F: RadianceField<T>>(
    field: &F,
    cam: &CameraT<T>,
    rc: &RenderConfig,
    key: RngKey,
) -> Result<RenderOutput<T>> {
    let rays = generate_rays(cam, rc.height, rc.width);
    let r = rc.rays();

    // Coarse pass: density only, no gradients, placement only.
    let coarse = stratified_samples::<T>(
        r,
        rc.n_coarse,
        rc.near,
        rc.far,
        key.child(0),
        rc.jitter,
    );
    let coarse_weights = {
        let guard = no_grad();
        let pos = sample_positions(&rays.origin, &rays.dirs, &coarse.depths);
        let sigma = field.density(&pos).reshape(&[r, rc.n_coarse]);
        let w = weights_from_sigma(&sigma, &coarse.deltas);
        drop(guard);
        w.detach()
    };
    let merged = hierarchical_samples(&coarse, &coarse_weights, rc.n_fine, key.child(1))?;
    let s = merged.n_samples();

    // Fine pass: full evaluation with gradients.
    let positions = sample_positions(&rays.origin, &rays.dirs, &merged.depths);
    let dirs = sample_dirs(&rays.dirs, s);
    let (sigma, rgb) = field.eval(&positions, &dirs);
    let sigma = sigma.reshape(&[r, s]);
    let rgb = rgb.reshape(&[r, s, 3]);
    let out = integrate(&sigma, &rgb, &merged)?;

    Ok(RenderOutput {
        rgb: out.rgb.reshape(&[rc.height, rc.width, 3]),
        expected_depth: out.expected_depth.reshape(&[rc.height, rc.width]),
        acc: out.acc.reshape(&[rc.height, rc.width]),
        weights: out.weights,
        samples: merged,
        positions,
        ray_dirs: rays.dirs,
        ray_origin: rays.origin,
        depth_valid: out.depth_valid,
    })
}

/// Render from a plain camera pose (the ordinary training/eval path).
pub fn render<T: Elem, F: RadianceField<T>>(
    field: &F,
    cam: &Camera,
    rc: &RenderConfig,
    key: RngKey,
) -> Result<RenderOutput<T>> {
    render_t(field, &CameraT::constant(cam), rc, key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ConstantField, SphereField};

    fn frontal(fov: f64) -> Camera {
        Camera::frontal(1.0, fov)
    }

    #[test]
    fn render_output_shapes() {
        let rc = RenderConfig {
            height: 16,
            width: 16,
            n_coarse: 8,
            n_fine: 8,
            near: 0.5,
            far: 1.5,
            jitter: true,
        };
        let out = render::<f32, _>(&SphereField::unit(), &frontal(55.0), &rc, RngKey::new(1))
            .unwrap();
        assert_eq!(out.rgb.shape(), &[16, 16, 3]);
        assert_eq!(out.expected_depth.shape(), &[16, 16]);
        assert_eq!(out.acc.shape(), &[16, 16]);
        assert_eq!(out.weights.shape(), &[256, 16]);
        assert_eq!(out.positions.shape(), &[256 * 16, 3]);
        assert_eq!(out.depth_valid.len(), 256);
    }

    #[test]
    fn identical_inputs_render_bit_identically() {
        let rc = RenderConfig::desk(8);
        let a = render::<f32, _>(&SphereField::unit(), &frontal(55.0), &rc, RngKey::new(7))
            .unwrap();
        let b = render::<f32, _>(&SphereField::unit(), &frontal(55.0), &rc, RngKey::new(7))
            .unwrap();
        assert!(crate::tensor::bit_identical(&a.rgb, &b.rgb));
        assert!(crate::tensor::bit_identical(&a.expected_depth, &b.expected_depth));
    }

    /// High-sample-count reference quadrature for one ray through a field.
    fn reference_pixel(
        field: &SphereField,
        cam: &Camera,
        rc: &RenderConfig,
        n_ref: usize,
    ) -> Vec<[f64; 3]> {
        let rcc = RenderConfig {
            n_coarse: n_ref,
            n_fine: 1,
            jitter: false,
            ..rc.clone()
        };
        // Midpoint quadrature with n_ref samples; one token fine sample
        // keeps the pipeline identical.
        let out = render::<f64, _>(field, cam, &rcc, RngKey::new(0)).unwrap();
        (0..rcc.rays())
            .map(|p| {
                [
                    out.rgb.data()[3 * p],
                    out.rgb.data()[3 * p + 1],
                    out.rgb.data()[3 * p + 2],
                ]
            })
            .collect()
    }

    fn mae_vs_reference(n_samples: usize) -> f64 {
        // One token fine sample: this measures the deterministic midpoint
        // quadrature, which converges like O(1/N) or better.
        let rc = RenderConfig {
            height: 8,
            width: 8,
            n_coarse: n_samples,
            n_fine: 1,
            near: 0.5,
            far: 1.5,
            jitter: false,
        };
        let field = SphereField::unit();
        let cam = frontal(55.0);
        let reference = reference_pixel(&field, &cam, &rc, 1024);
        let out = render::<f64, _>(&field, &cam, &rc, RngKey::new(3)).unwrap();
        let mut mae = 0.0;
        for p in 0..rc.rays() {
            for ch in 0..3 {
                mae += (out.rgb.data()[3 * p + ch] - reference[p][ch]).abs();
            }
        }
        mae / (rc.rays() * 3) as f64
    }

    #[test]
    fn planted_sphere_matches_reference_quadrature() {
        let mae = mae_vs_reference(64);
        assert!(mae < 2e-3, "MAE vs 1024-sample reference: {mae}");
    }

    #[test]
    fn error_halves_with_doubled_samples() {
        let e64 = mae_vs_reference(64);
        let e128 = mae_vs_reference(128);
        assert!(
            e128 <= e64 / 2.0 + 1e-9,
            "error did not halve: {e64} -> {e128}"
        );
    }

    #[test]
    fn constant_field_center_pixel_closed_form() {
        let rc = RenderConfig {
            height: 3,
            width: 3,
            n_coarse: 256,
            n_fine: 1,
            near: 0.5,
            far: 1.5,
            jitter: false,
        };
        let field = ConstantField {
            sigma: 1.7,
            color: [0.6, 0.3, 0.9],
        };
        let out = render::<f64, _>(&field, &frontal(30.0), &rc, RngKey::new(4)).unwrap();
        let center = 4usize;
        let expect = 1.0 - (-1.7f64 * 1.0).exp();
        for ch in 0..3 {
            let got = out.rgb.data()[3 * center + ch];
            let want = field.color[ch] * expect;
            assert!((got - want).abs() / want < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn opaque_region_gives_valid_depth_near_surface() {
        let rc = RenderConfig {
            height: 9,
            width: 9,
            n_coarse: 32,
            n_fine: 32,
            near: 0.5,
            far: 1.5,
            jitter: false,
        };
        let field = SphereField {
            peak: 500.0,
            ..SphereField::unit()
        };
        let out = render::<f64, _>(&field, &frontal(55.0), &rc, RngKey::new(5)).unwrap();
        let center = (9 / 2) * 9 + 9 / 2;
        assert!(out.depth_valid[center]);
        let d = out.expected_depth.data()[center];
        // Camera at radius 1 looking at a dense ball of scale ~0.12 around
        // the origin: the ray saturates on the near side of the ball.
        assert!(d > 0.6 && d < 1.0, "front surface depth {d}");
    }
}
