//! Procedural synthetic dataset oracle: ray-traced, Lambertian-shaded
//! ellipsoid-with-bump instances on black background, with known
//! geometry/appearance/pose factors. The factor manifest exists for
//! evaluation only; training consumes the images alone.

use crate::camera::{sample_camera, Camera, CameraPrior};
use crate::error::{D3dError, Result};
use crate::rng::RngKey;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Factor ranges and rendering parameters of the oracle.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    /// Ellipsoid semi-axis range (each axis drawn independently, then
    /// relabeled so x holds the largest and y the smallest, keeping every
    /// instance horizontally elongated).
    pub axis_range: (f64, f64),
    /// Outward radial bump amplitude range (world units).
    pub bump_range: (f64, f64),
    /// Per-channel albedo range.
    pub albedo_range: (f64, f64),
    /// Fixed world-space light direction (normalized at use).
    pub light_dir: [f64; 3],
    pub resolution: usize,
    /// Pose prior shared with the generative model.
    pub prior: CameraPrior,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            axis_range: (0.15, 0.35),
            bump_range: (0.0, 0.1),
            albedo_range: (0.15, 0.95),
            light_dir: [0.4, 0.7, 0.6],
            resolution: 32,
            prior: CameraPrior::default(),
        }
    }
}

/// Ground-truth factors of one instance.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InstanceFactors {
    pub file: String,
    pub axes: [f64; 3],
    pub bump: f64,
    pub albedo: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
}

/// Draw instance factors from the spec's ranges.
pub fn sample_factors(spec: &SyntheticSpec, key: RngKey) -> InstanceFactors {
    let mut s = key.child(0).stream();
    let mut axes = [
        s.uniform_in(spec.axis_range.0, spec.axis_range.1),
        s.uniform_in(spec.axis_range.0, spec.axis_range.1),
        s.uniform_in(spec.axis_range.0, spec.axis_range.1),
    ];
    // Largest along x, smallest along y: keeps silhouettes horizontally
    // elongated so the principal-axis orientation estimator is stable.
    axes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let axes = [axes[2], axes[0], axes[1]];
    let bump = s.uniform_in(spec.bump_range.0, spec.bump_range.1);
    let albedo = [
        s.uniform_in(spec.albedo_range.0, spec.albedo_range.1),
        s.uniform_in(spec.albedo_range.0, spec.albedo_range.1),
        s.uniform_in(spec.albedo_range.0, spec.albedo_range.1),
    ];
    let cam = sample_camera(&spec.prior, key.child(1));
    InstanceFactors {
        file: String::new(),
        axes,
        bump,
        albedo,
        yaw: cam.yaw,
        pitch: cam.pitch,
    }
}

/// Bump apex direction in object space (+x, where the long axis lives).
const APEX: [f64; 3] = [1.0, 0.0, 0.0];
/// Angular width of the bump lobe.
const BUMP_WIDTH: f64 = 0.15;

/// Star-shaped surface radius along unit direction `u`:
/// ellipsoid radius plus a radial bump around the apex direction.
fn surface_radius(f: &InstanceFactors, u: [f64; 3]) -> f64 {
    let e = (u[0] / f.axes[0]) * (u[0] / f.axes[0])
        + (u[1] / f.axes[1]) * (u[1] / f.axes[1])
        + (u[2] / f.axes[2]) * (u[2] / f.axes[2]);
    let r_ell = 1.0 / e.sqrt();
    let cosang = u[0] * APEX[0] + u[1] * APEX[1] + u[2] * APEX[2];
    r_ell + f.bump * (-(1.0 - cosang) / BUMP_WIDTH).exp()
}

/// Signed implicit function: negative inside the blob.
fn implicit(f: &InstanceFactors, p: [f64; 3]) -> f64 {
    let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if r < 1e-9 {
        return -surface_radius(f, APEX);
    }
    let u = [p[0] / r, p[1] / r, p[2] / r];
    r - surface_radius(f, u)
}

fn normal_at(f: &InstanceFactors, p: [f64; 3]) -> [f64; 3] {
    let h = 1e-4;
    let mut n = [0.0; 3];
    for k in 0..3 {
        let mut a = p;
        let mut b = p;
        a[k] += h;
        b[k] -= h;
        n[k] = (implicit(f, a) - implicit(f, b)) / (2.0 * h);
    }
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
    [n[0] / len, n[1] / len, n[2] / len]
}

/// March a ray against the implicit surface; returns the hit distance.
fn trace(f: &InstanceFactors, o: [f64; 3], d: [f64; 3], near: f64, far: f64) -> Option<f64> {
    const STEPS: usize = 96;
    let dt = (far - near) / STEPS as f64;
    let mut prev_t = near;
    let mut prev_v = implicit(f, [o[0] + near * d[0], o[1] + near * d[1], o[2] + near * d[2]]);
    if prev_v <= 0.0 {
        return Some(near);
    }
    for i in 1..=STEPS {
        let t = near + i as f64 * dt;
        let v = implicit(f, [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]]);
        if v <= 0.0 {
            // Bisection refine on [prev_t, t].
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..24 {
                let mid = 0.5 * (lo + hi);
                let vm =
                    implicit(f, [o[0] + mid * d[0], o[1] + mid * d[1], o[2] + mid * d[2]]);
                if vm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        prev_t = t;
        prev_v = v;
    }
    let _ = prev_v;
    None
}

/// Ray-trace one instance from its stored pose. Returns [H,W,3] in [0,1]
/// (black background) plus the silhouette mask.
pub fn render_instance(spec: &SyntheticSpec, f: &InstanceFactors) -> (Tensor<f32>, Vec<bool>) {
    let res = spec.resolution;
    let cam = Camera {
        yaw: f.yaw,
        pitch: f.pitch,
        radius: spec.prior.radius,
        fov_deg: spec.prior.fov_deg,
    };
    let rays = crate::camera::generate_rays::<f64>(&crate::camera::CameraT::constant(&cam), res, res);
    let o = [
        rays.origin.data()[0],
        rays.origin.data()[1],
        rays.origin.data()[2],
    ];
    let llen = (spec.light_dir[0].powi(2) + spec.light_dir[1].powi(2) + spec.light_dir[2].powi(2))
        .sqrt();
    let light = [
        spec.light_dir[0] / llen,
        spec.light_dir[1] / llen,
        spec.light_dir[2] / llen,
    ];
    let near = 0.05f64.max(spec.prior.radius - 0.6);
    let far = spec.prior.radius + 0.6;
    let mut pixels = vec![0.0f32; res * res * 3];
    let mut mask = vec![false; res * res];
    let results: Vec<Option<(f64, [f64; 3])>> = (0..res * res)
        .into_par_iter()
        .map(|i| {
            let d = [
                rays.dirs.data()[3 * i],
                rays.dirs.data()[3 * i + 1],
                rays.dirs.data()[3 * i + 2],
            ];
            trace(f, o, d, near, far).map(|t| {
                let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
                (t, normal_at(f, p))
            })
        })
        .collect();
    for (i, hit) in results.into_iter().enumerate() {
        if let Some((_t, n)) = hit {
            mask[i] = true;
            let lambert = (n[0] * light[0] + n[1] * light[1] + n[2] * light[2]).max(0.0);
            let shade = 0.2 + 0.8 * lambert;
            for ch in 0..3 {
                pixels[3 * i + ch] = (f.albedo[ch] * shade).clamp(0.0, 1.0) as f32;
            }
        }
    }
    (
        Tensor::from_vec(&[res, res, 3], pixels),
        mask,
    )
}

/// Write `count` instances (PNG + JSONL manifest) into `out_dir`.
/// Byte-identical for identical keys.
pub fn make_dataset(
    spec: &SyntheticSpec,
    count: usize,
    key: RngKey,
    out_dir: &Path,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(&manifest_path)?);
    for i in 0..count {
        let mut f = sample_factors(spec, key.child(i as u64));
        f.file = format!("img_{i:05}.png");
        let (img, _) = render_instance(spec, &f);
        crate::imgio::save_png(&out_dir.join(&f.file), &img)?;
        let line = serde_json::to_string(&f)
            .map_err(|e| D3dError::Io(std::io::Error::other(e)))?;
        writeln!(manifest, "{line}")?;
    }
    manifest.flush()?;
    Ok(manifest_path)
}

/// Read a dataset manifest.
pub fn load_manifest(dir: &Path) -> Result<Vec<InstanceFactors>> {
    let text = std::fs::read_to_string(dir.join("manifest.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| D3dError::Config(format!("manifest: {e}")))
        })
        .collect()
}

/// Image-only dataset view for training: sorted PNG paths.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "png").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(D3dError::Config(format!(
            "no PNG images found in {}",
            dir.display()
        )));
    }
    Ok(files)
}

/// Silhouette mask of an [H,W,3] image on black background.
pub fn mask_of_image(img: &Tensor<f32>, threshold: f64) -> Vec<bool> {
    let hw = img.shape()[0] * img.shape()[1];
    (0..hw)
        .map(|i| {
            let m = img.data()[3 * i].max(img.data()[3 * i + 1]).max(img.data()[3 * i + 2]);
            (m as f64) > threshold
        })
        .collect()
}
