//! Depth sampling along rays: stratified coarse samples and inverse-CDF
//! hierarchical refinement. Sample depths are plain (non-differentiable)
//! values by design; gradients flow through the field evaluated at the
//! samples, not through their placement.

use crate::error::{D3dError, Result};
use crate::num::{c, Elem};
use crate::rng::RngKey;
use crate::tensor::Tensor;

/// Sorted per-ray sample depths with interval lengths. The terminal
/// interval extends to the far bound.
pub struct SampleSet<T: Elem> {
    /// [R, S] sorted ascending per ray, within [near, far].
    pub depths: Tensor<T>,
    /// [R, S]: deltas[i] = depths[i+1] - depths[i], last entry far - depths[S-1].
    pub deltas: Tensor<T>,
    pub near: f64,
    pub far: f64,
}

impl<T: Elem> SampleSet<T> {
    pub fn n_rays(&self) -> usize {
        self.depths.shape()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.depths.shape()[1]
    }

    fn from_sorted(depths: Vec<f64>, rays: usize, s: usize, near: f64, far: f64) -> Self {
        let mut deltas = vec![0.0f64; rays * s];
        for r in 0..rays {
            for i in 0..s {
                let here = depths[r * s + i];
                deltas[r * s + i] = if i + 1 < s {
                    depths[r * s + i + 1] - here
                } else {
                    far - here
                };
            }
        }
        SampleSet {
            depths: Tensor::from_f64_slice(&[rays, s], &depths),
            deltas: Tensor::from_f64_slice(&[rays, s], &deltas),
            near,
            far,
        }
    }
}

/// One uniform draw per equal sub-interval of [near, far] per ray. With
/// `jitter` off, samples sit at the exact bin midpoints.
pub fn stratified_samples<T: Elem>(
    rays: usize,
    n_coarse: usize,
    near: f64,
    far: f64,
    key: RngKey,
    jitter: bool,
) -> SampleSet<T> {
    assert!(n_coarse >= 2, "stratified_samples: n_coarse must be >= 2");
    assert!(near < far, "stratified_samples: near must precede far");
    let bin = (far - near) / n_coarse as f64;
    let mut depths = vec![0.0f64; rays * n_coarse];
    for r in 0..rays {
        for i in 0..n_coarse {
            let u = if jitter {
                let bits = key.bits((r * n_coarse + i) as u64);
                (bits >> 11) as f64 / (1u64 << 53) as f64
            } else {
                0.5
            };
            depths[r * n_coarse + i] = near + (i as f64 + u) * bin;
        }
    }
    SampleSet::from_sorted(depths, rays, n_coarse, near, far)
}

/// Inverse-transform sampling of the piecewise-constant density
/// proportional to the coarse rendering weights (floored at 1e-5), merged
/// and sorted with the coarse samples. All-zero weight rows fall back to
/// stratified placement.
pub fn hierarchical_samples<T: Elem>(
    coarse: &SampleSet<T>,
    weights: &Tensor<T>,
    n_fine: usize,
    key: RngKey,
) -> Result<SampleSet<T>> {
    let rays = coarse.n_rays();
    let nc = coarse.n_samples();
    if weights.shape() != coarse.depths.shape() {
        return Err(D3dError::Autodiff(format!(
            "hierarchical_samples: weights {:?} must match coarse depths {:?}",
            weights.shape(),
            coarse.depths.shape()
        )));
    }
    if weights.data().iter().any(|w| *w < T::zero()) {
        return Err(D3dError::Autodiff(
            "hierarchical_samples: negative weights".into(),
        ));
    }
    assert!(n_fine >= 1, "hierarchical_samples: n_fine must be >= 1");
    let total = nc + n_fine;
    let mut merged = vec![0.0f64; rays * total];
    let floor = 1e-5f64;
    for r in 0..rays {
        let wrow: Vec<f64> = (0..nc)
            .map(|i| weights.data()[r * nc + i].as_f64())
            .collect();
        let drow: Vec<f64> = (0..nc)
            .map(|i| coarse.depths.data()[r * nc + i].as_f64())
            .collect();
        let delt: Vec<f64> = (0..nc)
            .map(|i| coarse.deltas.data()[r * nc + i].as_f64())
            .collect();
        let all_zero = wrow.iter().all(|&w| w == 0.0);
        let mut fine = Vec::with_capacity(n_fine);
        if all_zero {
            // Degenerate weights: stratify the fine samples instead.
            let bin = (coarse.far - coarse.near) / n_fine as f64;
            for i in 0..n_fine {
                let u = (key.bits((r * n_fine + i) as u64) >> 11) as f64 / (1u64 << 53) as f64;
                fine.push(coarse.near + (i as f64 + u) * bin);
            }
        } else {
            // CDF over the piecewise-constant density on segments
            // [t_i, t_i + delta_i), mass proportional to floored weights.
            let mass: Vec<f64> = wrow.iter().map(|&w| w.max(floor)).collect();
            let total_mass: f64 = mass.iter().sum();
            for i in 0..n_fine {
                let u = (key.bits((r * n_fine + i) as u64) >> 11) as f64 / (1u64 << 53) as f64;
                let mut target = u * total_mass;
                let mut seg = nc - 1;
                for (j, &m) in mass.iter().enumerate() {
                    if target <= m || j == nc - 1 {
                        seg = j;
                        break;
                    }
                    target -= m;
                }
                let frac = (target / mass[seg]).clamp(0.0, 1.0);
                fine.push(drow[seg] + frac * delt[seg]);
            }
        }
        let mut row: Vec<f64> = drow;
        row.extend(fine);
        row.sort_by(|a, b| a.partial_cmp(b).expect("finite depths"));
        merged[r * total..(r + 1) * total].copy_from_slice(&row);
    }
    Ok(SampleSet::from_sorted(
        merged,
        rays,
        total,
        coarse.near,
        coarse.far,
    ))
}

/// Sample positions o + t*d for every (ray, sample): returns [R*S, 3].
/// Differentiable with respect to the ray origin/directions (depths are
/// constants).
pub fn sample_positions<T: Elem>(
    origin: &Tensor<T>,
    dirs: &Tensor<T>,
    depths: &Tensor<T>,
) -> Tensor<T> {
    let (r, s) = (depths.shape()[0], depths.shape()[1]);
    let d3 = dirs.reshape(&[r, 1, 3]);
    let t3 = depths.detach().reshape(&[r, s, 1]);
    d3.mul(&t3).add(origin).reshape(&[r * s, 3])
}

/// Per-sample view directions matching [`sample_positions`]: [R*S, 3].
pub fn sample_dirs<T: Elem>(dirs: &Tensor<T>, s: usize) -> Tensor<T> {
    let r = dirs.shape()[0];
    dirs.reshape(&[r, 1, 3])
        .broadcast_to(&[r, s, 3])
        .reshape(&[r * s, 3])
}

/// Convenience scalar accessor used by oracles and metrics.
pub fn depth_at<T: Elem>(set: &SampleSet<T>, ray: usize, i: usize) -> f64 {
    set.depths.data()[ray * set.n_samples() + i].as_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoints_without_jitter() {
        let s = stratified_samples::<f64>(2, 4, 0.0, 1.0, RngKey::new(1), false);
        let expect = [0.125, 0.375, 0.625, 0.875];
        for r in 0..2 {
            for i in 0..4 {
                assert!((depth_at(&s, r, i) - expect[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn samples_in_bounds_and_in_their_bins() {
        let (near, far, nc) = (0.5, 1.5, 16);
        let bin = (far - near) / nc as f64;
        for seed in 0..20 {
            let s = stratified_samples::<f64>(50, nc, near, far, RngKey::new(seed), true);
            for r in 0..50 {
                for i in 0..nc {
                    let t = depth_at(&s, r, i);
                    assert!(t >= near && t <= far);
                    let lo = near + i as f64 * bin;
                    assert!(t >= lo && t <= lo + bin, "sample {t} escaped bin {i}");
                }
            }
        }
    }

    #[test]
    fn deltas_sum_to_span() {
        let s = stratified_samples::<f64>(3, 8, 0.7, 1.3, RngKey::new(3), true);
        for r in 0..3 {
            let total: f64 = (0..8)
                .map(|i| s.deltas.data()[r * 8 + i])
                .sum();
            let first = depth_at(&s, r, 0);
            assert!((total - (1.3 - first)).abs() < 1e-12);
        }
    }

    #[test]
    fn concentrated_weights_attract_fine_samples() {
        let coarse = stratified_samples::<f64>(1, 8, 0.0, 1.0, RngKey::new(4), false);
        let mut w = vec![0.0f64; 8];
        w[3] = 1.0;
        let weights = Tensor::from_f64_slice(&[1, 8], &w);
        let fine = hierarchical_samples(&coarse, &weights, 200, RngKey::new(5)).unwrap();
        // Bin 3 spans [depths[3], depths[3] + delta). Count fine samples
        // inside (merged set includes the 8 coarse midpoints).
        let lo = depth_at(&coarse, 0, 3);
        let hi = lo + coarse.deltas.data()[3];
        let inside = (0..fine.n_samples())
            .filter(|&i| {
                let t = depth_at(&fine, 0, i);
                t >= lo && t <= hi
            })
            .count();
        assert!(inside >= 180, "only {inside}/208 samples in the hot bin");
    }

    #[test]
    fn uniform_weights_spread_samples_uniformly() {
        // Kolmogorov-Smirnov statistic of fine samples vs uniform < 0.05.
        let coarse = stratified_samples::<f64>(1, 16, 0.0, 1.0, RngKey::new(6), false);
        let weights = Tensor::from_f64_slice(&[1, 16], &[1.0; 16]);
        let mut fines: Vec<f64> = Vec::new();
        for seed in 0..50 {
            let merged =
                hierarchical_samples(&coarse, &weights, 200, RngKey::new(100 + seed)).unwrap();
            // Extract fine-only samples by removing known coarse midpoints.
            let coarse_set: Vec<f64> = (0..16).map(|i| depth_at(&coarse, 0, i)).collect();
            for i in 0..merged.n_samples() {
                let t = depth_at(&merged, 0, i);
                if !coarse_set.iter().any(|&c| (c - t).abs() < 1e-12) {
                    fines.push(t);
                }
            }
        }
        fines.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = fines.len() as f64;
        let ks = fines
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let emp_hi = (i + 1) as f64 / n;
                let emp_lo = i as f64 / n;
                (emp_hi - x).abs().max((x - emp_lo).abs())
            })
            .fold(0.0f64, f64::max);
        assert!(ks < 0.05, "KS statistic {ks}");
    }

    #[test]
    fn merged_output_sorted() {
        let coarse = stratified_samples::<f64>(5, 8, 0.2, 1.1, RngKey::new(7), true);
        let weights = Tensor::from_f64_slice(&[5, 8], &(0..40).map(|i| i as f64 % 3.0).collect::<Vec<_>>());
        let merged = hierarchical_samples(&coarse, &weights, 8, RngKey::new(8)).unwrap();
        for r in 0..5 {
            for i in 1..merged.n_samples() {
                assert!(depth_at(&merged, r, i) >= depth_at(&merged, r, i - 1));
            }
        }
    }

    #[test]
    fn zero_weights_fall_back_to_stratified() {
        let coarse = stratified_samples::<f64>(1, 4, 0.0, 1.0, RngKey::new(9), false);
        let weights = Tensor::from_f64_slice(&[1, 4], &[0.0; 4]);
        let merged = hierarchical_samples(&coarse, &weights, 16, RngKey::new(10)).unwrap();
        assert_eq!(merged.n_samples(), 20);
        for i in 1..20 {
            assert!(depth_at(&merged, 0, i) >= depth_at(&merged, 0, i - 1));
        }
    }

    #[test]
    fn negative_weights_rejected() {
        let coarse = stratified_samples::<f64>(1, 4, 0.0, 1.0, RngKey::new(9), false);
        let weights = Tensor::from_f64_slice(&[1, 4], &[0.1, -0.1, 0.2, 0.0]);
        assert!(hierarchical_samples(&coarse, &weights, 4, RngKey::new(10)).is_err());
    }
}
