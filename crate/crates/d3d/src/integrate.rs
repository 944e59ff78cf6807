//! Discretized volume integration along rays.
//!
//! With per-sample density sigma_i, interval delta_i and transmittance
//! T_i = exp(-sum_{j<i} sigma_j delta_j), the rendering weights are
//! w_i = T_i (1 - exp(-sigma_i delta_i)); pixel color is sum w_i c_i.

use crate::error::{D3dError, Result};
use crate::num::Elem;
use crate::sampling::SampleSet;
use crate::tensor::Tensor;

/// Per-ray integration results.
pub struct Integrated<T: Elem> {
    /// [R, 3] pixel colors composited over a black background.
    pub rgb: Tensor<T>,
    /// [R, S] rendering weights.
    pub weights: Tensor<T>,
    /// [R] accumulated weight (opacity).
    pub acc: Tensor<T>,
    /// [R] expected depth, normalized by max(acc, 1e-5).
    pub expected_depth: Tensor<T>,
    /// Per-ray flag: expected depth is meaningful (acc >= 0.5).
    pub depth_valid: Vec<bool>,
}

/// Rendering weights from density alone (used by the coarse pass).
pub fn weights_from_sigma<T: Elem>(sigma: &Tensor<T>, deltas: &Tensor<T>) -> Tensor<T> {
    let sd = sigma.mul(&deltas.detach());
    let transmittance = sd.cumsum_exclusive().neg().exp();
    let alpha = sd.neg().exp().neg().add_scalar(1.0);
    transmittance.mul(&alpha)
}

/// Volume integration of sampled densities and colors.
///
/// `sigma` is [R, S] (non-negative), `color` is [R, S, 3] with components
/// in [0, 1]. Differentiable with respect to both. Rejects unsorted sample
/// sets.
pub fn integrate<T: Elem>(
    sigma: &Tensor<T>,
    color: &Tensor<T>,
    samples: &SampleSet<T>,
) -> Result<Integrated<T>> {
    let (r, s) = (samples.n_rays(), samples.n_samples());
    if sigma.shape() != [r, s] {
        return Err(D3dError::Autodiff(format!(
            "integrate: sigma {:?} does not match samples [{r}, {s}]",
            sigma.shape()
        )));
    }
    if color.shape() != [r, s, 3] {
        return Err(D3dError::Autodiff(format!(
            "integrate: color {:?} does not match samples [{r}, {s}, 3]",
            color.shape()
        )));
    }
    for ray in 0..r {
        for i in 1..s {
            if samples.depths.data()[ray * s + i] < samples.depths.data()[ray * s + i - 1] {
                return Err(D3dError::Autodiff(format!(
                    "integrate: unsorted samples on ray {ray} at position {i}"
                )));
            }
        }
    }
    debug_assert!(
        sigma.data().iter().all(|v| *v >= T::zero()),
        "integrate: negative density"
    );

    let weights = weights_from_sigma(sigma, &samples.deltas);
    let acc = weights.sum_axis(1).reshape(&[r]);
    let rgb = weights
        .reshape(&[r, s, 1])
        .mul(color)
        .sum_axis(1)
        .reshape(&[r, 3]);
    let t_detached = samples.depths.detach();
    let expected_depth = weights
        .mul(&t_detached)
        .sum_axis(1)
        .reshape(&[r])
        .div(&acc.max_scalar(1e-5));
    let depth_valid = acc.data().iter().map(|a| a.as_f64() >= 0.5).collect();
    Ok(Integrated {
        rgb,
        weights,
        acc,
        expected_depth,
        depth_valid,
    })
}
