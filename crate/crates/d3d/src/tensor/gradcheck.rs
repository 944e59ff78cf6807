//! Finite-difference gradient verification. Always runs at f64: the checks
//! are about algorithmic correctness, and double precision keeps the
//! difference quotient noise far below the tolerances.

use super::graph::backward;
use super::Tensor;
use crate::rng::RngKey;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked_coords: usize,
}

impl GradCheck {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare reverse-mode gradients of `f` against central finite differences
/// at `inputs`. `f` must be scalar-valued. Checks up to `max_coords`
/// coordinates per input (deterministically subsampled).
pub fn grad_check_fn<F>(
    name: &str,
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
    tol: f64,
    max_coords: usize,
) -> GradCheck
where
    F: Fn(&[Tensor<f64>]) -> Tensor<f64>,
{
    let tracked: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().tracked()).collect();
    let loss = f(&tracked);
    assert_eq!(loss.numel(), 1, "grad_check: {name} must be scalar-valued");
    let grads = backward(&loss, false).expect("backward");

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let skip_key = RngKey::new(0x6f0c).child(name.len() as u64);
    for (k, input) in tracked.iter().enumerate() {
        let analytic = grads
            .get(input)
            .map(|g| g.to_f64_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let n = input.numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            // Deterministic subsample without replacement bias concerns.
            let mut s = skip_key.child(k as u64).stream();
            (0..max_coords)
                .map(|_| (s.next_u64() as usize) % n)
                .collect()
        };
        for &i in &coords {
            let base = input.to_f64_vec();
            let eval = |v: f64| {
                let mut data = base.clone();
                data[i] = v;
                let mut probe: Vec<Tensor<f64>> = tracked.iter().map(|t| t.detach()).collect();
                probe[k] = Tensor::from_vec(input.shape(), data);
                let guard = super::graph::no_grad();
                let out = f(&probe).item();
                drop(guard);
                out
            };
            let fd = (eval(base[i] + step) - eval(base[i] - step)) / (2.0 * step);
            max_rel = max_rel.max(rel_err(analytic[i], fd));
            checked += 1;
        }
    }
    GradCheck {
        name: name.to_string(),
        max_rel_err: max_rel,
        tol,
        checked_coords: checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_is_exact() {
        let x = Tensor::from_f64_slice(&[4], &[0.3, -0.7, 1.1, 0.2]);
        let w = Tensor::from_f64_slice(&[4], &[2.0, -1.0, 0.5, 3.0]);
        let check = grad_check_fn(
            "linear",
            |ins| ins[0].mul(&w).sum_all(),
            &[x],
            1e-3,
            1e-6,
            64,
        );
        assert!(check.pass(), "{check:?}");
    }

    #[test]
    fn composite_nonlinearity() {
        let x = Tensor::from_f64_slice(&[3], &[0.25, -0.4, 0.9]);
        let check = grad_check_fn(
            "sin_sigmoid_mix",
            |ins| ins[0].sin().sigmoid().mul(&ins[0].exp()).sum_all(),
            &[x],
            1e-3,
            1e-5,
            64,
        );
        assert!(check.pass(), "{check:?}");
    }
}
