//! Bias-corrected Adam.

use super::Tensor;
use crate::num::{c, Elem};
use crate::params::{GradMap, ParamSet};
use std::collections::BTreeMap;

#[derive(Clone)]
pub struct AdamState<T: Elem> {
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Outcome of one optimizer step.
#[derive(Debug, Default, Clone)]
pub struct AdamReport {
    /// Parameters whose update was skipped because their gradient was
    /// non-finite.
    pub skipped: Vec<String>,
}

impl<T: Elem> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |_: &Tensor<T>| Tensor::zeros;
        let m = params
            .iter()
            .map(|(n, t)| (n.clone(), zeros(t)(t.shape())))
            .collect();
        let v = params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        AdamState {
            m,
            v,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One Adam update over `params` in place. Parameters missing from `grads`
/// are treated as zero-gradient (moments decay); non-finite gradients skip
/// the parameter and are reported.
pub fn adam_step<T: Elem>(
    params: &mut ParamSet<T>,
    grads: &GradMap<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> AdamReport {
    state.step += 1;
    let t = state.step as f64;
    let b1: T = c(state.beta1);
    let b2: T = c(state.beta2);
    let one = T::one();
    let bc1: T = c(1.0 / (1.0 - state.beta1.powf(t)));
    let bc2: T = c(1.0 / (1.0 - state.beta2.powf(t)));
    let lr_t: T = c(lr);
    let eps: T = c(state.eps);

    let mut report = AdamReport::default();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let zero_grad;
        let grad = match grads.get(&name) {
            Some(g) => {
                if !g.all_finite() {
                    report.skipped.push(name.clone());
                    continue;
                }
                g
            }
            None => {
                zero_grad = Tensor::zeros(params.get(&name).shape());
                &zero_grad
            }
        };
        let p = params.get(&name);
        debug_assert_eq!(p.shape(), grad.shape(), "gradient shape for {name}");
        let m = state.m.get_mut(&name).expect("moment state");
        let v = state.v.get_mut(&name).expect("moment state");
        let mut m_new = Vec::with_capacity(p.numel());
        let mut v_new = Vec::with_capacity(p.numel());
        let mut p_new = Vec::with_capacity(p.numel());
        for i in 0..p.numel() {
            let g = grad.data()[i];
            let mi = b1 * m.data()[i] + (one - b1) * g;
            let vi = b2 * v.data()[i] + (one - b2) * g * g;
            let mh = mi * bc1;
            let vh = vi * bc2;
            m_new.push(mi);
            v_new.push(vi);
            p_new.push(p.data()[i] - lr_t * mh / (vh.sqrt() + eps));
        }
        *m = m.with_data(m_new);
        *v = v.with_data(v_new);
        let updated = p.with_data(p_new);
        params.set(&name, updated);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(x: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(x));
        p
    }

    #[test]
    fn first_step_moves_by_lr_sign() {
        // With bias correction and eps -> 0, step 1 moves by -lr * sign(g).
        let mut p = one_param(1.0);
        let mut st = AdamState::with_betas(&p, 0.9, 0.999, 1e-12);
        let mut g = GradMap::new();
        g.insert("x".into(), Tensor::scalar(0.37));
        adam_step(&mut p, &g, &mut st, 0.1);
        assert!((p.get("x").item() - 0.9).abs() < 1e-9);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = one_param(2.0);
        let mut st = AdamState::new(&p);
        let mut g = GradMap::new();
        g.insert("x".into(), Tensor::scalar(0.0));
        adam_step(&mut p, &g, &mut st, 0.1);
        assert_eq!(p.get("x").item(), 2.0);
    }

    #[test]
    fn non_finite_gradient_skipped_and_reported() {
        let mut p = one_param(2.0);
        let mut st = AdamState::new(&p);
        let mut g = GradMap::new();
        g.insert("x".into(), Tensor::scalar(f64::NAN));
        let r = adam_step(&mut p, &g, &mut st, 0.1);
        assert_eq!(r.skipped, vec!["x".to_string()]);
        assert_eq!(p.get("x").item(), 2.0);
    }

    #[test]
    fn converges_on_quadratic() {
        // Textbook recurrence as oracle: 200 steps on f(x)=x^2 from x=5.
        let mut p = one_param(5.0);
        let mut st = AdamState::new(&p);
        for _ in 0..200 {
            let x = p.get("x").item();
            let mut g = GradMap::new();
            g.insert("x".into(), Tensor::scalar(2.0 * x));
            adam_step(&mut p, &g, &mut st, 0.1);
        }
        assert!(p.get("x").item().abs() < 0.5, "x = {}", p.get("x").item());
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut p = one_param(1.5);
            let mut st = AdamState::new(&p);
            for i in 0..17 {
                let mut g = GradMap::new();
                g.insert("x".into(), Tensor::scalar(0.01 * i as f64 - 0.05));
                adam_step(&mut p, &g, &mut st, 0.03);
            }
            p.get("x").item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
