use crate::autodiff::ParameterSet;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for every parameter, in parameter-set order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            t: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// zeroed afterwards. A non-finite gradient aborts before anything changes.
pub fn adam_step<T: Real>(params: &mut ParameterSet<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer tracks {} tensors, parameter set has {}",
            state.first.len(),
            params.len()
        )));
    }
    if let Some((name, _)) = params.iter().find(|(_, p)| !p.grad.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
            let gv = g.as_f64();
            let mv = b1 * m.as_f64() + (1.0 - b1) * gv;
            let vv = b2 * v.as_f64() + (1.0 - b2) * gv * gv;
            *m = T::lit(mv);
            *v = T::lit(vv);
            let update = lr * (mv / c1) / ((vv / c2).sqrt() + eps);
            *w = T::lit(w.as_f64() - update);
        }
    }
    params.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(w: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::scalar(w)).unwrap();
        p
    }

    fn set_grad(p: &mut ParameterSet<f64>, g: f64) {
        p.get_mut("w").unwrap().grad.data_mut()[0] = g;
    }

    #[test]
    fn zero_gradient_still_counts_a_step() {
        let mut p = scalar_set(1.5);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &mut s, 1e-4).unwrap();
        assert_eq!(p.value("w").unwrap().data(), &[1.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02, 1e3] {
            let mut p = scalar_set(0.0);
            let mut s = AdamState::new(&p);
            set_grad(&mut p, g);
            adam_step(&mut p, &mut s, 1e-4).unwrap();
            let moved = p.value("w").unwrap().data()[0];
            assert!((moved.abs() - 1e-4).abs() < 1e-9, "{moved}");
            assert_eq!(moved.signum(), -g.signum());
            assert_eq!(p.grad("w").unwrap().data(), &[0.0]);
        }
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut p = scalar_set(0.7);
        let mut s = AdamState::new(&p);
        set_grad(&mut p, 4.0);
        adam_step(&mut p, &mut s, 0.0).unwrap();
        assert_eq!(p.value("w").unwrap().data(), &[0.7]);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_set(0.7);
        let mut s = AdamState::new(&p);
        set_grad(&mut p, f64::NAN);
        let err = adam_step(&mut p, &mut s, 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(s.t, 0);
        assert_eq!(p.value("w").unwrap().data(), &[0.7]);
    }
}
