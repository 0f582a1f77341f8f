use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossKind {
    #[default]
    Bce,
    Mse,
}

impl LossKind {
    pub fn apply<T: Real>(self, g: &mut Graph<T>, target: Var, pred: Var) -> Result<Var> {
        match self {
            LossKind::Bce => bce_loss(g, target, pred),
            LossKind::Mse => mse_loss(g, target, pred),
        }
    }

    /// Loss value of a pair of tensors.
    pub fn eval<T: Real>(self, target: &Tensor<T>, pred: &Tensor<T>) -> Result<f64> {
        let mut g = Graph::new();
        let t = g.constant(target.clone());
        let p = g.constant(pred.clone());
        let l = self.apply(&mut g, t, p)?;
        Ok(g.value(l).data()[0].as_f64())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::Config(format!("loss must be bce or mse, got {other:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
        })
    }
}

/// `−mean[x·ln x̂ + (1−x)·ln(1−x̂)]` over every element, with `x̂` clamped
/// to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    g.bce(x, x_hat)
}

/// Mean squared elementwise difference.
pub fn mse_loss<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var) -> Result<Var> {
    g.mse(x, x_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions, ParameterSet};

    #[test]
    fn bce_examples() {
        let z = Tensor::<f64>::zeros([4, 4, 3]);
        assert!(LossKind::Bce.eval(&z, &z).unwrap() < 1e-6);
        let h = Tensor::<f64>::full([4, 4, 3], 0.5);
        assert!((LossKind::Bce.eval(&h, &h).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let err = LossKind::Bce.eval(&h, &Tensor::full([4, 4, 2], 0.5)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn mse_examples() {
        let a = Tensor::<f64>::full([3], 0.3);
        assert_eq!(LossKind::Mse.eval(&a, &a).unwrap(), 0.0);
        let x = Tensor::<f64>::zeros([1]);
        let y = Tensor::<f64>::full([1], 1.0);
        assert_eq!(LossKind::Mse.eval(&x, &y).unwrap(), 1.0);
        assert!(LossKind::Mse.eval(&x, &Tensor::zeros([2])).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let target = Tensor::<f64>::from_fn([2, 3, 2], |i| (i as f64 * 0.37).sin().abs());
        let mut p = ParameterSet::new();
        p.insert("pred", Tensor::from_fn([2, 3, 2], |i| (i as f64 * 0.11).cos().abs())).unwrap();
        let r = grad_check(
            |g, p| {
                let t = g.constant(target.clone());
                let x = g.param(p, "pred")?;
                mse_loss(g, t, x)
            },
            &p,
            &GradCheckOptions {
                per_param: 12,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9);
        for c in &r.checks {
            let i = c.index;
            let expect = 2.0 * (p.value("pred").unwrap().data()[i] - target.data()[i]) / 12.0;
            assert!((c.analytic - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn bce_gradient_vanishes_at_target() {
        // interior targets: the optimum is x̂ = x exactly
        let x = Tensor::<f64>::from_fn([10], |i| 0.05 + 0.09 * i as f64);
        let mut g = Graph::new();
        let t = g.constant(x.clone());
        let p = g.variable(x);
        let l = bce_loss(&mut g, t, p).unwrap();
        let grads = g.gradients(l).unwrap();
        assert!(grads.get(p).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn parse_kind() {
        assert_eq!("mse".parse::<LossKind>().unwrap(), LossKind::Mse);
        assert!("l1".parse::<LossKind>().is_err());
        assert_eq!(LossKind::Bce.to_string(), "bce");
    }
}
