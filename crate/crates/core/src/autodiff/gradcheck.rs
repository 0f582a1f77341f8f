//! Central finite-difference gradient checking in 64-bit.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParameterSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Coordinates sampled per parameter tensor (all of them if the tensor is smaller).
    pub per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            per_param: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares backward-pass gradients of `f` against central differences
/// `(f(θ+h e) − f(θ−h e)) / 2h` on sampled coordinates. The error of one
/// coordinate is `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, params: &ParameterSet<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParameterSet<f64>) -> Result<Var>,
{
    let eval = |p: &ParameterSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(&mut g, p)?;
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(Error::shape("grad_check", "loss", "loss must be scalar"));
        }
        Ok(v.data()[0])
    };

    let mut analytic = params.clone();
    analytic.zero_grads();
    {
        let mut g = Graph::new();
        let loss = f(&mut g, &analytic)?;
        g.backward(loss, &mut analytic)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let len = params.value(&name)?.len();
        let coords: Vec<usize> = if len <= opts.per_param {
            (0..len).collect()
        } else {
            let mut v = index::sample(&mut rng, len, opts.per_param).into_vec();
            v.sort_unstable();
            v
        };
        for i in coords {
            let orig = params.value(&name)?.data()[i];
            set(&mut work, &name, i, orig + opts.h);
            let up = eval(&work)?;
            set(&mut work, &name, i, orig - opts.h);
            let down = eval(&work)?;
            set(&mut work, &name, i, orig);
            let numeric = (up - down) / (2.0 * opts.h);
            let a = analytic.grad(&name)?.data()[i];
            let rel_error = (a - numeric).abs() / a.abs().max(1.0);
            report.max_rel_error = report.max_rel_error.max(rel_error);
            report.checks.push(CoordCheck {
                param: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }
    Ok(report)
}

fn set(p: &mut ParameterSet<f64>, name: &str, i: usize, v: f64) {
    p.get_mut(name).expect("parameter present").value.data_mut()[i] = v;
}
