//! Network building blocks: a convolutional LSTM that scans the channel
//! axis, parallel multi-kernel convolutions, and the recurrent-kernel L2
//! penalty.
//!
//! Gate pre-activations are stacked along the last kernel axis in the order
//! input, forget, cell-candidate, output:
//!
//! ```text
//! i = σ(Wxi * x + Whi * h + bi)      c' = f ⊙ c + i ⊙ g
//! f = σ(Wxf * x + Whf * h + bf)      h' = o ⊙ tanh(c')
//! g = tanh(Wxg * x + Whg * h + bg)
//! o = σ(Wxo * x + Who * h + bo)
//! ```

use rand::Rng;

use crate::autodiff::{Graph, Padding, ParameterSet, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Offsets of each gate block in the stacked `4F` axis, in units of `F`.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CANDIDATE: usize = 2;
pub const GATE_OUTPUT: usize = 3;

pub const INPUT_KERNELS: &str = "input-kernels";
pub const RECURRENT_KERNELS: &str = "recurrent-kernels";
pub const BIASES: &str = "biases";

/// Uniform Glorot initialisation in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-limit..limit)))
}

/// Tensors of one ConvLSTM cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams<T = f32> {
    /// `k×k×1×4F`
    pub input_kernels: Tensor<T>,
    /// `k×k×F×4F`
    pub recurrent_kernels: Tensor<T>,
    /// `4F`
    pub biases: Tensor<T>,
}

impl<T: Real> ConvLstmParams<T> {
    pub fn filters(&self) -> usize {
        self.biases.len() / 4
    }

    pub fn kernel(&self) -> usize {
        self.input_kernels.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.biases.shape();
        if b.len() != 1 || b[0] == 0 || b[0] % 4 != 0 {
            return Err(Error::shape("convlstm", "gates", format!("biases must have 4F entries, got {b:?}")));
        }
        let f = b[0] / 4;
        let k = match self.input_kernels.shape() {
            &[k, kw, 1, g] if k == kw && k % 2 == 1 && g == 4 * f => k,
            other => {
                return Err(Error::shape("convlstm", "input kernel", format!("expected k×k×1×{}, got {other:?}", 4 * f)))
            }
        };
        if self.recurrent_kernels.shape() != [k, k, f, 4 * f] {
            return Err(Error::shape(
                "convlstm",
                "recurrent kernel",
                format!("expected {:?}, got {:?}", [k, k, f, 4 * f], self.recurrent_kernels.shape()),
            ));
        }
        Ok(())
    }

    /// Glorot kernels, zero biases except the forget gate at +1.
    pub fn init<R: Rng>(filters: usize, kernel: usize, rng: &mut R) -> Self {
        let f4 = 4 * filters;
        let kk = kernel * kernel;
        let input_kernels = glorot_uniform(&[kernel, kernel, 1, f4], kk, kk * f4, rng);
        let recurrent_kernels = glorot_uniform(&[kernel, kernel, filters, f4], kk * filters, kk * f4, rng);
        let biases = Tensor::from_fn([f4], |i| {
            if i / filters == GATE_FORGET {
                T::one()
            } else {
                T::zero()
            }
        });
        ConvLstmParams {
            input_kernels,
            recurrent_kernels,
            biases,
        }
    }

    pub fn insert_into(self, params: &mut ParameterSet<T>, prefix: &str) -> Result<()> {
        params.insert(format!("{prefix}/{INPUT_KERNELS}"), self.input_kernels)?;
        params.insert(format!("{prefix}/{RECURRENT_KERNELS}"), self.recurrent_kernels)?;
        params.insert(format!("{prefix}/{BIASES}"), self.biases)
    }
}

/// Hidden and cell state of a ConvLSTM, each `H×W×F`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// A ConvLSTM cell bound to a graph.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmCell {
    input_kernels: Var,
    recurrent_kernels: Var,
    biases: Var,
    zero_bias: Var,
    filters: usize,
}

impl ConvLstmCell {
    /// Binds `<prefix>/input-kernels`, `<prefix>/recurrent-kernels` and
    /// `<prefix>/biases` from a parameter set.
    pub fn bind<T: Real>(g: &mut Graph<T>, params: &ParameterSet<T>, prefix: &str) -> Result<Self> {
        let input_kernels = g.param(params, &format!("{prefix}/{INPUT_KERNELS}"))?;
        let recurrent_kernels = g.param(params, &format!("{prefix}/{RECURRENT_KERNELS}"))?;
        let biases = g.param(params, &format!("{prefix}/{BIASES}"))?;
        Self::from_vars(g, input_kernels, recurrent_kernels, biases)
    }

    /// Uses the tensors directly as differentiable leaves.
    pub fn from_params<T: Real>(g: &mut Graph<T>, p: &ConvLstmParams<T>) -> Result<Self> {
        p.validate()?;
        let i = g.variable(p.input_kernels.clone());
        let r = g.variable(p.recurrent_kernels.clone());
        let b = g.variable(p.biases.clone());
        Self::from_vars(g, i, r, b)
    }

    fn from_vars<T: Real>(g: &mut Graph<T>, input_kernels: Var, recurrent_kernels: Var, biases: Var) -> Result<Self> {
        let p = ConvLstmParams {
            input_kernels: g.value(input_kernels).clone(),
            recurrent_kernels: g.value(recurrent_kernels).clone(),
            biases: g.value(biases).clone(),
        };
        p.validate()?;
        let filters = p.filters();
        let zero_bias = g.constant(Tensor::zeros([4 * filters]));
        Ok(ConvLstmCell {
            input_kernels,
            recurrent_kernels,
            biases,
            zero_bias,
            filters,
        })
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    /// One time step. `state = None` means the all-zero initial state.
    pub fn step<T: Real>(&self, g: &mut Graph<T>, x_t: Var, state: Option<LstmState>) -> Result<LstmState> {
        let (h, w, c) = g.value(x_t).dims3("convlstm_step")?;
        if c != 1 {
            return Err(Error::shape("convlstm_step", "channel", format!("x_t must have one channel, got {c}")));
        }
        if let Some(s) = state {
            let expect = [h, w, self.filters];
            for (v, what) in [(s.h, "hidden state"), (s.c, "cell state")] {
                if g.value(v).shape() != expect {
                    return Err(Error::shape(
                        "convlstm_step",
                        what,
                        format!("expected {expect:?}, got {:?}", g.value(v).shape()),
                    ));
                }
            }
        }
        let f = self.filters;
        let mut pre = g.conv2d(x_t, self.input_kernels, self.biases, 1, Padding::Same)?;
        if let Some(s) = state {
            let rec = g.conv2d(s.h, self.recurrent_kernels, self.zero_bias, 1, Padding::Same)?;
            pre = g.add(pre, rec)?;
        }
        let gi = g.slice_channels(pre, GATE_INPUT * f, f)?;
        let gf = g.slice_channels(pre, GATE_FORGET * f, f)?;
        let gg = g.slice_channels(pre, GATE_CANDIDATE * f, f)?;
        let go = g.slice_channels(pre, GATE_OUTPUT * f, f)?;
        let i = g.sigmoid(gi);
        let cand = g.tanh(gg);
        let o = g.sigmoid(go);
        let mut cell = g.mul(i, cand)?;
        if let Some(s) = state {
            let fg = g.sigmoid(gf);
            let keep = g.mul(fg, s.c)?;
            cell = g.add(keep, cell)?;
        }
        let tc = g.tanh(cell);
        let hidden = g.mul(o, tc)?;
        Ok(LstmState { h: hidden, c: cell })
    }

    /// Treats the channels of `x` (`H×W×d`) as a sequence in storage order,
    /// starting from the zero state, and returns the final hidden state.
    pub fn run_over_channels<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (_, _, d) = g.value(x).dims3("convlstm_over_channels")?;
        let mut state = None;
        for t in 0..d {
            let x_t = g.slice_channels(x, t, 1)?;
            state = Some(self.step(g, x_t, state)?);
        }
        Ok(state.expect("at least one channel").h)
    }
}

/// Functional form of one ConvLSTM step on plain tensors.
pub fn convlstm_step<T: Real>(
    x_t: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    p: &ConvLstmParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let cell = ConvLstmCell::from_params(&mut g, p)?;
    let x = g.constant(x_t.clone());
    let h = g.constant(h_prev.clone());
    let c = g.constant(c_prev.clone());
    let s = cell.step(&mut g, x, Some(LstmState { h, c }))?;
    Ok((g.value(s.h).clone(), g.value(s.c).clone()))
}

/// Functional form of [`ConvLstmCell::run_over_channels`].
pub fn convlstm_over_channels<T: Real>(x: &Tensor<T>, p: &ConvLstmParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let cell = ConvLstmCell::from_params(&mut g, p)?;
    let xv = g.constant(x.clone());
    let h = cell.run_over_channels(&mut g, xv)?;
    Ok(g.value(h).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Merge {
    Concat,
    Mean,
}

/// Tensors of a parallel-convolution block.
#[derive(Clone, Debug, PartialEq)]
pub struct ParallelConvParams<T = f32> {
    /// `(k×k×C×F kernel, F bias)` per branch.
    pub branches: Vec<(Tensor<T>, Tensor<T>)>,
    pub merge: Merge,
}

/// Kernel extent of branch `i`: 1, 3, 5, ...
pub fn branch_kernel(i: usize) -> usize {
    2 * i + 1
}

impl<T: Real> ParallelConvParams<T> {
    pub fn init<R: Rng>(branches: usize, in_ch: usize, filters: usize, merge: Merge, rng: &mut R) -> Self {
        let branches = (0..branches)
            .map(|i| {
                let k = branch_kernel(i);
                let kk = k * k;
                (
                    glorot_uniform(&[k, k, in_ch, filters], kk * in_ch, kk * filters, rng),
                    Tensor::zeros([filters]),
                )
            })
            .collect();
        ParallelConvParams { branches, merge }
    }

    pub fn insert_into(self, params: &mut ParameterSet<T>, prefix: &str) -> Result<()> {
        for (i, (k, b)) in self.branches.into_iter().enumerate() {
            params.insert(format!("{prefix}/branch{i}/kernel"), k)?;
            params.insert(format!("{prefix}/branch{i}/bias"), b)?;
        }
        Ok(())
    }
}

/// A parallel-convolution block bound to a graph.
#[derive(Clone, Debug)]
pub struct ParallelConv {
    branches: Vec<(Var, Var)>,
    merge: Merge,
}

impl ParallelConv {
    pub fn bind<T: Real>(
        g: &mut Graph<T>,
        params: &ParameterSet<T>,
        prefix: &str,
        branches: usize,
        merge: Merge,
    ) -> Result<Self> {
        let vars = (0..branches)
            .map(|i| {
                Ok((
                    g.param(params, &format!("{prefix}/branch{i}/kernel"))?,
                    g.param(params, &format!("{prefix}/branch{i}/bias"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_vars(g, vars, merge)
    }

    pub fn from_params<T: Real>(g: &mut Graph<T>, p: &ParallelConvParams<T>) -> Result<Self> {
        let vars = p
            .branches
            .iter()
            .map(|(k, b)| (g.variable(k.clone()), g.variable(b.clone())))
            .collect();
        Self::from_vars(g, vars, p.merge)
    }

    fn from_vars<T: Real>(g: &Graph<T>, branches: Vec<(Var, Var)>, merge: Merge) -> Result<Self> {
        let Some(&(k0, _)) = branches.first() else {
            return Err(Error::InvalidArgument("parallel_conv needs at least one branch".into()));
        };
        let s0 = g.value(k0).shape();
        let (c, f) = (s0[2], s0[3]);
        for &(k, _) in &branches {
            let s = g.value(k).shape();
            if s.len() != 4 || s[2] != c || s[3] != f {
                return Err(Error::shape(
                    "parallel_conv",
                    "branch",
                    format!("branch kernel {s:?} disagrees with C={c}, F={f}"),
                ));
            }
        }
        Ok(ParallelConv { branches, merge })
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let outs = self
            .branches
            .iter()
            .map(|&(k, b)| g.conv2d(x, k, b, 1, Padding::Same))
            .collect::<Result<Vec<_>>>()?;
        match self.merge {
            Merge::Mean => g.mean_of(&outs),
            Merge::Concat => {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = g.concat_channels(acc, o)?;
                }
                Ok(acc)
            }
        }
    }
}

/// Functional form of [`ParallelConv::apply`].
pub fn parallel_conv<T: Real>(x: &Tensor<T>, p: &ParallelConvParams<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let block = ParallelConv::from_params(&mut g, p)?;
    let xv = g.constant(x.clone());
    let out = block.apply(&mut g, xv)?;
    Ok(g.value(out).clone())
}

/// `λ · Σ ‖W‖²` over the named parameters.
pub fn l2_penalty<T: Real>(g: &mut Graph<T>, params: &ParameterSet<T>, names: &[String], lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("L2 coefficient must be nonnegative, got {lambda}")));
    }
    let mut total = g.constant(Tensor::scalar(T::zero()));
    for name in names {
        let w = g.param(params, name)?;
        let sq = g.sum_squares(w);
        total = g.add(total, sq)?;
    }
    Ok(g.scale(total, T::lit(lambda)))
}
