//! The BEAR autoencoder.
//!
//! Dataflow for an `n×n×d` input `x` with residual `x̃ = avgpool_4(x)`:
//!
//! ```text
//! encode: pfe(x) → rfe(·, x̃) → rfe(·, x̃) → bfe(·, x̃) → z ∈ R^m
//! decode: dd(z) → pd → pd → pf → x̂ ∈ (0,1)^{n×n×d}
//! ```
//!
//! Stage extents: `n → n/4 → n/4 → m → n/4 → n/2 → n → n`.

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Padding, ParameterSet, Var};
use crate::error::{Error, Result};
use crate::nn::{self, branch_kernel, ConvLstmCell, ConvLstmParams, Merge, ParallelConv};
use crate::tensor::{Real, Tensor};

pub(crate) use checkpoint::write_atomic;
pub use checkpoint::{
    load_checkpoint, load_checkpoint_for_training, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    BC1_MAGIC,
};
pub use config::{BearConfig, PD_BRANCHES, PFE_REDUCTION};

/// Latent code of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector {
    pub values: Tensor<f32>,
    pub source_id: String,
}

/// Expected shape of every parameter, in initialisation order.
pub fn param_layout(cfg: &BearConfig) -> Vec<(String, Vec<usize>)> {
    let k = cfg.kernel;
    let mut out = Vec::new();
    let lstm = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str, f: usize| {
        out.push((format!("{prefix}/{}", nn::INPUT_KERNELS), vec![k, k, 1, 4 * f]));
        out.push((format!("{prefix}/{}", nn::RECURRENT_KERNELS), vec![k, k, f, 4 * f]));
        out.push((format!("{prefix}/{}", nn::BIASES), vec![4 * f]));
    };
    lstm(&mut out, "pfe/convlstm1", cfg.f_pfe);
    lstm(&mut out, "pfe/convlstm2", cfg.f_pfe);
    for i in 1..=2 {
        out.push((format!("rfe/conv{i}/kernel"), vec![k, k, cfg.f_pfe + cfg.d, cfg.f_pfe]));
        out.push((format!("rfe/conv{i}/bias"), vec![cfg.f_pfe]));
    }
    lstm(&mut out, "bfe/convlstm", cfg.f_bfe);
    out.push(("bfe/dense/weights".into(), vec![cfg.bfe_flat(), cfg.m]));
    out.push(("bfe/dense/bias".into(), vec![cfg.m]));
    out.push(("dd/dense/weights".into(), vec![cfg.m, cfg.dd_flat()]));
    out.push(("dd/dense/bias".into(), vec![cfg.dd_flat()]));
    for stage in ["pd1", "pd2"] {
        for i in 0..PD_BRANCHES {
            let kb = branch_kernel(i);
            out.push((format!("{stage}/branch{i}/kernel"), vec![kb, kb, cfg.f_dec, cfg.f_dec]));
            out.push((format!("{stage}/branch{i}/bias"), vec![cfg.f_dec]));
        }
    }
    for i in 0..cfg.pf_branches {
        let kb = branch_kernel(i);
        out.push((format!("pf/branch{i}/kernel"), vec![kb, kb, cfg.f_dec, cfg.d]));
        out.push((format!("pf/branch{i}/bias"), vec![cfg.d]));
    }
    out
}

/// Seeded initialisation: Glorot-uniform weights, zero biases, forget-gate
/// biases at +1.
pub fn init_params(cfg: &BearConfig) -> Result<ParameterSet<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = ParameterSet::new();
    let k = cfg.kernel;
    ConvLstmParams::init(cfg.f_pfe, k, &mut rng).insert_into(&mut p, "pfe/convlstm1")?;
    ConvLstmParams::init(cfg.f_pfe, k, &mut rng).insert_into(&mut p, "pfe/convlstm2")?;
    for i in 1..=2 {
        let cin = cfg.f_pfe + cfg.d;
        p.insert(
            format!("rfe/conv{i}/kernel"),
            nn::glorot_uniform(&[k, k, cin, cfg.f_pfe], k * k * cin, k * k * cfg.f_pfe, &mut rng),
        )?;
        p.insert(format!("rfe/conv{i}/bias"), Tensor::zeros([cfg.f_pfe]))?;
    }
    ConvLstmParams::init(cfg.f_bfe, k, &mut rng).insert_into(&mut p, "bfe/convlstm")?;
    let (q, m) = (cfg.bfe_flat(), cfg.m);
    p.insert("bfe/dense/weights", nn::glorot_uniform(&[q, m], q, m, &mut rng))?;
    p.insert("bfe/dense/bias", Tensor::zeros([m]))?;
    let o = cfg.dd_flat();
    p.insert("dd/dense/weights", nn::glorot_uniform(&[m, o], m, o, &mut rng))?;
    p.insert("dd/dense/bias", Tensor::zeros([o]))?;
    for stage in ["pd1", "pd2"] {
        nn::ParallelConvParams::init(PD_BRANCHES, cfg.f_dec, cfg.f_dec, Merge::Mean, &mut rng).insert_into(&mut p, stage)?;
    }
    nn::ParallelConvParams::init(cfg.pf_branches, cfg.f_dec, cfg.d, Merge::Mean, &mut rng).insert_into(&mut p, "pf")?;
    debug_assert!(p
        .iter()
        .map(|(n, t)| (n.to_string(), t.value.shape().to_vec()))
        .eq(param_layout(cfg)));
    Ok(p)
}

/// Checks that `params` carries exactly the layout `cfg` requires.
pub fn check_layout<T: Real>(cfg: &BearConfig, params: &ParameterSet<T>) -> Result<()> {
    let layout = param_layout(cfg);
    for (name, shape) in &layout {
        let v = params
            .value(name)
            .map_err(|_| Error::Config(format!("missing parameter {name}")))?;
        if v.shape() != shape.as_slice() {
            return Err(Error::Config(format!(
                "parameter {name} has shape {:?}, config needs {shape:?}",
                v.shape()
            )));
        }
    }
    if let Some(extra) = params.names().find(|n| !layout.iter().any(|(l, _)| l == n)) {
        return Err(Error::Config(format!("unknown parameter {extra}")));
    }
    Ok(())
}

/// Names of the tensors the L2 regulariser acts on.
pub fn recurrent_kernel_names(cfg: &BearConfig) -> Vec<String> {
    param_layout(cfg)
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| n.ends_with(nn::RECURRENT_KERNELS))
        .collect()
}

fn check_input<T: Real>(g: &Graph<T>, cfg: &BearConfig, x: Var) -> Result<()> {
    let (h, w, d) = g.value(x).dims3("bear input")?;
    if h != cfg.n {
        return Err(Error::shape("bear input", "height", format!("expected {}, got {h}", cfg.n)));
    }
    if w != cfg.n {
        return Err(Error::shape("bear input", "width", format!("expected {}, got {w}", cfg.n)));
    }
    if d != cfg.d {
        return Err(Error::shape("bear input", "depth", format!("expected {}, got {d}", cfg.d)));
    }
    Ok(())
}

/// `x̃`: the input averaged over `r×r` blocks.
pub fn residual_input<T: Real>(g: &mut Graph<T>, cfg: &BearConfig, x: Var) -> Result<Var> {
    check_input(g, cfg, x)?;
    g.avg_pool(x, cfg.r)
}

/// Perceptual feature encoder: two ConvLSTM channel scans, each followed by
/// a 2×2 average pool. The first scans the image channels, the second scans
/// the `f_pfe` feature maps of the first.
pub fn pfe<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, x: Var) -> Result<Var> {
    let c1 = ConvLstmCell::bind(g, p, "pfe/convlstm1")?;
    let h1 = c1.run_over_channels(g, x)?;
    let z1 = g.avg_pool(h1, 2)?;
    let c2 = ConvLstmCell::bind(g, p, "pfe/convlstm2")?;
    let h2 = c2.run_over_channels(g, z1)?;
    g.avg_pool(h2, 2)
}

fn check_aligned<T: Real>(g: &Graph<T>, op: &'static str, z: Var, xt: Var) -> Result<()> {
    let (zh, zw, _) = g.value(z).dims3(op)?;
    let (rh, rw, _) = g.value(xt).dims3(op)?;
    if zh != rh {
        return Err(Error::shape(op, "height", format!("features {zh} vs residual {rh}")));
    }
    if zw != rw {
        return Err(Error::shape(op, "width", format!("features {zw} vs residual {rw}")));
    }
    Ok(())
}

/// Residual feature entanglement block `index` (1 or 2): concatenate the
/// features with `x̃`, convolve back to the feature width, `tanh`.
pub fn rfe<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, index: usize, z: Var, xt: Var) -> Result<Var> {
    check_aligned(g, "rfe", z, xt)?;
    let cat = g.concat_channels(z, xt)?;
    let k = g.param(p, &format!("rfe/conv{index}/kernel"))?;
    let b = g.param(p, &format!("rfe/conv{index}/bias"))?;
    let out = g.conv2d(cat, k, b, 1, Padding::Same)?;
    let out = g.tanh(out);
    if g.value(out).shape() != g.value(z).shape() {
        return Err(Error::shape(
            "rfe",
            "channel",
            format!("output {:?} does not preserve input {:?}", g.value(out).shape(), g.value(z).shape()),
        ));
    }
    Ok(out)
}

/// Bottleneck feature encoder: concatenate with `x̃`, ConvLSTM scan over the
/// channel maps, 2×2 average pool, flatten, dense to `m`, `tanh`.
pub fn bfe<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, z: Var, xt: Var) -> Result<Var> {
    check_aligned(g, "bfe", z, xt)?;
    let cat = g.concat_channels(z, xt)?;
    let cell = ConvLstmCell::bind(g, p, "bfe/convlstm")?;
    let h = cell.run_over_channels(g, cat)?;
    let pooled = g.avg_pool(h, 2)?;
    let flat = g.flatten(pooled)?;
    let w = g.param(p, "bfe/dense/weights")?;
    let b = g.param(p, "bfe/dense/bias")?;
    let out = g.dense(flat, w, b)?;
    Ok(g.tanh(out))
}

/// Dense decoder: `m → (n/4)²·f_dec`, reshaped to a feature map, `tanh`.
pub fn dd<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, cfg: &BearConfig, z: Var) -> Result<Var> {
    let w = g.param(p, "dd/dense/weights")?;
    let b = g.param(p, "dd/dense/bias")?;
    let out = g.dense(z, w, b)?;
    let s = cfg.reduced();
    let map = g.reshape(out, [s, s, cfg.f_dec])?;
    Ok(g.tanh(map))
}

/// Perceptual decoder block `index` (1 or 2): parallel 1/3/5 convolutions
/// averaged, `tanh`, nearest upsampling by 2.
pub fn pd<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, index: usize, z: Var) -> Result<Var> {
    let block = ParallelConv::bind(g, p, &format!("pd{index}"), PD_BRANCHES, Merge::Mean)?;
    let y = block.apply(g, z)?;
    let y = g.tanh(y);
    g.upsample(y, 2)
}

/// Perceptual features: `pf_branches` parallel convolutions to `d` channels,
/// averaged, then a sigmoid so the reconstruction lies in (0, 1).
pub fn pf_reconstruct<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, cfg: &BearConfig, z: Var) -> Result<Var> {
    let block = ParallelConv::bind(g, p, "pf", cfg.pf_branches, Merge::Mean)?;
    let y = block.apply(g, z)?;
    Ok(g.sigmoid(y))
}

/// Every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    pub input: Var,
    pub residual: Var,
    pub pfe: Var,
    pub rfe1: Var,
    pub rfe2: Var,
    pub latent: Var,
    pub dd: Var,
    pub pd1: Var,
    pub pd2: Var,
    pub reconstruction: Var,
}

pub fn encode_graph<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, cfg: &BearConfig, x: Var) -> Result<Var> {
    let xt = residual_input(g, cfg, x)?;
    let z = pfe(g, p, x)?;
    let z = rfe(g, p, 1, z, xt)?;
    let z = rfe(g, p, 2, z, xt)?;
    bfe(g, p, z, xt)
}

pub fn decode_graph<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, cfg: &BearConfig, z: Var) -> Result<Var> {
    let len = g.value(z).len();
    if g.value(z).rank() != 1 || len != cfg.m {
        return Err(Error::shape(
            "decode",
            "latent",
            format!("expected a length-{} vector, got {:?}", cfg.m, g.value(z).shape()),
        ));
    }
    let y = dd(g, p, cfg, z)?;
    let y = pd(g, p, 1, y)?;
    let y = pd(g, p, 2, y)?;
    pf_reconstruct(g, p, cfg, y)
}

pub fn forward_graph<T: Real>(g: &mut Graph<T>, p: &ParameterSet<T>, cfg: &BearConfig, x: Var) -> Result<ForwardPass> {
    let residual = residual_input(g, cfg, x)?;
    let pfe_out = pfe(g, p, x)?;
    let rfe1 = rfe(g, p, 1, pfe_out, residual)?;
    let rfe2 = rfe(g, p, 2, rfe1, residual)?;
    let latent = bfe(g, p, rfe2, residual)?;
    let dd_out = dd(g, p, cfg, latent)?;
    let pd1 = pd(g, p, 1, dd_out)?;
    let pd2 = pd(g, p, 2, pd1)?;
    let reconstruction = pf_reconstruct(g, p, cfg, pd2)?;
    Ok(ForwardPass {
        input: x,
        residual,
        pfe: pfe_out,
        rfe1,
        rfe2,
        latent,
        dd: dd_out,
        pd1,
        pd2,
        reconstruction,
    })
}

/// Parameter counts per block (`<stage>/<block>`), per stage, and in total.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub blocks: Vec<(String, usize)>,
    pub stages: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamReport {
    fn from_entries<'a>(entries: impl Iterator<Item = (&'a str, usize)>) -> Self {
        fn bump(v: &mut Vec<(String, usize)>, key: &str, n: usize) {
            match v.iter_mut().find(|(k, _)| k == key) {
                Some((_, c)) => *c += n,
                None => v.push((key.to_string(), n)),
            }
        }
        let mut blocks = Vec::new();
        let mut stages = Vec::new();
        let mut total = 0;
        for (name, n) in entries {
            let block = name.rsplit_once('/').map_or(name, |(b, _)| b);
            let stage = name.split('/').next().unwrap_or(name);
            bump(&mut blocks, block, n);
            bump(&mut stages, stage, n);
            total += n;
        }
        ParamReport { blocks, stages, total }
    }
}

pub fn param_count<T: Real>(params: &ParameterSet<T>) -> ParamReport {
    ParamReport::from_entries(params.iter().map(|(n, p)| (n, p.value.len())))
}

/// Same as [`param_count`] but from the layout alone, without allocating.
pub fn param_count_for(cfg: &BearConfig) -> ParamReport {
    let layout = param_layout(cfg);
    ParamReport::from_entries(layout.iter().map(|(n, s)| (n.as_str(), s.iter().product())))
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BearModel<T: Real = f32> {
    pub config: BearConfig,
    pub params: ParameterSet<T>,
}

impl BearModel<f32> {
    pub fn init(config: BearConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(BearModel { config, params })
    }
}

impl<T: Real> BearModel<T> {
    pub fn new(config: BearConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        check_layout(&config, &params)?;
        Ok(BearModel { config, params })
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let z = encode_graph(&mut g, &self.params, &self.config, xv)?;
        Ok(g.value(z).clone())
    }

    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let y = decode_graph(&mut g, &self.params, &self.config, zv)?;
        Ok(g.value(y).clone())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let pass = forward_graph(&mut g, &self.params, &self.config, xv)?;
        Ok(g.value(pass.reconstruction).clone())
    }

    pub fn param_count(&self) -> ParamReport {
        param_count(&self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};
    use rand::Rng;

    fn tiny(n: usize) -> BearConfig {
        BearConfig {
            n,
            d: 3,
            r: 4,
            m: 8,
            f_pfe: 2,
            f_bfe: 2,
            f_dec: 3,
            pf_branches: 3,
            kernel: 3,
            seed: 5,
        }
    }

    fn image(n: usize, d: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([n, n, d], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn layout_matches_init() {
        let cfg = tiny(16);
        let p = init_params(&cfg).unwrap();
        check_layout(&cfg, &p).unwrap();
        assert_eq!(param_count(&p), param_count_for(&cfg));
        let report = param_count(&p);
        assert_eq!(report.total, p.element_count());
        assert_eq!(report.stages.iter().map(|s| s.1).sum::<usize>(), report.total);
        let names: Vec<_> = report.stages.iter().map(|s| s.0.as_str()).collect();
        assert_eq!(names, ["pfe", "rfe", "bfe", "dd", "pd1", "pd2", "pf"]);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let p = init_params(&tiny(16)).unwrap();
        let b = p.value("bfe/convlstm/biases").unwrap().data();
        assert_eq!(b, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn init_is_seeded() {
        let a = init_params(&tiny(16)).unwrap();
        let b = init_params(&tiny(16)).unwrap();
        assert_eq!(a, b);
        let mut cfg = tiny(16);
        cfg.seed = 6;
        assert_ne!(a, init_params(&cfg).unwrap());
    }

    #[test]
    fn dense_block_count() {
        let report = ParamReport::from_entries([("x/dense/weights", 32 * 16), ("x/dense/bias", 16)].into_iter());
        assert_eq!(report.blocks, vec![("x/dense".to_string(), 528)]);
    }

    #[test]
    fn stage_shapes_desk() {
        let cfg = tiny(32);
        let model = BearModel::init(cfg.clone()).unwrap();
        let mut g = Graph::new();
        let x = g.constant(image(32, 3, 1));
        let pass = forward_graph(&mut g, &model.params, &cfg, x).unwrap();
        assert_eq!(g.value(pass.residual).shape(), &[8, 8, 3]);
        assert_eq!(g.value(pass.pfe).shape(), &[8, 8, 2]);
        assert_eq!(g.value(pass.rfe1).shape(), &[8, 8, 2]);
        assert_eq!(g.value(pass.rfe2).shape(), &[8, 8, 2]);
        assert_eq!(g.value(pass.latent).shape(), &[8]);
        assert_eq!(g.value(pass.dd).shape(), &[8, 8, 3]);
        assert_eq!(g.value(pass.pd1).shape(), &[16, 16, 3]);
        assert_eq!(g.value(pass.pd2).shape(), &[32, 32, 3]);
        assert_eq!(g.value(pass.reconstruction).shape(), &[32, 32, 3]);
        assert!(g.value(pass.latent).data().iter().all(|v| v.abs() < 1.0));
        assert!(g.value(pass.reconstruction).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_input_extent_rejected() {
        let model = BearModel::init(tiny(16)).unwrap();
        let err = model.encode(&image(32, 3, 0)).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
        let err = model.decode(&Tensor::zeros([7])).unwrap_err();
        assert!(err.to_string().contains("latent"), "{err}");
    }

    #[test]
    fn rfe_shape_and_residual_severing() {
        let cfg = tiny(16);
        let mut p = init_params(&cfg).unwrap();
        // zero every kernel tap that reads the residual channels
        let k = p.get_mut("rfe/conv1/kernel").unwrap();
        let (cin, f) = (cfg.f_pfe + cfg.d, cfg.f_pfe);
        for (i, v) in k.value.data_mut().iter_mut().enumerate() {
            if (i / f) % cin >= cfg.f_pfe {
                *v = 0.0;
            }
        }
        let run = |xt_seed: u64| {
            let mut g = Graph::new();
            let z = g.constant(image(4, 2, 42));
            let xt = g.constant(image(4, 3, xt_seed));
            let out = rfe(&mut g, &p, 1, z, xt).unwrap();
            assert_eq!(g.value(out).shape(), &[4, 4, 2]);
            let again = rfe(&mut g, &p, 1, out, xt).unwrap();
            assert_eq!(g.value(again).shape(), &[4, 4, 2]);
            g.value(out).clone()
        };
        assert_eq!(run(1), run(2));

        let mut g = Graph::new();
        let z = g.constant(image(4, 2, 42));
        let xt = g.constant(image(2, 3, 1));
        assert!(rfe(&mut g, &p, 1, z, xt).is_err());
    }

    #[test]
    fn decoder_zero_latent_zero_bias() {
        let cfg = tiny(16);
        let p = init_params(&cfg).unwrap();
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros([cfg.m]));
        let out = dd(&mut g, &p, &cfg, z).unwrap();
        assert_eq!(g.value(out).shape(), &[4, 4, 3]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pf_branch_is_plain_conv() {
        let mut cfg = tiny(16);
        cfg.pf_branches = 1;
        let p = init_params(&cfg).unwrap();
        let x = image(16, 3, 3);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = pf_reconstruct(&mut g, &p, &cfg, xv).unwrap();
        let conv = crate::autodiff::conv2d(
            &x,
            p.value("pf/branch0/kernel").unwrap(),
            p.value("pf/branch0/bias").unwrap(),
            1,
            Padding::Same,
        )
        .unwrap();
        let expect = conv.map(|v| 1.0 / (1.0 + (-v).exp()));
        assert!(g.value(out).max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn encode_is_deterministic() {
        let model = BearModel::init(tiny(16)).unwrap();
        let x = image(16, 3, 4);
        let a = model.encode(&x).unwrap();
        let b = model.encode(&x).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(model.forward(&x).unwrap(), model.decode(&a).unwrap());
    }

    #[test]
    fn dense_decoder_gradient_check() {
        let cfg = tiny(16);
        let p = init_params(&cfg).unwrap().cast::<f64>();
        let mut sub = ParameterSet::new();
        for name in ["dd/dense/weights", "dd/dense/bias"] {
            sub.insert(name, p.value(name).unwrap().clone()).unwrap();
        }
        let z: Tensor<f64> = image(1, 8, 9).cast::<f64>().into_reshape([8]).unwrap();
        let r = grad_check(
            |g, p| {
                let zv = g.constant(z.clone());
                let y = dd(g, p, &cfg, zv)?;
                Ok(g.sum_squares(y))
            },
            &sub,
            &GradCheckOptions {
                per_param: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{:?}", r.worst());
    }
}
