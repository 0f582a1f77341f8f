use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, AdamState, LossKind, PlateauSchedule, TrainConfig};
use crate::autodiff::{Graph, ParameterSet};
use crate::error::{Error, Result};
use crate::model::{forward_graph, init_params, recurrent_kernel_names, BearConfig, Checkpoint};
use crate::nn::l2_penalty;
use crate::tensor::Tensor;

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,val_loss,lr,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean reconstruction loss over the epoch's batches (regulariser excluded).
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.epoch, self.train_loss, self.val_loss, self.lr, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitOutput {
    /// Parameters of the epoch with the lowest validation loss.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub stopped_early: bool,
}

/// Seeded shuffle split into (train, validation) index lists. At least one
/// image goes to each side when there are two or more; a single image is
/// used for both.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if n < 2 {
        return (idx.clone(), idx);
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn check_images(images: &[Tensor<f32>], cfg: &BearConfig) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let want = [cfg.n, cfg.n, cfg.d];
    for (i, x) in images.iter().enumerate() {
        if x.shape() != want {
            return Err(Error::shape("fit", "image", format!("image {i} has shape {:?}, expected {want:?}", x.shape())));
        }
        if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("image {i} has values outside [0, 1]")));
        }
    }
    Ok(())
}

/// Mean loss of `params` over the selected images.
pub fn evaluate(
    params: &ParameterSet<f32>,
    cfg: &BearConfig,
    loss: LossKind,
    images: &[Tensor<f32>],
    indices: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for &i in indices {
        let mut g = Graph::new();
        let x = g.constant(images[i].clone());
        let pass = forward_graph(&mut g, params, cfg, x)?;
        let l = loss.apply(&mut g, x, pass.reconstruction)?;
        total += g.value(l).data()[0] as f64;
    }
    let mean = total / indices.len().max(1) as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite("evaluation loss".into()));
    }
    Ok(mean)
}

pub fn fit(images: &[Tensor<f32>], cfg: &TrainConfig, bcfg: &BearConfig) -> Result<FitOutput> {
    fit_with(images, cfg, bcfg, None, |_| {})
}

/// Trains from `init` (or a fresh seeded initialisation), calling `on_epoch`
/// after every epoch.
pub fn fit_with(
    images: &[Tensor<f32>],
    cfg: &TrainConfig,
    bcfg: &BearConfig,
    init: Option<ParameterSet<f32>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutput> {
    cfg.validate()?;
    bcfg.validate()?;
    check_images(images, bcfg)?;
    let mut params = match init {
        Some(p) => {
            crate::model::check_layout(bcfg, &p)?;
            p
        }
        None => init_params(bcfg)?,
    };
    params.zero_grads();
    let (train_idx, val_idx) = split_indices(images.len(), cfg.val_fraction, cfg.seed);
    let initial_train_loss = evaluate(&params, bcfg, cfg.loss, images, &train_idx)?;
    let initial_val_loss = evaluate(&params, bcfg, cfg.loss, images, &val_idx)?;
    info!(
        "fit: {} train / {} validation images, initial {} {:.6} / {:.6}",
        train_idx.len(),
        val_idx.len(),
        cfg.loss,
        initial_train_loss,
        initial_val_loss
    );

    let reg_names = recurrent_kernel_names(bcfg);
    let mut adam = AdamState::new(&params);
    let mut schedule = PlateauSchedule::new(cfg, cfg.lr0);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order = train_idx.clone();
    let mut best = (initial_val_loss, 0usize, params.clone());
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = schedule.lr();
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let weight = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut g = Graph::new();
                let x = g.constant(images[i].clone());
                let pass = forward_graph(&mut g, &params, bcfg, x)?;
                let l = cfg.loss.apply(&mut g, x, pass.reconstruction)?;
                let value = g.value(l).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}, image {i}")));
                }
                batch_loss += value;
                let scaled = g.scale(l, weight);
                g.backward(scaled, &mut params)?;
            }
            if cfg.lambda > 0.0 {
                let mut g = Graph::new();
                let pen = l2_penalty(&mut g, &params, &reg_names, cfg.lambda)?;
                g.backward(pen, &mut params)?;
            }
            adam_step(&mut params, &mut adam, lr)?;
            loss_sum += batch_loss / batch.len() as f64;
            batches += 1;
        }
        let train_loss = loss_sum / batches.max(1) as f64;
        let val_loss = evaluate(&params, bcfg, cfg.loss, images, &val_idx)?;
        let step = schedule.observe(val_loss);
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        debug!("{}", rec.csv_row());
        on_epoch(&rec);
        log.push(rec);
        if step.decayed {
            info!("epoch {epoch}: validation plateau, learning rate now {}", step.lr);
        }
        if step.stop {
            info!("epoch {epoch}: no validation improvement for {} epochs, stopping", cfg.stop_patience);
            stopped_early = true;
            break;
        }
    }

    let (best_val, best_epoch, best_params) = best;
    let mut meta = cfg.to_pairs();
    meta.push(("train_seed".into(), cfg.seed.to_string()));
    meta.push(("epochs_run".into(), log.len().to_string()));
    meta.push(("best_epoch".into(), best_epoch.to_string()));
    meta.push(("best_val_loss".into(), best_val.to_string()));
    Ok(FitOutput {
        checkpoint: Checkpoint {
            config: bcfg.clone(),
            params: best_params,
            meta,
        },
        log,
        initial_train_loss,
        initial_val_loss,
        train_indices: train_idx,
        val_indices: val_idx,
        stopped_early,
    })
}
