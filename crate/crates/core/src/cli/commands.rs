use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::manifest::RunManifest;
use super::{ClusterArgs, CliError, CliResult, EncodeArgs, InfoArgs, ProjectArgs, ReconstructArgs, SynthArgs, TrainArgs};
use crate::config::RunConfig;
use crate::error::Error;
use crate::image::{load_ppm, save_ppm, RgbImage};
use crate::latent::{self, EmbeddingSet};
use crate::model::{load_checkpoint, param_count, param_count_for, save_checkpoint, write_atomic, BearConfig, BearModel, ParamReport};
use crate::tensor::Tensor;
use crate::train::{fit_with, EPOCH_CSV_HEADER};

/// `.ppm` files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> crate::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

struct Ingested {
    ids: Vec<String>,
    images: Vec<Tensor<f32>>,
}

/// Loads and resizes every image in `dir`. Unreadable files are skipped
/// with a warning.
fn ingest(dir: &Path, cfg: &BearConfig, min_images: usize) -> CliResult<Ingested> {
    if cfg.d != 3 {
        return Err(Error::shape("ingest", "channels", format!("PPM images have 3 channels, model expects d = {}", cfg.d)).into());
    }
    let mut ids = Vec::new();
    let mut images = Vec::new();
    let mut skipped = 0;
    for path in list_images(dir)? {
        match load_ppm(&path).and_then(|img| img.resize_to(cfg.n)) {
            Ok(t) => {
                ids.push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
                images.push(t);
            }
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    info!("{}: {} images loaded, {} skipped", dir.display(), images.len(), skipped);
    if images.len() < min_images {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} usable images, need at least {min_images}",
            dir.display(),
            images.len()
        ))
        .into());
    }
    Ok(Ingested { ids, images })
}

fn write_text(path: &Path, text: &str) -> CliResult {
    write_atomic(path, text.as_bytes()).map_err(CliError::from)
}

fn default_log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".epochs.csv");
    PathBuf::from(s)
}

pub fn cmd_train(a: &TrainArgs) -> CliResult {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.set_seed(seed);
    }
    let data = ingest(&a.data, &cfg.model, 2)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    let mut log_text = format!("{EPOCH_CSV_HEADER}\n");
    let out = fit_with(&data.images, &cfg.train, &cfg.model, None, |r| {
        info!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:.3e}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
        );
        log_text.push_str(&r.csv_row());
        log_text.push('\n');
    })?;
    save_checkpoint(&a.out, &out.checkpoint)?;
    write_text(&log_path, &log_text)?;
    info!(
        "best validation loss {} at epoch {}, {} epochs run{}",
        out.checkpoint.meta("best_val_loss").unwrap_or("?"),
        out.checkpoint.meta("best_epoch").unwrap_or("?"),
        out.log.len(),
        if out.stopped_early { " (stopped early)" } else { "" }
    );
    let mut m = RunManifest::new("train")
        .input("data", &a.data)?
        .input("config", &a.config)?
        .output("checkpoint", &a.out)
        .output("epoch_log", &log_path);
    m.config_path = Some(a.config.clone());
    m.config_hash = Some(cfg.model.hash());
    m.seed = Some(cfg.train.seed);
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn cmd_encode(a: &EncodeArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let model = BearModel::new(ckpt.config.clone(), ckpt.params)?;
    let data = ingest(&a.data, &model.config, 1)?;
    let mut rows = Vec::with_capacity(data.images.len());
    for (id, x) in data.ids.iter().zip(&data.images) {
        let z = model.encode(x)?;
        if !z.is_finite() {
            return Err(Error::NonFinite(format!("latent vector of {id}")).into());
        }
        rows.push(z.into_data());
    }
    let set = EmbeddingSet::from_f32(data.ids, &rows)?;
    write_text(&a.out, &set.to_csv())?;
    info!("wrote {} embeddings of dimension {} to {}", set.len(), set.dim(), a.out.display());
    let mut m = RunManifest::new("encode")
        .input("checkpoint", &a.ckpt)?
        .input("data", &a.data)?
        .output("embeddings", &a.out);
    m.config_hash = Some(model.config.hash());
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> CliResult {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let model = BearModel::new(ckpt.config.clone(), ckpt.params)?;
    if model.config.d != 3 {
        return Err(Error::shape("reconstruct", "channels", format!("model expects d = {}", model.config.d)).into());
    }
    let img = load_ppm(&a.input)?;
    let x = img.resize_to(model.config.n)?;
    let y = model.forward(&x)?;
    let out = RgbImage::from_tensor(&y)?;
    save_ppm(&a.out, &out)?;
    let mut m = RunManifest::new("reconstruct")
        .input("checkpoint", &a.ckpt)?
        .input("image", &a.input)?
        .output("image", &a.out);
    m.config_hash = Some(model.config.hash());
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn cmd_cluster(a: &ClusterArgs) -> CliResult {
    let raw = EmbeddingSet::read_csv(&a.embeddings)?;
    let e = match a.rank {
        Some(r) => latent::reduce(&raw, r)?,
        None => raw,
    };
    if let Some(range) = &a.elbow {
        let (lo, hi) = (range[0], range[1]);
        if lo == 0 || lo >= hi {
            return Err(CliError::Usage(format!("--elbow needs 1 <= KMIN < KMAX, got {lo} {hi}")));
        }
        let curve = latent::elbow_with(&e, lo, hi, a.seed, a.max_iter, a.restarts)?;
        write_text(&a.out, &latent::elbow_csv(&curve))?;
        if !curve.restart_failures.is_empty() {
            warn!("inertia rose at k = {:?}; restarts did not find a better partition", curve.restart_failures);
        }
        if curve.has_elbow {
            println!("selected_k={}", curve.selected_k);
        } else {
            println!("selected_k={} (no clear elbow)", curve.selected_k);
        }
    } else {
        let k = a.k.unwrap_or(1) as usize;
        let r = latent::kmeans(&e, k, a.seed, a.max_iter, a.restarts)?;
        write_text(&a.out, &latent::clusters_csv(&e, &r))?;
        info!("k = {k}: inertia {} after {} iterations", r.inertia, r.iterations);
    }
    let mut m = RunManifest::new("cluster").input("embeddings", &a.embeddings)?.output("clusters", &a.out);
    m.seed = Some(a.seed);
    m.write_beside(&a.out)?;
    Ok(())
}

pub fn cmd_project(a: &ProjectArgs) -> CliResult {
    let e = EmbeddingSet::read_csv(&a.embeddings)?;
    let p = latent::project2d(&e)?;
    write_text(&a.out, &latent::projection_csv(&e, &p))?;
    info!(
        "explained variance {:.6} + {:.6}",
        p.pca.variances[0], p.pca.variances[1]
    );
    RunManifest::new("project")
        .input("embeddings", &a.embeddings)?
        .output("projection", &a.out)
        .write_beside(&a.out)?;
    Ok(())
}

/// Plain-text parameter table. The last line is `total <count>`.
pub fn info_report(cfg: &BearConfig, report: &ParamReport) -> String {
    let mut s = String::new();
    writeln!(s, "architecture {}", cfg.hash()).unwrap();
    writeln!(
        s,
        "config n={} d={} m={} f_pfe={} f_bfe={} f_dec={} pf_branches={} kernel={}",
        cfg.n, cfg.d, cfg.m, cfg.f_pfe, cfg.f_bfe, cfg.f_dec, cfg.pf_branches, cfg.kernel
    )
    .unwrap();
    writeln!(s, "compression {}", (cfg.n * cfg.n * cfg.d) as f64 / cfg.m as f64).unwrap();
    for (name, n) in &report.blocks {
        writeln!(s, "block {name:<24} {n:>12}").unwrap();
    }
    for (name, n) in &report.stages {
        writeln!(s, "stage {name:<24} {n:>12}").unwrap();
    }
    writeln!(s, "total {}", report.total).unwrap();
    s
}

pub fn cmd_info(a: &InfoArgs) -> CliResult {
    let text = match (&a.ckpt, &a.config) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            info_report(&ckpt.config, &param_count(&ckpt.params))
        }
        (None, Some(path)) => {
            let cfg = RunConfig::load(path)?;
            info_report(&cfg.model, &param_count_for(&cfg.model))
        }
        (None, None) => return Err(CliError::Usage("info needs --ckpt or --config".into())),
    };
    print!("{text}");
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> CliResult {
    if a.size == 0 || a.count == 0 {
        return Err(CliError::Usage("--count and --size must be positive".into()));
    }
    let paths = crate::synth::write_synth_dir(&a.out, a.count, a.size, a.seed)?;
    info!("wrote {} images of {}x{} to {}", paths.len(), a.size, a.size, a.out.display());
    let mut m = RunManifest::new("synth").output("images", &a.out);
    m.seed = Some(a.seed);
    m.write_beside(&a.out)?;
    Ok(())
}
