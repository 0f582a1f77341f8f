//! `BC1` checkpoints.
//!
//! Layout: magic `BEARC1`; u32-LE header length and a UTF-8 header of
//! `key=value` lines (architecture, `config_hash`, training metadata); then
//! for each parameter in order a u32-LE name length, the UTF-8 name and a
//! `BT1` tensor block.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{check_layout, BearConfig};
use crate::autodiff::ParameterSet;
use crate::config::parse_kv;
use crate::error::{Error, Result};
use crate::tensor::bt1::{read_u32, take};
use crate::tensor::{read_bt1, write_bt1};

pub const BC1_MAGIC: &[u8; 6] = b"BEARC1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: BearConfig,
    pub params: ParameterSet<f32>,
    /// Training metadata as ordered `key=value` pairs.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_checkpoint<W: Write>(out: &mut W, ckpt: &Checkpoint) -> Result<()> {
    check_layout(&ckpt.config, &ckpt.params)?;
    let mut header = ckpt.config.to_kv();
    header.push_str(&format!("config_hash={}\n", ckpt.config.hash()));
    for (k, v) in &ckpt.meta {
        if k.contains(['=', '\n']) || v.contains('\n') || BearConfig::KEYS.contains(&k.as_str()) || k == "config_hash" {
            return Err(Error::InvalidArgument(format!("metadata entry {k:?} cannot be stored")));
        }
        header.push_str(&format!("{k}={v}\n"));
    }
    let io = |e| Error::io("<checkpoint>", e);
    out.write_all(BC1_MAGIC).map_err(io)?;
    out.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(header.as_bytes()).map_err(io)?;
    for (name, p) in ckpt.params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(name.as_bytes()).map_err(io)?;
        write_bt1(out, &p.value).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    const WHAT: &str = "BC1 checkpoint";
    let mut pos = 0usize;
    let magic = take(bytes, &mut pos, BC1_MAGIC.len(), 0)?;
    if magic != BC1_MAGIC {
        return Err(Error::format(WHAT, 0, "bad magic"));
    }
    let hlen = read_u32(bytes, &mut pos, 0)? as usize;
    let hstart = pos;
    let header = take(bytes, &mut pos, hlen, 0)?;
    let header = std::str::from_utf8(header).map_err(|e| Error::format(WHAT, (hstart + e.valid_up_to()) as u64, "header is not UTF-8"))?;

    let mut config = BearConfig::desk();
    let mut stored_hash = None;
    let mut meta = Vec::new();
    let mut seen = Vec::new();
    for entry in parse_kv(header).map_err(|e| Error::format(WHAT, hstart as u64, e.to_string()))? {
        if config.set(&entry).map_err(|e| Error::format(WHAT, hstart as u64, e.to_string()))? {
            seen.push(entry.key);
        } else if entry.key == "config_hash" {
            stored_hash = Some(entry.value);
        } else {
            meta.push((entry.key, entry.value));
        }
    }
    if let Some(missing) = BearConfig::KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
        return Err(Error::format(WHAT, hstart as u64, format!("header lacks {missing}")));
    }
    config.validate().map_err(|e| Error::format(WHAT, hstart as u64, e.to_string()))?;
    match stored_hash {
        Some(h) if h == config.hash() => {}
        Some(h) => {
            return Err(Error::format(WHAT, hstart as u64, format!("config_hash {h} does not match header ({})", config.hash())))
        }
        None => return Err(Error::format(WHAT, hstart as u64, "header lacks config_hash")),
    }

    let layout = super::param_layout(&config);
    let mut params = ParameterSet::new();
    while pos < bytes.len() {
        let at = pos;
        let nlen = read_u32(bytes, &mut pos, 0)? as usize;
        let name = take(bytes, &mut pos, nlen, 0)?;
        let name = std::str::from_utf8(name).map_err(|_| Error::format(WHAT, (at + 4) as u64, "parameter name is not UTF-8"))?;
        let Some((_, shape)) = layout.iter().find(|(n, _)| n == name) else {
            return Err(Error::format(WHAT, at as u64, format!("unknown parameter name {name:?}")));
        };
        let tstart = pos;
        let t = read_bt1(bytes, &mut pos, 0)?;
        if t.shape() != shape.as_slice() {
            return Err(Error::format(
                WHAT,
                tstart as u64,
                format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
            ));
        }
        params
            .insert(name, t)
            .map_err(|_| Error::format(WHAT, at as u64, format!("duplicate parameter {name:?}")))?;
    }
    check_layout(&config, &params).map_err(|e| Error::format(WHAT, bytes.len() as u64, e.to_string()))?;
    Ok(Checkpoint { config, params, meta })
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    write_atomic(path, &buf)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

/// Loads a checkpoint that must be architecturally identical to `expected`.
pub fn load_checkpoint_for_training(path: &Path, expected: &BearConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.config.hash() != expected.hash() {
        return Err(Error::Config(format!(
            "{}: checkpoint architecture {} does not match configured {}",
            path.display(),
            ckpt.config.hash(),
            expected.hash()
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> BearConfig {
        BearConfig {
            n: 16,
            m: 4,
            f_pfe: 2,
            f_bfe: 2,
            f_dec: 2,
            pf_branches: 2,
            seed: 1,
            ..BearConfig::desk()
        }
    }

    fn random_ckpt() -> Checkpoint {
        let config = small();
        let mut params = init_params(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (_, p) in params.iter_mut() {
            for v in p.value.data_mut() {
                *v = f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff) * if rng.random() { 1.0 } else { -1.0 };
            }
        }
        Checkpoint {
            config,
            params,
            meta: vec![("epochs".into(), "3".into()), ("best_val_loss".into(), "0.5".into())],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = random_ckpt();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        let back = read_checkpoint(&buf).unwrap();
        assert_eq!(back.config, c.config);
        assert_eq!(back.meta, c.meta);
        for ((na, a), (nb, b)) in c.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            let ba: Vec<u32> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_magic_names_offset_zero() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &random_ckpt()).unwrap();
        buf[0] ^= 0xff;
        let err = read_checkpoint(&buf).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncation_and_unknown_names_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &random_ckpt()).unwrap();
        let err = read_checkpoint(&buf[..buf.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        let err = read_checkpoint(&buf[..20]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let hlen = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        let first = 10 + hlen;
        // "pfe/convlstm1/input-kernels" -> "pfe/convlstm9/input-kernels"
        buf[first + 4 + 12] = b'9';
        let err = read_checkpoint(&buf).unwrap_err();
        assert!(err.to_string().contains("unknown parameter"), "{err}");
        assert!(matches!(err, Error::Format { offset, .. } if offset == first as u64));
    }

    #[test]
    fn missing_parameter_rejected() {
        let c = random_ckpt();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        let last_len = {
            let (_, p) = c.params.iter().last().unwrap();
            let name_len = "pf/branch1/bias".len();
            4 + name_len + 6 + 4 + 4 * p.value.rank() + 4 * p.value.len()
        };
        let err = read_checkpoint(&buf[..buf.len() - last_len]).unwrap_err();
        assert!(err.to_string().contains("missing parameter"), "{err}");
    }

    #[test]
    fn training_load_rejects_other_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bc1");
        let c = random_ckpt();
        save_checkpoint(&path, &c).unwrap();
        let mut reseeded = c.config.clone();
        reseeded.seed = 77;
        load_checkpoint_for_training(&path, &reseeded).unwrap();
        let mut other = c.config.clone();
        other.f_dec = 3;
        assert!(load_checkpoint_for_training(&path, &other).is_err());
        assert_eq!(load_checkpoint(&path).unwrap(), c);
    }
}
