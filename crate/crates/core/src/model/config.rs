use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::config::KvEntry;
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BearConfig {
    /// Input extent; images are `n×n×d`.
    pub n: usize,
    /// Input depth.
    pub d: usize,
    /// Downsample factor of the residual input.
    pub r: usize,
    /// Latent dimension.
    pub m: usize,
    /// ConvLSTM filters in both perceptual encoder blocks.
    pub f_pfe: usize,
    /// ConvLSTM filters in the bottleneck encoder.
    pub f_bfe: usize,
    /// Decoder channel width.
    pub f_dec: usize,
    /// Branch count of the final perceptual-feature stage.
    pub pf_branches: usize,
    /// Odd kernel extent of the ConvLSTM and residual convolutions.
    pub kernel: usize,
    pub seed: u64,
}

/// Spatial reduction of the perceptual encoder (two pool-by-2 blocks).
pub const PFE_REDUCTION: usize = 4;

/// Branches of every perceptual decoder block (kernels 1, 3, 5).
pub const PD_BRANCHES: usize = 3;

impl BearConfig {
    /// Full-size configuration: 128×128×3 inputs, 256-dimensional latent.
    pub fn full() -> Self {
        BearConfig {
            n: 128,
            d: 3,
            r: 4,
            m: 256,
            f_pfe: 16,
            f_bfe: 16,
            f_dec: 32,
            pf_branches: 3,
            kernel: 3,
            seed: 0,
        }
    }

    /// Laptop-scale configuration for 32×32×3 inputs.
    pub fn desk() -> Self {
        BearConfig {
            n: 32,
            d: 3,
            r: 4,
            m: 32,
            f_pfe: 6,
            f_bfe: 6,
            f_dec: 8,
            pf_branches: 3,
            kernel: 3,
            seed: 0,
        }
    }

    /// Spatial extent after the perceptual encoder, shared with the residual input.
    pub fn reduced(&self) -> usize {
        self.n / PFE_REDUCTION
    }

    /// Input length of the bottleneck dense layer.
    pub fn bfe_flat(&self) -> usize {
        let s = self.reduced() / 2;
        s * s * self.f_bfe
    }

    /// Output length of the decoder dense layer.
    pub fn dd_flat(&self) -> usize {
        let s = self.reduced();
        s * s * self.f_dec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.m == 0 || self.f_pfe == 0 || self.f_bfe == 0 || self.f_dec == 0 || self.pf_branches == 0 {
            return bad("d, m, f_pfe, f_bfe, f_dec and pf_branches must be positive".into());
        }
        if self.r != PFE_REDUCTION {
            return bad(format!(
                "r must be {PFE_REDUCTION} so the residual input aligns with the perceptual encoder output, got {}",
                self.r
            ));
        }
        if self.n == 0 || self.n % (2 * PFE_REDUCTION) != 0 {
            return bad(format!("n must be a positive multiple of {}, got {}", 2 * PFE_REDUCTION, self.n));
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 10] = ["n", "d", "r", "m", "f_pfe", "f_bfe", "f_dec", "pf_branches", "kernel", "seed"];

    /// Sets one field from a `key=value` pair. Returns `Ok(false)` for keys
    /// that are not architecture keys.
    pub fn set(&mut self, entry: &KvEntry) -> Result<bool> {
        let slot = match entry.key.as_str() {
            "n" => &mut self.n,
            "d" => &mut self.d,
            "r" => &mut self.r,
            "m" => &mut self.m,
            "f_pfe" => &mut self.f_pfe,
            "f_bfe" => &mut self.f_bfe,
            "f_dec" => &mut self.f_dec,
            "pf_branches" => &mut self.pf_branches,
            "kernel" => &mut self.kernel,
            "seed" => {
                self.seed = entry.parse()?;
                return Ok(true);
            }
            _ => return Ok(false),
        };
        *slot = entry.parse()?;
        Ok(true)
    }

    pub fn to_kv(&self) -> String {
        let mut s = self.architecture_kv();
        writeln!(s, "seed={}", self.seed).unwrap();
        s
    }

    fn architecture_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("n", self.n),
            ("d", self.d),
            ("r", self.r),
            ("m", self.m),
            ("f_pfe", self.f_pfe),
            ("f_bfe", self.f_bfe),
            ("f_dec", self.f_dec),
            ("pf_branches", self.pf_branches),
            ("kernel", self.kernel),
        ] {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    /// Hash of the architecture fields (the seed is excluded); two configs
    /// with equal hashes have interchangeable parameter layouts.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.architecture_kv().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl Default for BearConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        BearConfig::full().validate().unwrap();
        BearConfig::desk().validate().unwrap();
        assert_eq!(BearConfig::full().n * BearConfig::full().n * 3 / BearConfig::full().m, 192);
    }

    #[test]
    fn rejects_bad_extents() {
        let mut c = BearConfig::desk();
        c.n = 36;
        assert!(c.validate().is_err());
        let mut c = BearConfig::desk();
        c.r = 2;
        assert!(c.validate().is_err());
        let mut c = BearConfig::desk();
        c.kernel = 4;
        assert!(c.validate().is_err());
        let mut c = BearConfig::desk();
        c.m = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = BearConfig::desk();
        let mut b = a.clone();
        b.seed = 99;
        assert_eq!(a.hash(), b.hash());
        b.m = 33;
        assert_ne!(a.hash(), b.hash());
    }
}
