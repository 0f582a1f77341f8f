use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// What a run read and wrote. Inputs carry content digests, so two equal
/// manifests describe runs over identical bytes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<(String, PathBuf, String)>,
    pub outputs: Vec<(String, PathBuf)>,
}

/// `<path>.manifest`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// SHA-256 of a file, or of every regular file in a directory taken in
/// name order together with the names.
pub(crate) fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            h.update(p.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
            h.update([0]);
            h.update(std::fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
    } else {
        h.update(std::fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.into(),
            ..Default::default()
        }
    }

    pub fn input(mut self, role: &str, path: &Path) -> Result<Self> {
        let digest = digest_path(path)?;
        self.inputs.push((role.into(), path.to_path_buf(), digest));
        Ok(self)
    }

    pub fn output(mut self, role: &str, path: &Path) -> Self {
        self.outputs.push((role.into(), path.to_path_buf()));
        self
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "command={}", self.command).unwrap();
        writeln!(s, "version={}", env!("CARGO_PKG_VERSION")).unwrap();
        if let Some(p) = &self.config_path {
            writeln!(s, "config={}", p.display()).unwrap();
        }
        if let Some(h) = &self.config_hash {
            writeln!(s, "config_hash={h}").unwrap();
        }
        if let Some(seed) = self.seed {
            writeln!(s, "seed={seed}").unwrap();
        }
        for (role, p, d) in &self.inputs {
            writeln!(s, "input.{role}={}", p.display()).unwrap();
            writeln!(s, "input.{role}.sha256={d}").unwrap();
        }
        for (role, p) in &self.outputs {
            writeln!(s, "output.{role}={}", p.display()).unwrap();
        }
        s
    }

    /// Writes the manifest beside `primary`.
    pub fn write_beside(&self, primary: &Path) -> Result<PathBuf> {
        let path = manifest_path(primary);
        std::fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_layout() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, b"abc").unwrap();
        let mut m = RunManifest::new("encode").input("data", &f).unwrap().output("embeddings", Path::new("e.csv"));
        m.seed = Some(4);
        let text = m.render();
        assert!(text.starts_with("command=encode\n"));
        assert!(text.contains("seed=4\n"));
        assert!(text.contains("input.data.sha256=ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad\n"));
        assert!(text.ends_with("output.embeddings=e.csv\n"));
        assert_eq!(manifest_path(Path::new("x/e.csv")), PathBuf::from("x/e.csv.manifest"));
    }

    #[test]
    fn directory_digest_depends_on_contents() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a"), b"1").unwrap();
        let before = digest_path(dir.path()).unwrap();
        assert_eq!(before, digest_path(dir.path()).unwrap());
        std::fs::write(dir.path().join("a"), b"2").unwrap();
        assert_ne!(before, digest_path(dir.path()).unwrap());
    }
}
