use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Provenance record written next to every command output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub command: String,
    /// Resolved settings, defaults included.
    pub config: Vec<(String, String)>,
    /// `(label, path, sha256 hex)` of every input file, in read order.
    pub inputs: Vec<(String, String, String)>,
    pub seed: u64,
    pub version: String,
    /// Summary values produced by the run.
    pub results: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..RunManifest::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn result(&mut self, key: &str, value: impl ToString) {
        self.results.push((key.to_string(), value.to_string()));
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = (String, String)>) {
        self.config.extend(entries);
    }

    /// Records an input and returns its bytes; the digest covers exactly what is returned.
    pub fn read_input(&mut self, label: &str, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push((
            label.to_string(),
            path.display().to_string(),
            hex::encode(Sha256::digest(&bytes)),
        ));
        Ok(bytes)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("command={}\nversion={}\nseed={}\n", self.command, self.version, self.seed);
        for (k, v) in &self.config {
            out.push_str(&format!("config.{k}={v}\n"));
        }
        for (label, path, digest) in &self.inputs {
            out.push_str(&format!("input.{label}={path}\ninput.{label}.sha256={digest}\n"));
        }
        for (k, v) in &self.results {
            out.push_str(&format!("result.{k}={v}\n"));
        }
        out
    }

    /// Writes `<output>.manifest` and returns its path.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest");
        let path = PathBuf::from(name);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        std::fs::write(&path, b"abc").unwrap();
        let mut m = RunManifest::new("demo", 3);
        assert_eq!(m.read_input("data", &path).unwrap(), b"abc");
        assert_eq!(
            m.inputs[0].2,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        m.set("p", 10);
        let text = m.to_text();
        assert!(text.starts_with("command=demo\nversion="));
        assert!(text.contains("\nseed=3\nconfig.p=10\ninput.data="));
        let written = m.write_beside(&dir.path().join("out.csv")).unwrap();
        assert!(written.ends_with("out.csv.manifest"));
    }

    #[test]
    fn missing_input_is_a_validation_error() {
        let mut m = RunManifest::new("demo", 0);
        let err = m.read_input("data", Path::new("/nonexistent/file")).unwrap_err();
        assert!(!err.is_runtime_abort());
    }
}
