//! Run manifests: the resolved config plus hashes of every input and
//! output. A manifest is itself a valid config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_MAGIC: &str = "# mpgne manifest v1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub inputs: Vec<(PathBuf, String)>,
    /// reproducible outputs with their hashes
    pub outputs: Vec<(PathBuf, String)>,
    /// wall-clock outputs, listed but never compared
    pub timing: Vec<PathBuf>,
    pub notes: Vec<String>,
    pub config: String,
}

impl Manifest {
    pub fn new(command: &str, args: &[String], cfg: &RunConfig) -> Self {
        Manifest {
            command: command.to_string(),
            args: args.to_vec(),
            config: cfg.to_text(),
            ..Manifest::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push((path.to_path_buf(), file_hash(path)?));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push((path.to_path_buf(), file_hash(path)?));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_MAGIC}\n");
        let _ = writeln!(s, "# command {}", self.command);
        if !self.args.is_empty() {
            let _ = writeln!(s, "# args {}", self.args.join(" "));
        }
        let _ = writeln!(s, "# tool mpgne-cli {} mpgne {}", env!("CARGO_PKG_VERSION"), mpgne::VERSION);
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "# input {} sha256={h}", p.display());
        }
        for (p, h) in &self.outputs {
            let _ = writeln!(s, "# output {} sha256={h}", p.display());
        }
        for p in &self.timing {
            let _ = writeln!(s, "# timing {}", p.display());
        }
        for n in &self.notes {
            let _ = writeln!(s, "# note {n}");
        }
        s.push_str(&self.config);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(CliError::Format(format!("manifest must start with {MANIFEST_MAGIC:?}")));
        }
        let mut m = Manifest::default();
        let hashed = |rest: &str| -> Result<(PathBuf, String), CliError> {
            let (p, h) = rest
                .rsplit_once(" sha256=")
                .ok_or_else(|| CliError::Format(format!("manifest entry without hash: {rest:?}")))?;
            Ok((PathBuf::from(p), h.to_string()))
        };
        for line in lines {
            let Some(meta) = line.strip_prefix("# ") else {
                m.config.push_str(line);
                m.config.push('\n');
                continue;
            };
            let (tag, rest) = meta.split_once(' ').unwrap_or((meta, ""));
            match tag {
                "command" => m.command = rest.to_string(),
                "args" => m.args = rest.split_whitespace().map(String::from).collect(),
                "input" => m.inputs.push(hashed(rest)?),
                "output" => m.outputs.push(hashed(rest)?),
                "timing" => m.timing.push(PathBuf::from(rest)),
                "note" => m.notes.push(rest.to_string()),
                _ => {}
            }
        }
        if m.command.is_empty() {
            return Err(CliError::Format("manifest names no command".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        mpgne::textfmt::write_atomic(path, self.to_text().as_bytes()).map_err(CliError::from)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Outputs whose current contents differ from the recorded hashes.
    pub fn mismatches(&self) -> Result<Vec<PathBuf>, CliError> {
        let mut bad = Vec::new();
        for (p, h) in &self.outputs {
            if file_hash(p)? != *h {
                bad.push(p.clone());
            }
        }
        Ok(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn text_round_trip_and_config_body() {
        let mut cfg = RunConfig::default();
        cfg.set("beta", "7").unwrap();
        let mut m = Manifest::new("train-gne", &["x".into()], &cfg);
        m.outputs.push(("out/models/a b.txt".into(), "ff".into()));
        m.timing.push("out/models/a.log.csv".into());
        m.notes.push("restart selection: x".into());
        let back = Manifest::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let mut again = RunConfig::default();
        again.merge_text(&m.to_text()).unwrap();
        assert_eq!(again.f64("beta").unwrap(), 7.0);
        assert!(Manifest::from_text("beta=1\n").is_err());
    }
}
