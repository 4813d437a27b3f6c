//! Flat `key=value` run configuration with command-line overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::CliError;

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("out_dir", "out", "root of the game/, data/, models/ and reports/ tree"),
    ("workers", "0", "worker threads, 0 = one per core"),
    ("game", "nonmono18", "lq17, nonmono18, qcqp19, switching20, nonconvex21, random_lq, mpqp, mpqcqp or file:<path>"),
    ("n_agents", "0", "agent count for switching20, nonconvex21 and random_lq, 0 = game default"),
    ("game_seed", "5", "seed of the random generators (random_lq, mpqp, mpqcqp)"),
    ("m_train", "1000", "training samples"),
    ("m_val", "1000", "validation samples"),
    ("m_test", "1000", "test samples"),
    ("data_seed", "0", "base seed of the dataset streams"),
    ("value_hidden", "10,5", "hidden layer sizes of the value models"),
    ("value_activation", "tanh", "relu, leaky_relu, tanh or swish"),
    ("value_bypass", "false", "linear bypass in the value models"),
    ("value_l2", "1e-8", "l2 weight of the value models"),
    ("value_l1", "0", "l1 weight of the value models"),
    ("gne_hidden", "5,3", "hidden layer sizes of the solution model"),
    ("gne_activation", "leaky_relu", "relu, leaky_relu, tanh or swish"),
    ("gne_bypass", "false", "linear bypass in the solution model"),
    ("loss", "smooth_pos", "sum, pos_part or smooth_pos"),
    ("epsilon", "1e-4", "smoothing of the smooth_pos loss"),
    ("beta", "100", "penalty weight"),
    ("gamma", "10", "penalty sharpness"),
    ("l2", "1e-8", "l2 weight of the solution model"),
    ("l1", "0", "l1 weight of the solution model"),
    ("penalize_box", "true", "add decision-box rows to the penalty"),
    ("per_sample_penalty", "false", "one log-sum-exp per sample"),
    ("saturate", "false", "tanh saturation of the outputs into the decision box"),
    ("normalize_input", "false", "train on parameters rescaled to [-1, 1]"),
    ("warm_start", "true", "train-mp: regress onto optimal solutions first"),
    ("restarts", "8", "independent training runs"),
    ("base_seed", "0", "seed of restart 0"),
    ("adam_epochs", "500", "Adam iterations per restart"),
    ("adam_lr", "1e-3", "Adam learning rate"),
    ("lbfgs_iters", "500", "L-BFGS iterations per restart"),
    ("lbfgs_memory", "10", "L-BFGS history length"),
    ("mode", "clip", "prediction mode: raw, clip or project"),
    ("input", "", "predict: CSV of parameter rows"),
    ("output", "", "predict: output CSV, default under reports/"),
];

/// Keys that only affect where or how fast things run, never the results.
const NON_SEMANTIC: &[&str] = &["out_dir", "workers", "input", "output"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
            explicit: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the file (if any), then `--key value` overrides.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            cfg.merge_text(&text)?;
        }
        let mut it = overrides.iter();
        while let Some(arg) = it.next() {
            let Some(flag) = arg.strip_prefix("--") else {
                return Err(CliError::Config(format!("expected --key value, got {arg:?}")));
            };
            let (key, value) = match flag.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| CliError::Config(format!("--{flag} needs a value")))?;
                    (flag.to_string(), v.clone())
                }
            };
            cfg.set(&key.replace('-', "_"), &value)?;
        }
        Ok(cfg)
    }

    /// Reads `key=value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                self.explicit.insert(key.to_string());
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T, CliError> {
        self.str(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key} must be {what}, got {:?}", self.str(key))))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.typed(key, "a nonnegative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.typed(key, "a nonnegative integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.typed(key, "a number")
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(CliError::Config(format!("{key} must be true or false, got {other:?}"))),
        }
    }

    pub fn sizes(&self, key: &str) -> Result<Vec<usize>, CliError> {
        let s = self.str(key).trim();
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|v| v.trim().parse().map_err(|_| CliError::Config(format!("{key} must be a comma list of sizes, got {s:?}"))))
            .collect()
    }

    /// Canonical `key=value` text of the given keys, sorted.
    pub fn canonical(&self, keys: &[&str]) -> String {
        let set: BTreeSet<&str> = keys.iter().copied().collect();
        let mut s = String::new();
        for k in set {
            let _ = writeln!(s, "{k}={}", self.str(k));
        }
        s
    }

    /// Every key whose value can change results.
    pub fn semantic_keys() -> Vec<&'static str> {
        KEYS.iter().map(|(k, _, _)| *k).filter(|k| !NON_SEMANTIC.contains(k)).collect()
    }

    /// Full resolved config as a loadable file body.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn defaults_text() -> String {
        let mut s = String::new();
        for (k, v, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_beat_file_and_unknown_keys_fail() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("beta = 10 # weight\n\nloss=sum\n").unwrap();
        assert_eq!(cfg.f64("beta").unwrap(), 10.0);
        assert!(cfg.is_explicit("loss") && !cfg.is_explicit("gamma"));
        assert!(matches!(cfg.merge_text("betta=1"), Err(CliError::Config(_))));
        let cfg = RunConfig::resolve(None, &["--beta".into(), "3".into(), "--m-train=7".into()]).unwrap();
        assert_eq!((cfg.f64("beta").unwrap(), cfg.usize("m_train").unwrap()), (3.0, 7));
        assert!(RunConfig::resolve(None, &["--beta".into()]).is_err());
    }

    #[test]
    fn typed_getters_reject_garbage() {
        let mut cfg = RunConfig::default();
        cfg.set("restarts", "two").unwrap();
        assert!(cfg.usize("restarts").is_err());
        cfg.set("gne_hidden", "4, 3").unwrap();
        assert_eq!(cfg.sizes("gne_hidden").unwrap(), vec![4, 3]);
        cfg.set("saturate", "maybe").unwrap();
        assert!(cfg.bool("saturate").is_err());
    }

    #[test]
    fn defaults_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.merge_text(&RunConfig::defaults_text()).unwrap();
        assert_eq!(cfg.to_text(), RunConfig::default().to_text());
    }
}
