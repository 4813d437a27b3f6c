//! Shared helpers for the text file formats: exact decimal formatting and
//! atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Formats `v` with 17 significant digits, which round-trips every finite
/// `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        // keeps the sign of -0.0
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    format!("{:.16e}", v)
}

pub fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::parse(what, format!("bad number {s:?}: {e}")))
}

pub fn join_f64(values: &[f64], sep: &str) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(sep)
}

/// Writes `contents` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn special_values() {
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(parse_f64(&fmt_f64(-0.0), "t").unwrap().to_bits(), (-0.0f64).to_bits());
        assert_eq!(parse_f64(&fmt_f64(f64::INFINITY), "t").unwrap(), f64::INFINITY);
        assert_eq!(parse_f64(&fmt_f64(f64::NEG_INFINITY), "t").unwrap(), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse_f64(&fmt_f64(v), "t").unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
