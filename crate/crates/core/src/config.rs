//! Flat `key = value` configuration files.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Keys are
//! exactly the [`SourceParams`] field names; anything else is an error.
//! Unspecified fields keep their defaults.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::SourceParams;

pub fn parse_config(path: impl AsRef<Path>) -> Result<SourceParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string())
}

/// Parses config text on top of the defaults. `origin` only labels errors.
pub fn parse_config_str(text: &str, origin: &str) -> Result<SourceParams> {
    let mut params = SourceParams::default();
    apply_config_str(&mut params, text, origin)?;
    Ok(params)
}

/// Applies every assignment in `text` to `params`.
pub fn apply_config_str(params: &mut SourceParams, text: &str, origin: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::Config {
            path: origin.to_string(),
            line: line_no,
            message,
        };
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        params.set(key, value).map_err(|e| match e {
            Error::Invalid(msg) => err(msg),
            other => other,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::PairDistribution;

    #[test]
    fn single_key_keeps_defaults() {
        let p = parse_config_str("alpha = 0.01\n", "t").unwrap();
        assert_eq!(p, SourceParams::default().with_alpha(0.01));
    }

    #[test]
    fn comments_and_blanks() {
        let text = "# header\n\n alpha = 0.7   # strong pump\npair_distribution = thermal\n";
        let p = parse_config_str(text, "t").unwrap();
        assert_eq!(p.alpha, 0.7);
        assert_eq!(p.pair_distribution, PairDistribution::Thermal);
    }

    #[test]
    fn malformed_value_names_line() {
        let err = parse_config_str("# c\nalpha = banana\n", "cfg.txt").unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("cfg.txt:2:"), "{msg}");
        assert!(msg.contains("banana"), "{msg}");
    }

    #[test]
    fn unknown_key_is_error() {
        let msg = parse_config_str("alhpa = 1", "c").unwrap_err().to_string();
        assert!(msg.contains("unknown key `alhpa`"), "{msg}");
    }

    #[test]
    fn missing_equals_and_duplicates() {
        assert!(parse_config_str("alpha 0.1", "c").is_err());
        assert!(parse_config_str("alpha = 0.1\nalpha = 0.2", "c").is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_config("/nonexistent/spdc.cfg").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/spdc.cfg"));
    }
}
