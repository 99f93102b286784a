//! Flat key-value run configuration files.
//!
//! Format: one `key = value` pair per line; `#` starts a comment; blank lines
//! ignored. Keys are merged under explicit command-line flags (flags win).

use std::collections::BTreeMap;

use crate::error::{malformed, Result};

/// Parsed configuration: ordered key → raw value string.
pub type ConfigMap = BTreeMap<String, String>;

/// Parse flat key-value config text.
pub fn parse_config_text(text: &str) -> Result<ConfigMap> {
    let mut map = ConfigMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            malformed(format!("config line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(malformed(format!("config line {}: empty key", lineno + 1)));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(malformed(format!(
                "config line {}: duplicate key '{}'",
                lineno + 1,
                key
            )));
        }
    }
    Ok(map)
}

/// Parse config bytes, rejecting non-UTF-8 input.
pub fn parse_config_bytes(bytes: &[u8]) -> Result<ConfigMap> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| malformed("config file is not valid UTF-8"))?;
    parse_config_text(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_blanks() {
        let cfg = parse_config_text("seed = 7\n# comment\n\nlr=0.05 # trailing\n").unwrap();
        assert_eq!(cfg.get("seed").unwrap(), "7");
        assert_eq!(cfg.get("lr").unwrap(), "0.05");
        assert_eq!(cfg.len(), 2);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_config_text("novalue\n").is_err());
        assert!(parse_config_text("= 3\n").is_err());
        assert!(parse_config_text("a = 1\na = 2\n").is_err());
        assert!(parse_config_bytes(&[0xff, 0xfe, b'=', b'1']).is_err());
    }

    #[test]
    fn value_may_contain_equals() {
        let cfg = parse_config_text("expr = a=b\n").unwrap();
        assert_eq!(cfg.get("expr").unwrap(), "a=b");
    }
}
