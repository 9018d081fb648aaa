//! Shared helpers for the crate's plain-text file formats.

use crate::error::{Error, Result};

/// Canonical serialization of a real value: scientific notation with nine
/// significant digits, e.g. `-1.23456789e-2`. Parses back as f64.
pub(crate) fn format_real(x: f64) -> String {
    format!("{:.8e}", x)
}

/// Canonical serialization of a time value: fixed three decimals
/// (millisecond precision).
pub(crate) fn format_time(x: f64) -> String {
    format!("{:.3}", x)
}

pub(crate) fn parse_f64(token: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{token}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite {what} `{token}`"),
        });
    }
    Ok(v)
}

pub(crate) fn parse_usize(token: &str, line: usize, what: &str) -> Result<usize> {
    token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{token}`"),
    })
}

/// Iterate the content lines of a flat text file, skipping blanks and `#`
/// comments, yielding (1-based line number, trimmed line).
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parse a flat `key = value` config file into (line, key, value) entries.
pub(crate) fn parse_flat_config(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        let (key, value) = l.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got `{l}`"),
        })?;
        out.push((line, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn real_round_trip_is_stable() {
        for &x in &[0.0, 1.0, -0.5, std::f64::consts::FRAC_1_SQRT_2, 1e-12, -3.25e8] {
            let s = format_real(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(format_real(y), s, "canonical form must be a fixed point");
        }
    }

    #[test]
    fn flat_config_skips_comments() {
        let entries = parse_flat_config("# header\n\n a = 1 \nb= x y\n").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0], (3, "a".into(), "1".into()));
        assert_eq!(entries[1], (4, "b".into(), "x y".into()));
    }

    #[test]
    fn flat_config_rejects_bare_lines() {
        assert!(parse_flat_config("just words\n").is_err());
    }
}
