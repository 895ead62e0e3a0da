//! Text feature files.
//!
//! ```text
//! gendiv-features v1 <m> <q>
//! <q space-separated reals>      (m lines)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::metrics::FeatureSet;
use crate::{Error, Result};

pub const MAGIC: &str = "gendiv-features";
pub const VERSION: &str = "v1";

/// Serializes rows with shortest round-trip formatting.
pub fn format_features(rows: &[Vec<f64>]) -> Result<String> {
    let q = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || q == 0 {
        return Err(Error::Invalid("feature set needs at least one non-empty row".into()));
    }
    let mut out = format!("{MAGIC} {VERSION} {} {q}\n", rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != q {
            return Err(Error::Invalid(format!("feature row {i} has {} values, expected {q}", row.len())));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Invalid(format!("feature row {i} holds non-finite {v}")));
            }
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{v:?}").expect("writing to a string");
        }
        out.push('\n');
    }
    Ok(out)
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, at: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::FeatureFormat {
            offset: at,
            msg: msg.into(),
        })
    }

    fn skip_blanks(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start_matches([' ', '\t']).len();
    }

    /// Next whitespace-delimited token on the current line, with its offset.
    fn token(&mut self) -> Option<(usize, &'a str)> {
        self.skip_blanks();
        let start = self.pos;
        let rest = &self.text[start..];
        let len = rest.find([' ', '\t', '\n', '\r']).unwrap_or(rest.len());
        if len == 0 {
            return None;
        }
        self.pos += len;
        Some((start, &rest[..len]))
    }

    fn end_line(&mut self) -> Result<()> {
        self.skip_blanks();
        let rest = &self.text[self.pos..];
        if rest.starts_with("\r\n") {
            self.pos += 2;
        } else if rest.starts_with('\n') {
            self.pos += 1;
        } else if !rest.is_empty() {
            return self.fail(self.pos, "unexpected trailing value");
        }
        Ok(())
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        match self.token() {
            Some((at, tok)) => match tok.parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => self.fail(at, format!("{what} must be a positive integer, got {tok:?}")),
            },
            None => self.fail(self.pos, format!("missing {what}")),
        }
    }
}

/// Parses a feature file; errors carry the byte offset of the problem.
pub fn parse_features(text: &str) -> Result<FeatureSet> {
    let mut c = Cursor { text, pos: 0 };
    match c.token() {
        Some((_, MAGIC)) => {}
        Some((at, tok)) => return c.fail(at, format!("expected {MAGIC:?}, got {tok:?}")),
        None => return c.fail(0, "empty file"),
    }
    match c.token() {
        Some((_, VERSION)) => {}
        Some((at, tok)) => return c.fail(at, format!("unsupported version {tok:?}")),
        None => return c.fail(c.pos, "missing version"),
    }
    let m = c.count("row count")?;
    let q = c.count("column count")?;
    c.end_line()?;
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = Vec::with_capacity(q);
        for j in 0..q {
            let Some((at, tok)) = c.token() else {
                return c.fail(c.pos, format!("row {i} ends after {j} of {q} values"));
            };
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => return c.fail(at, format!("invalid real {tok:?}")),
            }
        }
        c.end_line()?;
        rows.push(row);
    }
    if c.pos < text.len() && !text[c.pos..].trim().is_empty() {
        return c.fail(c.pos, format!("more than the declared {m} rows"));
    }
    FeatureSet::from_rows(&rows)
}

pub fn read_features(path: &Path) -> Result<FeatureSet> {
    let text = std::fs::read_to_string(path)?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(parse_features(&text)?.with_label(label))
}

pub fn write_features(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, format_features(rows)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_of(text: &str) -> usize {
        match parse_features(text) {
            Err(Error::FeatureFormat { offset, .. }) => offset,
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![vec![0.1, -2.5e-300, 1.0 / 3.0], vec![1e20, 0.0, -7.25]];
        let text = format_features(&rows).unwrap();
        assert!(text.starts_with("gendiv-features v1 2 3\n"));
        let fs = parse_features(&text).unwrap();
        assert_eq!(fs.rows().map(<[f64]>::to_vec).collect::<Vec<_>>(), rows);
    }

    #[test]
    fn errors_point_at_the_offending_byte() {
        assert_eq!(offset_of(""), 0);
        assert_eq!(offset_of("features v1 1 1\n0\n"), 0);
        assert_eq!(offset_of("gendiv-features v2 1 1\n0\n"), 16);
        assert_eq!(offset_of("gendiv-features v1 0 1\n"), 19);
        let bad = "gendiv-features v1 2 2\n1 2\n3 x\n";
        assert_eq!(offset_of(bad), bad.find('x').unwrap());
        let short = "gendiv-features v1 2 2\n1 2\n3\n";
        assert_eq!(offset_of(short), short.len() - 1);
        let long = "gendiv-features v1 1 1\n1 2\n";
        assert_eq!(offset_of(long), long.find('2').unwrap());
        let extra = "gendiv-features v1 1 1\n1\n2\n";
        assert_eq!(offset_of(extra), extra.len() - 2);
    }

    #[test]
    fn crlf_and_missing_final_newline_accepted() {
        assert_eq!(parse_features("gendiv-features v1 2 1\r\n1\r\n2").unwrap().len(), 2);
    }
}
