//! Flat `key = value` text records.
//!
//! One entry per line, `#` starts a comment. Floats are written with 17
//! significant digits so that every `f64` survives a round trip; vectors are
//! comma separated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_vec(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| fmt_f64(x)).collect();
    parts.join(",")
}

/// Ordered builder for a record.
#[derive(Debug, Default, Clone)]
pub struct RecordWriter {
    out: String,
}

impl RecordWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn raw(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn float(&mut self, key: &str, value: f64) -> &mut Self {
        self.raw(key, fmt_f64(value))
    }

    pub fn opt_float(&mut self, key: &str, value: Option<f64>) -> &mut Self {
        match value {
            Some(v) => self.float(key, v),
            None => self.raw(key, "absent"),
        }
    }

    pub fn vec(&mut self, key: &str, values: &[f64]) -> &mut Self {
        self.raw(key, fmt_vec(values))
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}

/// Parsed record. Later duplicates of a key override earlier ones.
#[derive(Debug, Default, Clone)]
pub struct Record {
    entries: BTreeMap<String, String>,
}

impl Record {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require_str(&self, key: &str) -> Result<&str> {
        self.get_str(key)
            .ok_or_else(|| Error::Parse(format!("missing key `{key}`")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get_str(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Parse(format!("bad value for `{key}`: {v}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::Parse(format!("missing key `{key}`")))
    }

    pub fn require_vec(&self, key: &str) -> Result<Vec<f64>> {
        parse_vec(self.require_str(key)?)
            .map_err(|_| Error::Parse(format!("bad vector for `{key}`")))
    }
}

pub fn parse_vec(s: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_bitwise() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-300, std::f64::consts::PI, 1e308] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn parses_comments_and_vectors() {
        let text = "# header\na = 1\nv = 1.0,2.0, 3.5\n\n";
        let r = Record::parse(text).unwrap();
        assert_eq!(r.require::<i32>("a").unwrap(), 1);
        assert_eq!(r.require_vec("v").unwrap(), vec![1.0, 2.0, 3.5]);
        assert!(r.get::<f64>("missing").unwrap().is_none());
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(Record::parse("nonsense").is_err());
    }
}
