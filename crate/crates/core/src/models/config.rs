//! Flat `key=value` model configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Every key must be consumed by the family that is being parsed; leftovers
//! are rejected.
//!
//! Common keys: `family`, `d`, `N`, `q.dist` (`zero` | `gaussian` | `const`),
//! `q.mean`, `q.scale`, `s.max`.
//!
//! * `general`: `c.mean`, `c.diag`, `c.scale` (scalar or one per branch),
//!   `c.cond_cap`.
//! * `similarity`: `t.dist` (`const` | `lognormal` | `twopoint`), `t.c`,
//!   `t.mu`, `t.sigma`, `t.a`, `t.b`, `t.p`; `rotation` (`identity` | `haar`
//!   | `fixed`), `rotation.turns` (d = 2), `rotation.matrix` (row major).
//! * `maxwell`: `u.dist` (`lognormal` | `twopoint`), `u.sigma`, `u.a`, `u.b`.
//! * `diagonal`: `diag` (d entries).

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub(crate) struct Keys {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

pub(crate) fn parse_lines(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {:?}", lineno + 1, raw))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key {k:?}")));
        }
    }
    Ok(map)
}

impl Keys {
    pub(crate) fn new(map: BTreeMap<String, String>) -> Self {
        Self { map, used: BTreeSet::new() }
    }

    pub(crate) fn canonical(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub(crate) fn str(&mut self, key: &str) -> Option<String> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    pub(crate) fn f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => parse_f64(key, &v).map(Some),
        }
    }

    pub(crate) fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(key)?.unwrap_or(default))
    }

    pub(crate) fn usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: expected a nonnegative integer, got {v:?}"))),
        }
    }

    pub(crate) fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.str(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|p| parse_f64(key, p.trim()))
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    pub(crate) fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self.map.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unrecognised key(s): {unknown:?}")))
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x = v
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{key}: value must be finite")));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_whitespace() {
        let m = parse_lines("# header\n family = maxwell # trailing\n\nd=3\n").unwrap();
        assert_eq!(m["family"], "maxwell");
        assert_eq!(m["d"], "3");
    }

    #[test]
    fn duplicate_and_malformed_lines_fail() {
        assert!(parse_lines("d=2\nd=3\n").is_err());
        assert!(parse_lines("family maxwell\n").is_err());
    }

    #[test]
    fn leftover_keys_are_rejected() {
        let mut k = Keys::new(parse_lines("a=1\nb=2\n").unwrap());
        assert_eq!(k.f64("a").unwrap(), Some(1.0));
        let err = k.finish().unwrap_err();
        assert!(err.to_string().contains("\"b\""));
    }
}
