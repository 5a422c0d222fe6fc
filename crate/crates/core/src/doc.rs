//! Path-tracking accessors over a parsed TOML document, so that every
//! validation error names the section and key it came from.

use toml::Value;

use crate::error::{Error, Result};
use crate::rational::Rational;

/// A borrowed document value plus the dotted path that reached it.
pub struct Located<'a> {
    pub value: &'a Value,
    pub path: String,
}

impl<'a> Located<'a> {
    pub fn root(value: &'a Value) -> Located<'a> {
        Located {
            value,
            path: String::new(),
        }
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn err(&self, message: impl Into<String>) -> Error {
        Error::config(display_path(&self.path), message)
    }

    fn join(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{}", self.path, key)
        }
    }

    pub fn table(&self) -> Result<&'a toml::Table> {
        self.value
            .as_table()
            .ok_or_else(|| self.err("expected a table"))
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.table()?.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::config(
                    self.join(key),
                    format!("unknown key (expected one of: {})", allowed.join(", ")),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<Option<Located<'a>>> {
        Ok(self.table()?.get(key).map(|value| Located {
            value,
            path: self.join(key),
        }))
    }

    pub fn require(&self, key: &str) -> Result<Located<'a>> {
        self.get(key)?
            .ok_or_else(|| Error::config(self.join(key), "missing required key"))
    }

    pub fn items(&self) -> Result<Vec<Located<'a>>> {
        let arr = self
            .value
            .as_array()
            .ok_or_else(|| self.err("expected an array"))?;
        Ok(arr
            .iter()
            .enumerate()
            .map(|(i, value)| Located {
                value,
                path: format!("{}[{}]", self.path, i),
            })
            .collect())
    }

    pub fn as_str(&self) -> Result<&'a str> {
        self.value
            .as_str()
            .ok_or_else(|| self.err("expected a string"))
    }

    pub fn as_bool(&self) -> Result<bool> {
        self.value
            .as_bool()
            .ok_or_else(|| self.err("expected a boolean"))
    }

    pub fn as_positive_int(&self) -> Result<u64> {
        match self.value.as_integer() {
            Some(v) if v >= 1 => Ok(v as u64),
            Some(v) => Err(self.err(format!("expected a positive integer, got {v}"))),
            None => Err(self.err("expected a positive integer")),
        }
    }

    /// Integers, floats (read through their shortest decimal form) and
    /// strings such as `"1/3"` or `"0.1"`.
    pub fn as_rational(&self) -> Result<Rational> {
        match self.value {
            Value::Integer(v) => Ok(Rational::from_int(*v as i128)),
            Value::Float(f) => {
                if !f.is_finite() {
                    return Err(self.err("expected a finite number"));
                }
                format!("{f}")
                    .parse()
                    .map_err(|_| self.err(format!("cannot represent {f} exactly")))
            }
            Value::String(s) => s
                .parse()
                .map_err(|_| self.err(format!("invalid number `{s}`"))),
            _ => Err(self.err("expected a number")),
        }
    }
}

fn display_path(path: &str) -> String {
    if path.is_empty() {
        "<document>".to_string()
    } else {
        path.to_string()
    }
}

/// Identifiers: ASCII letter or underscore, then letters, digits, underscores.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn rational_value(r: Rational) -> Value {
    if r.is_integer() && i64::try_from(r.numer()).is_ok() {
        Value::Integer(r.numer() as i64)
    } else {
        Value::String(r.to_string())
    }
}
