//! Typed access to a command's named parameters.

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Parameters of one command. Every value read is echoed into `inputs`,
/// together with the defaults that were applied.
pub struct Params {
    raw: Map<String, Value>,
    inputs: Map<String, Value>,
}

impl Params {
    /// Rejects any key outside `allowed`.
    pub fn new(raw: Map<String, Value>, command: &str, allowed: &[&str]) -> Result<Self> {
        if let Some(key) = raw.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::invalid(format!(
                "unknown parameter '{key}' for {command} (expected one of: {})",
                allowed.join(", ")
            )));
        }
        Ok(Params {
            raw,
            inputs: Map::new(),
        })
    }

    pub fn into_inputs(self) -> Map<String, Value> {
        self.inputs
    }

    pub fn has(&self, key: &str) -> bool {
        self.raw.contains_key(key)
    }

    fn record(&mut self, key: &str, value: Value) {
        self.inputs.insert(key.to_string(), value);
    }

    fn missing(key: &str) -> Error {
        Error::invalid(format!("missing required parameter '{key}'"))
    }

    /// A scalar, or a one-element list.
    fn scalar(&self, key: &str) -> Option<&Value> {
        match self.raw.get(key)? {
            Value::Array(items) if items.len() == 1 => items.first(),
            v => Some(v),
        }
    }

    fn as_f64(key: &str, v: &Value) -> Result<f64> {
        v.as_f64()
            .ok_or_else(|| Error::invalid(format!("parameter '{key}' must be a number, got {v}")))
    }

    fn as_u64(key: &str, v: &Value) -> Result<u64> {
        if let Some(n) = v.as_u64() {
            return Ok(n);
        }
        match v.as_f64() {
            Some(x) if x >= 0.0 && x.fract() == 0.0 && x < 1.8e19 => Ok(x as u64),
            _ => Err(Error::invalid(format!(
                "parameter '{key}' must be a non-negative integer, got {v}"
            ))),
        }
    }

    pub fn f64(&mut self, key: &str) -> Result<f64> {
        let v = self.scalar(key).ok_or_else(|| Self::missing(key))?;
        let x = Self::as_f64(key, v)?;
        self.record(key, v.clone());
        Ok(x)
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        if self.has(key) {
            return self.f64(key);
        }
        self.record(key, Value::from(default));
        Ok(default)
    }

    pub fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        if self.has(key) {
            self.f64(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn u64(&mut self, key: &str) -> Result<u64> {
        let v = self.scalar(key).ok_or_else(|| Self::missing(key))?;
        let n = Self::as_u64(key, v)?;
        self.record(key, Value::from(n));
        Ok(n)
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        if self.has(key) {
            return self.u64(key);
        }
        self.record(key, Value::from(default));
        Ok(default)
    }

    pub fn opt_u64(&mut self, key: &str) -> Result<Option<u64>> {
        if self.has(key) {
            self.u64(key).map(Some)
        } else {
            Ok(None)
        }
    }

    /// A list of numbers; a scalar counts as a one-element list.
    pub fn f64_list(&mut self, key: &str) -> Result<Vec<f64>> {
        let v = self.raw.get(key).ok_or_else(|| Self::missing(key))?.clone();
        let out = match &v {
            Value::Array(items) => items
                .iter()
                .map(|x| Self::as_f64(key, x))
                .collect::<Result<Vec<_>>>()?,
            x => vec![Self::as_f64(key, x)?],
        };
        self.record(key, v);
        Ok(out)
    }

    pub fn str_or(&mut self, key: &str, default: &str) -> Result<String> {
        let s = match self.scalar(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(v) => {
                return Err(Error::invalid(format!(
                    "parameter '{key}' must be a string, got {v}"
                )))
            }
        };
        self.record(key, Value::from(s.clone()));
        Ok(s)
    }

    /// Raw value, for nested objects such as sweep axes.
    pub fn value(&mut self, key: &str) -> Option<Value> {
        let v = self.raw.get(key)?.clone();
        self.record(key, v.clone());
        Some(v)
    }
}
