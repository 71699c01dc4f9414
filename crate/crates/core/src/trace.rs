//! Sampled one-dimensional signals and their CSV form.
//!
//! ```text
//! # kind=delay_ns
//! # T2_ns=379
//! delay_ns,amplitude
//! 50,0.768...
//! ```
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so a written trace re-reads bit-for-bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    #[serde(rename = "field_T")]
    FieldT,
    #[serde(rename = "delay_ns")]
    DelayNs,
    #[serde(rename = "recovery_ns")]
    RecoveryNs,
    #[serde(rename = "time_ns")]
    TimeNs,
}

impl AxisKind {
    pub fn label(self) -> &'static str {
        match self {
            AxisKind::FieldT => "field_T",
            AxisKind::DelayNs => "delay_ns",
            AxisKind::RecoveryNs => "recovery_ns",
            AxisKind::TimeNs => "time_ns",
        }
    }
}

impl FromStr for AxisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "field_T" => Ok(AxisKind::FieldT),
            "delay_ns" => Ok(AxisKind::DelayNs),
            "recovery_ns" => Ok(AxisKind::RecoveryNs),
            "time_ns" => Ok(AxisKind::TimeNs),
            other => Err(Error::Parse(format!("unknown axis kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub kind: AxisKind,
    pub axis: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub meta: BTreeMap<String, String>,
}

impl Trace {
    pub fn new(kind: AxisKind, axis: Vec<f64>, amplitude: Vec<f64>) -> Result<Self> {
        if axis.len() != amplitude.len() {
            return Err(invalid(format!(
                "axis has {} samples but amplitude has {}",
                axis.len(),
                amplitude.len()
            )));
        }
        if axis.iter().chain(&amplitude).any(|v| !v.is_finite()) {
            return Err(invalid("trace contains non-finite values"));
        }
        Ok(Trace {
            kind,
            axis,
            amplitude,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.axis
            .iter()
            .copied()
            .zip(self.amplitude.iter().copied())
    }

    pub fn scaled(&self, c: f64) -> Trace {
        Trace {
            amplitude: self.amplitude.iter().map(|a| a * c).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# kind={}", self.kind.label());
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{},amplitude", self.kind.label());
        for (x, y) in self.points() {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Trace> {
        let mut kind = None;
        let mut meta = BTreeMap::new();
        let mut axis = Vec::new();
        let mut amplitude = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    if k.trim() == "kind" {
                        kind = Some(v.parse::<AxisKind>()?);
                    } else {
                        meta.insert(k.trim().to_string(), v.trim().to_string());
                    }
                }
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                return Err(Error::Parse(format!(
                    "line {}: expected two columns",
                    lineno + 1
                )));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    axis.push(x);
                    amplitude.push(y);
                }
                // column header
                _ if axis.is_empty() => {
                    if kind.is_none() {
                        kind = a.parse::<AxisKind>().ok();
                    }
                }
                _ => {
                    return Err(Error::Parse(format!(
                        "line {}: cannot parse '{line}'",
                        lineno + 1
                    )))
                }
            }
        }
        let kind = kind.ok_or_else(|| Error::Parse("missing '# kind=' header".into()))?;
        let mut t = Trace::new(kind, axis, amplitude)?;
        t.meta = meta;
        Ok(t)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Trace> {
        Trace::from_csv(&fs::read_to_string(path)?)
    }
}

/// `count` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (count - 1) as f64;
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        stop
                    } else {
                        start + step * i as f64
                    }
                })
                .collect()
        }
    }
}
