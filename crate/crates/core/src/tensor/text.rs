//! Plain-text tensor fixtures.
//!
//! Line one holds the space-separated shape. Each following line holds one
//! row of the last axis, values in row-major order. Values are written with
//! the shortest representation that parses back to the same bits.

use std::fmt::Write as _;
use std::io::Write;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parses the text format into a raw shape and value list.
///
/// Zero-sized dimensions are accepted here (an empty cost matrix is `0 0`);
/// [`Tensor::from_text`] rejects them.
pub fn parse_text<T: Scalar>(src: &str) -> Result<(Vec<usize>, Vec<T>)> {
    let mut lines = src.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing shape line".into()))?;
    let shape = header
        .split_whitespace()
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad dimension `{s}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if shape.is_empty() {
        return Err(Error::Parse("empty shape line".into()));
    }
    let mut values = Vec::with_capacity(shape.iter().product());
    for line in lines {
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<T>()
                .map_err(|_| Error::Parse(format!("bad value `{tok}`")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("value `{tok}`")));
            }
            values.push(v);
        }
    }
    let expected: usize = shape.iter().product();
    if values.len() != expected {
        return Err(Error::Parse(format!(
            "shape {shape:?} needs {expected} values, found {}",
            values.len()
        )));
    }
    Ok((shape, values))
}

/// Writes `shape`/`values` in the text format.
pub fn write_text<T: Scalar>(shape: &[usize], values: &[T], mut out: impl Write) -> std::io::Result<()> {
    let header: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    writeln!(out, "{}", header.join(" "))?;
    let row = shape.last().copied().unwrap_or(0).max(1);
    let mut line = String::new();
    for chunk in values.chunks(row) {
        line.clear();
        for (i, v) in chunk.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v}").expect("write to String");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn from_text(src: &str) -> Result<Self> {
        let (shape, values) = parse_text(src)?;
        Tensor::new(shape, values)
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        write_text(self.shape(), self.data(), &mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&src)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
