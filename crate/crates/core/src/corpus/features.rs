use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-ordered per-frame feature vectors, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub frame_rate_hz: f64,
    pub dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(frame_rate_hz: f64, dim: usize, data: Vec<f64>) -> Result<Self> {
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!("frame rate {frame_rate_hz}")));
        }
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                context: "feature dimension".into(),
                expected: 1,
                found: 0,
            });
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "feature matrix".into(),
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { line: k / dim + 2 });
        }
        Ok(FeatureSequence {
            frame_rate_hz,
            dim,
            data,
        })
    }

    pub fn from_rows(frame_rate_hz: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "feature row".into(),
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(frame_rate_hz, dim, rows.concat())
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Parses `frames=<n> dim=<d> rate_hz=<r>` followed by `n` rows of `d`
/// space-separated values.
pub fn parse_features<R: BufRead>(source: R) -> Result<FeatureSequence> {
    let mut lines = source.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::MalformedHeader("empty feature file".into()))?;
    let (mut n, mut dim, mut rate) = (None, None, None);
    for kv in header.split_whitespace() {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::MalformedHeader(format!("bad field {kv:?}")))?;
        let bad = || Error::MalformedHeader(format!("bad value in {kv:?}"));
        match key {
            "frames" => n = Some(value.parse::<usize>().map_err(|_| bad())?),
            "dim" => dim = Some(value.parse::<usize>().map_err(|_| bad())?),
            "rate_hz" => rate = Some(value.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(Error::MalformedHeader(format!("unknown key {key:?}"))),
        }
    }
    let (Some(n), Some(dim), Some(rate)) = (n, dim, rate) else {
        return Err(Error::MalformedHeader(format!(
            "expected frames=, dim= and rate_hz= in {header:?}"
        )));
    };
    if n == 0 || dim == 0 || !(rate.is_finite() && rate > 0.0) {
        return Err(Error::MalformedHeader(format!("degenerate header {header:?}")));
    }

    let mut data = Vec::with_capacity(n * dim);
    let mut rows = 0;
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(Error::DimensionMismatch {
                context: "feature frame count".into(),
                expected: n,
                found: n + 1,
            });
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::MalformedLine {
                line: line_no,
                msg: format!("invalid value {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { line: line_no });
            }
            data.push(v);
        }
        if data.len() - before != dim {
            return Err(Error::DimensionMismatch {
                context: format!("feature row at line {line_no}"),
                expected: dim,
                found: data.len() - before,
            });
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::DimensionMismatch {
            context: "feature frame count".into(),
            expected: n,
            found: rows,
        });
    }
    FeatureSequence::new(rate, dim, data)
}

pub fn write_features<W: Write>(seq: &FeatureSequence, mut out: W) -> Result<()> {
    writeln!(
        out,
        "frames={} dim={} rate_hz={}",
        seq.n_frames(),
        seq.dim,
        seq.frame_rate_hz
    )?;
    for frame in seq.frames() {
        let row: Vec<String> = frame.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}
