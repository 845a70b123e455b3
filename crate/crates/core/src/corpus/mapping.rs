use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DEFAULT_CLEAN_FRAME_RATE_HZ, DEFAULT_MRI_FRAME_RATE_HZ};
use crate::error::{Error, Result};

const HEADER: [&str; 6] = [
    "source_idx",
    "target_idx",
    "method",
    "phone",
    "sentence_id",
    "clamped",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PHONETIC")]
    Phonetic,
    #[serde(rename = "DTW")]
    Dtw,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Phonetic => "PHONETIC",
            Method::Dtw => "DTW",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "PHONETIC" => Ok(Method::Phonetic),
            "DTW" => Ok(Method::Dtw),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Label of the source phone holding the frame's mid-time, if any.
    pub phone: String,
    pub sentence_id: Option<usize>,
    pub method: Method,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub source_idx: usize,
    /// `None` is the unmapped sentinel.
    pub target_idx: Option<usize>,
    pub provenance: Provenance,
}

/// Source frame index to target frame index, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMapping {
    pub source_frame_rate_hz: f64,
    pub target_frame_rate_hz: f64,
    pub entries: Vec<MappingEntry>,
}

impl FrameMapping {
    /// Target of `source_idx`, `None` when unmapped or absent.
    pub fn target_of(&self, source_idx: usize) -> Option<usize> {
        self.entry(source_idx).and_then(|e| e.target_idx)
    }

    pub fn entry(&self, source_idx: usize) -> Option<&MappingEntry> {
        self.entries
            .binary_search_by_key(&source_idx, |e| e.source_idx)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn mapped(&self) -> impl Iterator<Item = &MappingEntry> {
        self.entries.iter().filter(|e| e.target_idx.is_some())
    }

    pub fn n_mapped(&self) -> usize {
        self.mapped().count()
    }

    pub fn n_clamped(&self) -> usize {
        self.entries.iter().filter(|e| e.provenance.clamped).count()
    }

    /// Checks that source indices strictly increase.
    pub fn validate(&self) -> Result<()> {
        for (k, pair) in self.entries.windows(2).enumerate() {
            if pair[1].source_idx <= pair[0].source_idx {
                return Err(Error::NonMonotoneTimes {
                    line: k + 3,
                    msg: format!(
                        "source_idx {} does not follow {}",
                        pair[1].source_idx, pair[0].source_idx
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Writes the mapping CSV. A `#` preamble line carries the two frame rates.
pub fn write_frame_mapping<W: Write>(mapping: &FrameMapping, mut out: W) -> Result<()> {
    writeln!(
        out,
        "# source_rate_hz={} target_rate_hz={}",
        mapping.source_frame_rate_hz, mapping.target_frame_rate_hz
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for e in &mapping.entries {
        let target = e.target_idx.map_or("-1".to_string(), |t| t.to_string());
        let sentence = e.provenance.sentence_id.map_or(String::new(), |s| s.to_string());
        w.write_record([
            e.source_idx.to_string().as_str(),
            target.as_str(),
            e.provenance.method.as_str(),
            e.provenance.phone.as_str(),
            sentence.as_str(),
            if e.provenance.clamped { "1" } else { "0" },
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the mapping CSV. Without a preamble the rates default to 20 Hz
/// source and 50 Hz target.
pub fn parse_frame_mapping<R: Read>(mut source: R) -> Result<FrameMapping> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut source_rate = DEFAULT_MRI_FRAME_RATE_HZ;
    let mut target_rate = DEFAULT_CLEAN_FRAME_RATE_HZ;
    let mut body = text.as_str();
    let mut line_offset = 0;
    if let Some(rest) = body.strip_prefix('#') {
        let (preamble, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        for kv in preamble.split_whitespace() {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::MalformedHeader(format!("bad preamble field {kv:?}")))?;
            let value: f64 = value
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite() && *v > 0.0)
                .ok_or_else(|| Error::MalformedHeader(format!("bad rate {kv:?}")))?;
            match key {
                "source_rate_hz" => source_rate = value,
                "target_rate_hz" => target_rate = value,
                _ => return Err(Error::MalformedHeader(format!("unknown preamble key {key:?}"))),
            }
        }
        body = tail;
        line_offset = 1;
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(body.as_bytes());
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(Error::MalformedHeader(format!(
            "expected {:?}, found {:?}",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut entries = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2 + line_offset;
        let record = record.map_err(|e| Error::MalformedLine {
            line,
            msg: e.to_string(),
        })?;
        let bad = |msg: String| Error::MalformedLine { line, msg };
        let source_idx: usize = record[0]
            .parse()
            .map_err(|_| bad(format!("invalid source_idx {:?}", &record[0])))?;
        let target: i64 = record[1]
            .parse()
            .map_err(|_| bad(format!("invalid target_idx {:?}", &record[1])))?;
        let target_idx = match target {
            -1 => None,
            t if t >= 0 => Some(t as usize),
            t => return Err(bad(format!("negative target_idx {t}"))),
        };
        let method: Method = record[2].parse().map_err(bad)?;
        let sentence_id = match &record[4] {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| bad(format!("invalid sentence_id {s:?}")))?,
            ),
        };
        let clamped = match &record[5] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(bad(format!("invalid clamped flag {other:?}"))),
        };
        entries.push(MappingEntry {
            source_idx,
            target_idx,
            provenance: Provenance {
                phone: record[3].to_string(),
                sentence_id,
                method,
                clamped,
            },
        });
    }
    let mapping = FrameMapping {
        source_frame_rate_hz: source_rate,
        target_frame_rate_hz: target_rate,
        entries,
    };
    mapping.validate().map_err(|e| match e {
        Error::NonMonotoneTimes { line, msg } => Error::NonMonotoneTimes {
            line: line + line_offset,
            msg,
        },
        other => other,
    })?;
    Ok(mapping)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::MalformedLine {
            line: 0,
            msg: format!("{other:?}"),
        },
    }
}
