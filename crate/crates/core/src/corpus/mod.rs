//! Corpus data model: phonetic segmentations, frame clocks, frame mappings,
//! feature sequences and articulator contour tracks, with their file formats.

mod clock;
mod contours;
mod features;
mod mapping;
mod segmentation;
mod text;
mod textgrid;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clock::{frame_mid_time, FrameClock};
pub use contours::{
    parse_contours, parse_contours_with, parse_norm_stats, write_contours, write_norm_stats,
    AxisStats, ContourGeometry, ContourTrack, NormStats, Units,
};
pub use features::{parse_features, write_features, FeatureSequence};
pub use mapping::{
    parse_frame_mapping, write_frame_mapping, FrameMapping, MappingEntry, Method, Provenance,
};
pub use segmentation::{parse_segmentation, write_segmentation, SegmentationFormat};
pub use text::{format_seconds, normalize_label, normalize_text};
pub(crate) use mapping::csv_err;

/// Video frame rate of the rt-MRI acquisitions (50 ms per frame).
pub const DEFAULT_MRI_FRAME_RATE_HZ: f64 = 20.0;
/// Frame rate of the precomputed speech embeddings.
pub const DEFAULT_CLEAN_FRAME_RATE_HZ: f64 = 50.0;
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 16_000.0;
/// In-plane MRI pixel size.
pub const DEFAULT_PIXEL_SIZE_MM: f64 = 1.62;
pub const DEFAULT_POINTS_PER_ARTICULATOR: usize = 50;
/// Tolerance applied to every time comparison, absorbing aligner rounding.
pub const TIME_TOLERANCE_S: f64 = 0.001;
pub const DEFAULT_SILENCE_LABELS: [&str; 4] = ["sil", "sp", "#", ""];

/// Canonical articulator order used by contour files.
pub const ARTICULATORS: [&str; 8] = [
    "arytenoid_cartilage",
    "epiglottis",
    "lower_lip",
    "pharyngeal_wall",
    "soft_palate_midline",
    "tongue",
    "upper_lip",
    "vocal_folds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneInterval {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
}

impl PhoneInterval {
    pub fn new(label: impl Into<String>, start_s: f64, end_s: f64) -> Self {
        PhoneInterval {
            label: label.into(),
            start_s,
            end_s,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Half-open containment `[start, end)`, used to attribute frame mid-times.
    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordInterval {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub phones: Vec<PhoneInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceInterval {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
    pub words: Vec<WordInterval>,
}

impl SentenceInterval {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    /// Text used for sentence matching: the word texts joined by single
    /// spaces, or the sentence label when the sentence has no words.
    pub fn match_text(&self) -> String {
        if self.words.is_empty() {
            self.text.clone()
        } else {
            self.words
                .iter()
                .map(|w| w.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        }
    }

    pub fn phones(&self) -> impl Iterator<Item = &PhoneInterval> {
        self.words.iter().flat_map(|w| w.phones.iter())
    }
}

/// A corpus's phonetic segmentation.
///
/// Sentences hold words, words hold phones. Phone intervals that lie outside
/// every word (pauses between words or sentences) are kept in `pauses`; they
/// must carry a silence label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceSet {
    pub sentences: Vec<SentenceInterval>,
    pub pauses: Vec<PhoneInterval>,
    pub silence_labels: BTreeSet<String>,
    pub total_duration_s: f64,
}

pub fn default_silence_labels() -> BTreeSet<String> {
    DEFAULT_SILENCE_LABELS.iter().map(|s| s.to_string()).collect()
}

impl UtteranceSet {
    /// Builds and validates an utterance set. The total duration is the latest
    /// end time over all intervals.
    pub fn new(
        sentences: Vec<SentenceInterval>,
        pauses: Vec<PhoneInterval>,
        silence_labels: BTreeSet<String>,
    ) -> Result<Self> {
        let total_duration_s = sentences
            .iter()
            .map(|s| s.end_s)
            .chain(pauses.iter().map(|p| p.end_s))
            .fold(0.0, f64::max);
        let set = UtteranceSet {
            sentences,
            pauses,
            silence_labels,
            total_duration_s,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn is_silence(&self, label: &str) -> bool {
        self.silence_labels.contains(label)
    }

    /// Every phone interval (inside words and pauses) sorted by start time.
    pub fn all_phones(&self) -> Vec<(Option<usize>, &PhoneInterval)> {
        let mut phones: Vec<(Option<usize>, &PhoneInterval)> = self
            .sentences
            .iter()
            .enumerate()
            .flat_map(|(id, s)| s.phones().map(move |p| (Some(id), p)))
            .collect();
        for p in &self.pauses {
            let owner = self
                .sentences
                .iter()
                .position(|s| s.start_s <= p.start_s && p.end_s <= s.end_s);
            phones.push((owner, p));
        }
        phones.sort_by(|a, b| a.1.start_s.total_cmp(&b.1.start_s));
        phones
    }

    pub fn n_words(&self) -> usize {
        self.sentences.iter().map(|s| s.words.len()).sum()
    }

    pub fn n_phones(&self) -> usize {
        self.sentences
            .iter()
            .flat_map(|s| s.words.iter())
            .map(|w| w.phones.len())
            .sum()
    }

    /// Checks ordering, containment and label invariants. Used by parsers
    /// and constructors; intervals are never repaired.
    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let tol = TIME_TOLERANCE_S;
        let bad = |msg: String| Error::NonMonotoneTimes { line: 0, msg };
        let mut prev_end = f64::NEG_INFINITY;
        for (sid, s) in self.sentences.iter().enumerate() {
            check_interval(s.start_s, s.end_s).map_err(|m| bad(format!("sentence {sid}: {m}")))?;
            if s.start_s < prev_end - tol {
                return Err(Error::OverlappingIntervals {
                    line: 0,
                    tier: "sentence".into(),
                });
            }
            prev_end = s.end_s;
            let mut prev_word = f64::NEG_INFINITY;
            for w in &s.words {
                check_interval(w.start_s, w.end_s)
                    .map_err(|m| bad(format!("word {:?}: {m}", w.text)))?;
                if w.text.is_empty() {
                    return Err(Error::MalformedLine {
                        line: 0,
                        msg: "empty word text".into(),
                    });
                }
                if w.start_s < s.start_s - tol || w.end_s > s.end_s + tol {
                    return Err(bad(format!("word {:?} outside sentence {sid}", w.text)));
                }
                if w.start_s < prev_word - tol {
                    return Err(Error::OverlappingIntervals {
                        line: 0,
                        tier: "word".into(),
                    });
                }
                prev_word = w.end_s;
                let mut prev_phone = f64::NEG_INFINITY;
                for p in &w.phones {
                    check_interval(p.start_s, p.end_s)
                        .map_err(|m| bad(format!("phone {:?}: {m}", p.label)))?;
                    if p.start_s < w.start_s - tol || p.end_s > w.end_s + tol {
                        return Err(bad(format!("phone {:?} outside word {:?}", p.label, w.text)));
                    }
                    if p.start_s < prev_phone - tol {
                        return Err(Error::OverlappingIntervals {
                            line: 0,
                            tier: "phone".into(),
                        });
                    }
                    prev_phone = p.end_s;
                }
            }
        }
        for p in &self.pauses {
            check_interval(p.start_s, p.end_s)
                .map_err(|m| bad(format!("pause {:?}: {m}", p.label)))?;
            if !self.is_silence(&p.label) {
                return Err(Error::MalformedLine {
                    line: 0,
                    msg: format!("phone {:?} is not contained in any word", p.label),
                });
            }
        }
        Ok(())
    }
}

fn check_interval(start: f64, end: f64) -> std::result::Result<(), String> {
    if !start.is_finite() || !end.is_finite() {
        return Err("non-finite time".into());
    }
    if start < 0.0 {
        return Err(format!("negative start time {start}"));
    }
    if start >= end {
        return Err(format!("start {start} is not before end {end}"));
    }
    Ok(())
}
