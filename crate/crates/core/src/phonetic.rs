//! Hierarchical sentence, word and phone alignment of two segmented corpora,
//! followed by phone-level time-stretching of source frames.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    format_seconds, frame_mid_time, FrameClock, FrameMapping, MappingEntry, Method,
    PhoneInterval, Provenance, SentenceInterval, UtteranceSet, WordInterval,
    DEFAULT_CLEAN_FRAME_RATE_HZ, DEFAULT_MRI_FRAME_RATE_HZ, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::similarity;

/// Minimum sentence similarity for two sentences to be aligned.
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.75;
/// Floor on source phone durations, avoiding division by zero.
pub const DEFAULT_EPSILON_S: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub mri: usize,
    pub clean: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePairing {
    /// Pairs in increasing MRI sentence order.
    pub pairs: Vec<SentencePair>,
    pub unmatched_mri: Vec<usize>,
    pub threshold: f64,
}

impl SentencePairing {
    pub fn clean_of(&self, mri: usize) -> Option<&SentencePair> {
        self.pairs
            .binary_search_by_key(&mri, |p| p.mri)
            .ok()
            .map(|i| &self.pairs[i])
    }
}

/// Character counts, giving a cheap upper bound on the matched count.
struct Profile {
    chars: Vec<char>,
    counts: HashMap<char, usize>,
}

impl Profile {
    fn new(text: &str) -> Self {
        let chars: Vec<char> = text.chars().collect();
        let mut counts = HashMap::new();
        for &c in &chars {
            *counts.entry(c).or_insert(0) += 1;
        }
        Profile { chars, counts }
    }

    /// Similarity if every shared character could be matched.
    fn bound(&self, other: &Profile) -> f64 {
        let total = self.chars.len() + other.chars.len();
        if total == 0 {
            return 1.0;
        }
        let shared: usize = self
            .counts
            .iter()
            .map(|(c, n)| (*n).min(other.counts.get(c).copied().unwrap_or(0)))
            .sum();
        2.0 * shared as f64 / total as f64
    }

    fn similarity(&self, other: &Profile) -> f64 {
        similarity::similarity_of(&self.chars, &other.chars)
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "similarity threshold {threshold} outside (0, 1]"
        )))
    }
}

/// Pairs each MRI sentence with its most similar clean sentence. Several
/// MRI sentences may pick the same clean sentence. Ties go to the smaller
/// clean id; best similarities under `threshold` leave the sentence unmatched.
pub fn pair_sentences(
    mri: &UtteranceSet,
    clean: &UtteranceSet,
    threshold: f64,
) -> Result<SentencePairing> {
    check_threshold(threshold)?;
    let clean_profiles: Vec<Profile> = clean
        .sentences
        .iter()
        .map(|s| Profile::new(&s.match_text()))
        .collect();
    let mut pairs = Vec::new();
    let mut unmatched_mri = Vec::new();
    for (mid, s) in mri.sentences.iter().enumerate() {
        let profile = Profile::new(&s.match_text());
        let mut best: Option<(usize, f64)> = None;
        for (cid, cp) in clean_profiles.iter().enumerate() {
            // The bound uses the same arithmetic as the similarity, so a
            // candidate that cannot beat the current best is skipped exactly.
            let bound = profile.bound(cp);
            if bound < threshold || best.is_some_and(|(_, b)| bound <= b) {
                continue;
            }
            let sim = profile.similarity(cp);
            if sim >= threshold && best.map_or(true, |(_, b)| sim > b) {
                best = Some((cid, sim));
            }
        }
        match best {
            Some((clean, similarity)) => pairs.push(SentencePair {
                mri: mid,
                clean,
                similarity,
            }),
            None => unmatched_mri.push(mid),
        }
    }
    Ok(SentencePairing {
        pairs,
        unmatched_mri,
        threshold,
    })
}

/// Strict one-to-one pairing: candidate pairs are taken greedily in
/// decreasing similarity, then increasing MRI id, then increasing clean id.
pub fn pair_sentences_one_to_one(
    mri: &UtteranceSet,
    clean: &UtteranceSet,
    threshold: f64,
) -> Result<SentencePairing> {
    check_threshold(threshold)?;
    let clean_profiles: Vec<Profile> = clean
        .sentences
        .iter()
        .map(|s| Profile::new(&s.match_text()))
        .collect();
    let mut candidates = Vec::new();
    for (mid, s) in mri.sentences.iter().enumerate() {
        let profile = Profile::new(&s.match_text());
        for (cid, cp) in clean_profiles.iter().enumerate() {
            if profile.bound(cp) < threshold {
                continue;
            }
            let sim = profile.similarity(cp);
            if sim >= threshold {
                candidates.push(SentencePair {
                    mri: mid,
                    clean: cid,
                    similarity: sim,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.mri.cmp(&b.mri))
            .then(a.clean.cmp(&b.clean))
    });
    let mut mri_used = vec![false; mri.sentences.len()];
    let mut clean_used = vec![false; clean.sentences.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !mri_used[c.mri] && !clean_used[c.clean] {
            mri_used[c.mri] = true;
            clean_used[c.clean] = true;
            pairs.push(c);
        }
    }
    pairs.sort_by_key(|p| p.mri);
    let unmatched_mri = (0..mri.sentences.len()).filter(|&i| !mri_used[i]).collect();
    Ok(SentencePairing {
        pairs,
        unmatched_mri,
        threshold,
    })
}

/// Start of `word` relative to its sentence, clamped to `[0, 1]`.
pub fn relative_position(word: &WordInterval, sentence: &SentenceInterval) -> Result<f64> {
    let duration = sentence.duration();
    if !(duration > 0.0) {
        return Err(Error::ZeroDurationSentence {
            start_s: sentence.start_s,
            end_s: sentence.end_s,
        });
    }
    Ok(((word.start_s - sentence.start_s) / duration).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordPairing {
    /// `(mri_word_index, clean_word_index)` in MRI word order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_mri: Vec<usize>,
}

/// Pairs words of two paired sentences by equal text. Among several
/// candidates the one with the closest relative position wins, earlier
/// candidates winning ties; a clean word is used at most once.
pub fn pair_words(mri_s: &SentenceInterval, clean_s: &SentenceInterval) -> Result<WordPairing> {
    let clean_pos = clean_s
        .words
        .iter()
        .map(|w| relative_position(w, clean_s))
        .collect::<Result<Vec<_>>>()?;
    let mut used = vec![false; clean_s.words.len()];
    let mut out = WordPairing::default();
    for (i, w) in mri_s.words.iter().enumerate() {
        let r = relative_position(w, mri_s)?;
        let mut best: Option<(usize, f64)> = None;
        for (j, cw) in clean_s.words.iter().enumerate() {
            if used[j] || cw.text != w.text {
                continue;
            }
            let d = (r - clean_pos[j]).abs();
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, _)) => {
                used[j] = true;
                out.pairs.push((i, j));
            }
            None => out.unmatched_mri.push(i),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonePair {
    pub sentence_id: usize,
    pub mri: PhoneInterval,
    pub clean: PhoneInterval,
}

/// Why a word pair produced no phone pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PhoneMismatch {
    Count { mri: usize, clean: usize },
    Label { index: usize, mri: String, clean: String },
}

impl fmt::Display for PhoneMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhoneMismatch::Count { mri, clean } => {
                write!(f, "{mri} MRI phones vs {clean} clean phones")
            }
            PhoneMismatch::Label { index, mri, clean } => {
                write!(f, "phone {index} is {mri:?} vs {clean:?}")
            }
        }
    }
}

/// Pairs phones by index when both words carry the same label sequence.
pub fn pair_phones(
    mri: &WordInterval,
    clean: &WordInterval,
) -> std::result::Result<Vec<(PhoneInterval, PhoneInterval)>, PhoneMismatch> {
    if mri.phones.len() != clean.phones.len() {
        return Err(PhoneMismatch::Count {
            mri: mri.phones.len(),
            clean: clean.phones.len(),
        });
    }
    for (index, (a, b)) in mri.phones.iter().zip(&clean.phones).enumerate() {
        if a.label != b.label {
            return Err(PhoneMismatch::Label {
                index,
                mri: a.label.clone(),
                clean: b.label.clone(),
            });
        }
    }
    Ok(mri.phones.iter().cloned().zip(clean.phones.iter().cloned()).collect())
}

/// Maps a source time into the paired target phone, keeping its relative
/// position within the phone. The source duration is floored at `epsilon_s`.
pub fn time_stretch(
    t_mid: f64,
    mri: &PhoneInterval,
    clean: &PhoneInterval,
    epsilon_s: f64,
) -> f64 {
    let duration = (mri.end_s - mri.start_s).max(epsilon_s);
    let r_intra = ((t_mid - mri.start_s) / duration).clamp(0.0, 1.0);
    clean.start_s + r_intra * (clean.end_s - clean.start_s)
}

/// Clock, length and tolerance settings for [`map_frames`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrid {
    pub mri_clock: FrameClock,
    pub clean_clock: FrameClock,
    pub mri_n_frames: usize,
    pub clean_n_frames: usize,
    pub epsilon_s: f64,
}

/// Builds the frame mapping from paired phones. Each source frame whose
/// mid-time lies in a paired MRI phone (half-open, first pair wins) is
/// stretched into the clean phone and floored to a clean frame index,
/// clamped into range. Every other frame is unmapped. Provenance names the
/// MRI phone and sentence holding the frame's mid-time.
pub fn map_frames(
    mri: &UtteranceSet,
    pairs: &[PhonePair],
    grid: &FrameGrid,
) -> Result<FrameMapping> {
    if grid.clean_n_frames == 0 {
        return Err(Error::InvalidConfig("clean corpus has no frames".into()));
    }
    if !(grid.epsilon_s > 0.0) {
        return Err(Error::InvalidConfig(format!("epsilon {} s", grid.epsilon_s)));
    }
    let n = grid.mri_n_frames;
    let mut entries: Vec<MappingEntry> = (0..n)
        .map(|i| MappingEntry {
            source_idx: i,
            target_idx: None,
            provenance: Provenance {
                phone: String::new(),
                sentence_id: None,
                method: Method::Phonetic,
                clamped: false,
            },
        })
        .collect();
    label_frames(mri, &grid.mri_clock, &mut entries);

    let mut order: Vec<&PhonePair> = pairs.iter().collect();
    order.sort_by(|a, b| a.mri.start_s.total_cmp(&b.mri.start_s));
    let mut assigned = vec![false; n];
    let last = grid.clean_n_frames as i64 - 1;
    for pair in order {
        let mut i = grid.mri_clock.first_frame_from(pair.mri.start_s);
        while i < n {
            let t = frame_mid_time(i, &grid.mri_clock);
            if !pair.mri.contains(t) {
                break;
            }
            if !assigned[i] {
                assigned[i] = true;
                let target = time_stretch(t, &pair.mri, &pair.clean, grid.epsilon_s);
                let raw = grid.clean_clock.frame_at(target);
                let idx = raw.clamp(0, last);
                let e = &mut entries[i];
                e.target_idx = Some(idx as usize);
                e.provenance.phone = pair.mri.label.clone();
                e.provenance.sentence_id = Some(pair.sentence_id);
                e.provenance.clamped = idx != raw;
            }
            i += 1;
        }
    }
    Ok(FrameMapping {
        source_frame_rate_hz: grid.mri_clock.frame_rate_hz,
        target_frame_rate_hz: grid.clean_clock.frame_rate_hz,
        entries,
    })
}

/// Fills phone and sentence provenance from the segmentation, by mid-time.
pub(crate) fn label_frames(set: &UtteranceSet, clock: &FrameClock, entries: &mut [MappingEntry]) {
    for (sid, s) in set.sentences.iter().enumerate() {
        let mut i = clock.first_frame_from(s.start_s);
        while i < entries.len() && frame_mid_time(i, clock) < s.end_s {
            entries[i].provenance.sentence_id = Some(sid);
            i += 1;
        }
    }
    for (_, phone) in set.all_phones() {
        let mut i = clock.first_frame_from(phone.start_s);
        while i < entries.len() && phone.contains(frame_mid_time(i, clock)) {
            if entries[i].provenance.phone.is_empty() {
                entries[i].provenance.phone = phone.label.clone();
            }
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    pub threshold: f64,
    pub epsilon_s: f64,
    pub mri_clock: FrameClock,
    pub clean_clock: FrameClock,
    pub one_to_one: bool,
    /// Frame counts; derived from the corpus durations when absent.
    pub mri_n_frames: Option<usize>,
    pub clean_n_frames: Option<usize>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            threshold: DEFAULT_SIMILARITY_THRESHOLD,
            epsilon_s: DEFAULT_EPSILON_S,
            mri_clock: FrameClock::new(DEFAULT_MRI_FRAME_RATE_HZ, DEFAULT_SAMPLE_RATE_HZ)
                .expect("default MRI clock"),
            clean_clock: FrameClock::new(DEFAULT_CLEAN_FRAME_RATE_HZ, DEFAULT_SAMPLE_RATE_HZ)
                .expect("default clean clock"),
            one_to_one: false,
            mri_n_frames: None,
            clean_n_frames: None,
        }
    }
}

/// Counts and warnings from one alignment run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub mri_sentences: usize,
    pub paired_sentences: usize,
    pub unmatched_sentences: Vec<usize>,
    pub mri_words: usize,
    pub paired_words: usize,
    pub unmatched_words: usize,
    pub demoted_words: usize,
    pub paired_phones: usize,
    pub frames: usize,
    pub mapped_frames: usize,
    pub unmapped_frames: usize,
    pub clamped_frames: usize,
    pub warnings: Vec<String>,
}

impl fmt::Display for AlignmentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "sentences: {} paired, {} unmatched of {}",
            self.paired_sentences,
            self.unmatched_sentences.len(),
            self.mri_sentences
        )?;
        writeln!(
            f,
            "words:     {} paired, {} unmatched, {} demoted of {}",
            self.paired_words, self.unmatched_words, self.demoted_words, self.mri_words
        )?;
        writeln!(f, "phones:    {} paired", self.paired_phones)?;
        writeln!(
            f,
            "frames:    {} mapped, {} unmapped, {} clamped of {}",
            self.mapped_frames, self.unmapped_frames, self.clamped_frames, self.frames
        )?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub mapping: FrameMapping,
    pub pairing: SentencePairing,
    pub report: AlignmentReport,
}

/// Sentence pairing, word pairing, phone pairing and frame mapping in turn.
pub fn align_corpus(
    mri: &UtteranceSet,
    clean: &UtteranceSet,
    config: &AlignConfig,
) -> Result<Alignment> {
    let pairing = if config.one_to_one {
        pair_sentences_one_to_one(mri, clean, config.threshold)?
    } else {
        pair_sentences(mri, clean, config.threshold)?
    };
    let mut report = AlignmentReport {
        mri_sentences: mri.sentences.len(),
        paired_sentences: pairing.pairs.len(),
        unmatched_sentences: pairing.unmatched_mri.clone(),
        mri_words: mri.n_words(),
        ..AlignmentReport::default()
    };
    for &sid in &pairing.unmatched_mri {
        report.warnings.push(format!(
            "sentence {sid} {:?}: no clean sentence reaches similarity {}",
            mri.sentences[sid].text, config.threshold
        ));
    }

    let mut phone_pairs = Vec::new();
    for sp in &pairing.pairs {
        let (ms, cs) = (&mri.sentences[sp.mri], &clean.sentences[sp.clean]);
        let words = pair_words(ms, cs)?;
        report.unmatched_words += words.unmatched_mri.len();
        for &wi in &words.unmatched_mri {
            report.warnings.push(format!(
                "sentence {}: word {wi} {:?} has no clean counterpart",
                sp.mri, ms.words[wi].text
            ));
        }
        for &(wi, wj) in &words.pairs {
            match pair_phones(&ms.words[wi], &cs.words[wj]) {
                Ok(phones) => {
                    report.paired_words += 1;
                    phone_pairs.extend(phones.into_iter().map(|(m, c)| PhonePair {
                        sentence_id: sp.mri,
                        mri: m,
                        clean: c,
                    }));
                }
                Err(why) => {
                    report.demoted_words += 1;
                    report.warnings.push(format!(
                        "sentence {}: word {wi} {:?} demoted: {why}",
                        sp.mri, ms.words[wi].text
                    ));
                }
            }
        }
    }
    report.paired_phones = phone_pairs.len();

    let grid = FrameGrid {
        mri_clock: config.mri_clock,
        clean_clock: config.clean_clock,
        mri_n_frames: config
            .mri_n_frames
            .unwrap_or_else(|| config.mri_clock.frames_covering(mri.total_duration_s)),
        clean_n_frames: config
            .clean_n_frames
            .unwrap_or_else(|| config.clean_clock.frames_covering(clean.total_duration_s)),
        epsilon_s: config.epsilon_s,
    };
    let mapping = map_frames(mri, &phone_pairs, &grid)?;
    report.frames = mapping.entries.len();
    report.mapped_frames = mapping.n_mapped();
    report.unmapped_frames = report.frames - report.mapped_frames;
    report.clamped_frames = mapping.n_clamped();
    Ok(Alignment {
        mapping,
        pairing,
        report,
    })
}

const PAIRING_HEADER: [&str; 7] = [
    "mri_sentence_id",
    "clean_sentence_id",
    "similarity",
    "mri_start_s",
    "mri_end_s",
    "clean_start_s",
    "clean_end_s",
];

/// One line of the sentence pairing file, carrying the times needed to
/// place per-sentence alignments on the corpus frame grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingRow {
    pub mri_sentence_id: usize,
    pub mri_start_s: f64,
    pub mri_end_s: f64,
    /// Clean sentence id, similarity, start and end; `None` when unmatched.
    pub clean: Option<CleanSide>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanSide {
    pub sentence_id: usize,
    pub similarity: f64,
    pub start_s: f64,
    pub end_s: f64,
}

/// Rows for every MRI sentence, paired or not, in MRI order.
pub fn pairing_rows(
    pairing: &SentencePairing,
    mri: &UtteranceSet,
    clean: &UtteranceSet,
) -> Vec<PairingRow> {
    mri.sentences
        .iter()
        .enumerate()
        .map(|(id, s)| PairingRow {
            mri_sentence_id: id,
            mri_start_s: s.start_s,
            mri_end_s: s.end_s,
            clean: pairing.clean_of(id).map(|p| {
                let c = &clean.sentences[p.clean];
                CleanSide {
                    sentence_id: p.clean,
                    similarity: p.similarity,
                    start_s: c.start_s,
                    end_s: c.end_s,
                }
            }),
        })
        .collect()
}

/// Writes the pairing CSV; unmatched rows have clean id `-1` and empty
/// clean fields.
pub fn write_pairing<W: Write>(rows: &[PairingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PAIRING_HEADER).map_err(crate::corpus::csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.mri_sentence_id.to_string(),
            String::new(),
            String::new(),
            format_seconds(r.mri_start_s),
            format_seconds(r.mri_end_s),
            String::new(),
            String::new(),
        ];
        match &r.clean {
            Some(c) => {
                rec[1] = c.sentence_id.to_string();
                rec[2] = format!("{}", c.similarity);
                rec[5] = format_seconds(c.start_s);
                rec[6] = format_seconds(c.end_s);
            }
            None => rec[1] = "-1".into(),
        }
        w.write_record(&rec).map_err(crate::corpus::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_pairing<R: Read>(source: R) -> Result<Vec<PairingRow>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers().map_err(crate::corpus::csv_err)?.clone();
    if headers.iter().ne(PAIRING_HEADER.iter().copied()) {
        return Err(Error::MalformedHeader(format!(
            "expected {:?}, found {:?}",
            PAIRING_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<PairingRow> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::MalformedLine {
            line,
            msg: e.to_string(),
        })?;
        let bad = |what: &str, v: &str| Error::MalformedLine {
            line,
            msg: format!("invalid {what} {v:?}"),
        };
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(PAIRING_HEADER[i], &record[i]))
        };
        let mri_sentence_id: usize = record[0].parse().map_err(|_| bad("mri_sentence_id", &record[0]))?;
        let clean_id: i64 = record[1].parse().map_err(|_| bad("clean_sentence_id", &record[1]))?;
        let (mri_start_s, mri_end_s) = (num(3)?, num(4)?);
        if mri_end_s <= mri_start_s {
            return Err(Error::NonMonotoneTimes {
                line,
                msg: format!("sentence [{mri_start_s}, {mri_end_s}]"),
            });
        }
        let clean = match clean_id {
            -1 => None,
            c if c >= 0 => {
                let (start_s, end_s) = (num(5)?, num(6)?);
                if end_s <= start_s {
                    return Err(Error::NonMonotoneTimes {
                        line,
                        msg: format!("clean sentence [{start_s}, {end_s}]"),
                    });
                }
                Some(CleanSide {
                    sentence_id: c as usize,
                    similarity: num(2)?,
                    start_s,
                    end_s,
                })
            }
            _ => return Err(bad("clean_sentence_id", &record[1])),
        };
        if let Some(prev) = rows.last() {
            if mri_sentence_id <= prev.mri_sentence_id || mri_start_s < prev.mri_end_s - crate::corpus::TIME_TOLERANCE_S {
                return Err(Error::NonMonotoneTimes {
                    line,
                    msg: format!("sentence {mri_sentence_id} does not follow {}", prev.mri_sentence_id),
                });
            }
        }
        rows.push(PairingRow {
            mri_sentence_id,
            mri_start_s,
            mri_end_s,
            clean,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_silence_labels;

    fn phone(label: &str, start_s: f64, end_s: f64) -> PhoneInterval {
        PhoneInterval::new(label, start_s, end_s)
    }

    /// A word whose phones evenly split its interval.
    fn word(text: &str, labels: &[&str], start_s: f64, end_s: f64) -> WordInterval {
        let step = (end_s - start_s) / labels.len() as f64;
        WordInterval {
            text: text.into(),
            start_s,
            end_s,
            phones: labels
                .iter()
                .enumerate()
                .map(|(k, l)| {
                    let end = if k + 1 == labels.len() { end_s } else { start_s + step * (k + 1) as f64 };
                    phone(l, start_s + step * k as f64, end)
                })
                .collect(),
        }
    }

    fn sentence(words: Vec<WordInterval>, start_s: f64, end_s: f64) -> SentenceInterval {
        let text = words.iter().map(|w| w.text.clone()).collect::<Vec<_>>().join(" ");
        SentenceInterval {
            text,
            start_s,
            end_s,
            words,
        }
    }

    fn set(sentences: Vec<SentenceInterval>) -> UtteranceSet {
        UtteranceSet::new(sentences, vec![], default_silence_labels()).unwrap()
    }

    fn clock(rate: f64) -> FrameClock {
        FrameClock::new(rate, 16_000.0).unwrap()
    }

    #[test]
    fn hand_derived_stretch() {
        let m = phone("a", 1.00, 1.20);
        let c = phone("a", 2.00, 2.40);
        let t = time_stretch(1.05, &m, &c, DEFAULT_EPSILON_S);
        assert!((t - 2.10).abs() < 1e-12);
        assert_eq!(clock(50.0).frame_at(t), 105);
    }

    #[test]
    fn epsilon_floor_on_empty_phone() {
        let m = phone("a", 1.0, 1.0);
        let c = phone("a", 2.0, 2.4);
        assert_eq!(time_stretch(1.0, &m, &c, DEFAULT_EPSILON_S), 2.0);
        // Mid-time past a zero-length phone saturates at the clean end.
        assert_eq!(time_stretch(1.5, &m, &c, DEFAULT_EPSILON_S), 2.4);
    }

    #[test]
    fn relative_positions() {
        let s = sentence(vec![word("x", &["x"], 2.0, 3.0)], 1.0, 5.0);
        assert_eq!(relative_position(&s.words[0], &s).unwrap(), 0.25);
        let w0 = word("x", &["x"], 1.0, 2.0);
        assert_eq!(relative_position(&w0, &s).unwrap(), 0.0);
        let w1 = word("x", &["x"], 5.0, 5.5);
        assert_eq!(relative_position(&w1, &s).unwrap(), 1.0);
        let flat = SentenceInterval {
            text: "x".into(),
            start_s: 1.0,
            end_s: 1.0,
            words: vec![],
        };
        assert!(matches!(
            relative_position(&w0, &flat),
            Err(Error::ZeroDurationSentence { .. })
        ));
    }

    #[test]
    fn sentence_pairing_prefers_exact_text() {
        let mri = set(vec![sentence(
            vec![
                word("après", &["a", "p", "ʁ", "ɛ"], 0.0, 0.4),
                word("une", &["y", "n"], 0.4, 0.6),
                word("heure", &["œ", "ʁ"], 0.6, 1.0),
            ],
            0.0,
            1.0,
        )]);
        let clean = set(vec![
            sentence(
                vec![
                    word("avant", &["a", "v", "ɑ̃"], 0.0, 0.4),
                    word("une", &["y", "n"], 0.4, 0.6),
                    word("heure", &["œ", "ʁ"], 0.6, 1.0),
                ],
                0.0,
                1.0,
            ),
            sentence(
                vec![
                    word("après", &["a", "p", "ʁ", "ɛ"], 2.0, 2.4),
                    word("une", &["y", "n"], 2.4, 2.6),
                    word("heure", &["œ", "ʁ"], 2.6, 3.0),
                ],
                2.0,
                3.0,
            ),
        ]);
        let p = pair_sentences(&mri, &clean, 0.75).unwrap();
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.pairs[0].clean, 1);
        assert_eq!(p.pairs[0].similarity, 1.0);
        assert!(similarity::similarity("après une heure", "avant une heure") < 1.0);

        let strict = pair_sentences(&mri, &clean, 1.0).unwrap();
        assert_eq!(strict.pairs[0].clean, 1);
    }

    #[test]
    fn below_threshold_is_unmatched() {
        let mri = set(vec![sentence(vec![word("abcde", &["a"], 0.0, 1.0)], 0.0, 1.0)]);
        let clean = set(vec![sentence(vec![word("abcxy", &["a"], 0.0, 1.0)], 0.0, 1.0)]);
        // 2 * 3 / 10 = 0.6
        assert_eq!(similarity::similarity("abcde", "abcxy"), 0.6);
        let p = pair_sentences(&mri, &clean, 0.75).unwrap();
        assert!(p.pairs.is_empty());
        assert_eq!(p.unmatched_mri, vec![0]);
        assert_eq!(pair_sentences(&mri, &clean, 0.6).unwrap().pairs.len(), 1);
        assert!(pair_sentences(&mri, &clean, 0.0).is_err());
        assert!(pair_sentences(&mri, &clean, 1.5).is_err());
    }

    #[test]
    fn ties_go_to_smaller_clean_id() {
        let s = |t: f64| sentence(vec![word("abc", &["a"], t, t + 1.0)], t, t + 1.0);
        let mri = set(vec![s(0.0)]);
        let clean = set(vec![s(0.0), s(2.0), s(4.0)]);
        assert_eq!(pair_sentences(&mri, &clean, 0.75).unwrap().pairs[0].clean, 0);
    }

    #[test]
    fn one_to_one_pairing() {
        let s = |text: &str, t: f64| sentence(vec![word(text, &["a"], t, t + 1.0)], t, t + 1.0);
        let mri = set(vec![s("abcdefgh", 0.0), s("abcdefgx", 2.0)]);
        let clean = set(vec![s("abcdefgh", 0.0)]);
        let many = pair_sentences(&mri, &clean, 0.75).unwrap();
        assert_eq!(many.pairs.len(), 2);
        let one = pair_sentences_one_to_one(&mri, &clean, 0.75).unwrap();
        assert_eq!(one.pairs, vec![SentencePair { mri: 0, clean: 0, similarity: 1.0 }]);
        assert_eq!(one.unmatched_mri, vec![1]);
    }

    /// "le chat et le chien" with the clean "le" tokens at relative
    /// positions 0.02 and 0.55.
    #[test]
    fn duplicate_words_follow_relative_position() {
        let mri = sentence(
            vec![
                word("le", &["l", "ə"], 0.0, 0.2),
                word("chat", &["ʃ", "a"], 0.2, 0.5),
                word("et", &["e"], 0.5, 0.6),
                word("le", &["l", "ə"], 0.6, 0.8),
                word("chien", &["ʃ", "j", "ɛ̃"], 0.8, 1.0),
            ],
            0.0,
            1.0,
        );
        let clean = sentence(
            vec![
                word("le", &["l", "ə"], 10.02, 10.2),
                word("chat", &["ʃ", "a"], 10.2, 10.5),
                word("et", &["e"], 10.5, 10.55),
                word("le", &["l", "ə"], 10.55, 10.8),
                word("chien", &["ʃ", "j", "ɛ̃"], 10.8, 11.0),
            ],
            10.0,
            11.0,
        );
        assert!((relative_position(&clean.words[0], &clean).unwrap() - 0.02).abs() < 1e-9);
        assert!((relative_position(&clean.words[3], &clean).unwrap() - 0.55).abs() < 1e-9);
        let p = pair_words(&mri, &clean).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]);
        assert!(p.unmatched_mri.is_empty());
    }

    #[test]
    fn consumed_words_are_not_reused() {
        let mri = sentence(
            vec![word("le", &["l"], 0.0, 0.5), word("le", &["l"], 0.5, 1.0)],
            0.0,
            1.0,
        );
        let clean = sentence(vec![word("le", &["l"], 0.0, 0.5)], 0.0, 1.0);
        let p = pair_words(&mri, &clean).unwrap();
        assert_eq!(p.pairs, vec![(0, 0)]);
        assert_eq!(p.unmatched_mri, vec![1]);
    }

    #[test]
    fn missing_word_is_unmatched() {
        let mri = sentence(
            vec![word("euh", &["ø"], 0.0, 0.3), word("oui", &["w", "i"], 0.3, 1.0)],
            0.0,
            1.0,
        );
        let clean = sentence(vec![word("oui", &["w", "i"], 0.0, 1.0)], 0.0, 1.0);
        let p = pair_words(&mri, &clean).unwrap();
        assert_eq!(p.pairs, vec![(1, 0)]);
        assert_eq!(p.unmatched_mri, vec![0]);
    }

    #[test]
    fn phone_pairing_rules() {
        let a = word("après", &["a", "p", "ʁ", "ɛ"], 0.0, 0.4);
        let b = word("après", &["a", "p", "ʁ", "ɛ"], 1.0, 1.8);
        assert_eq!(pair_phones(&a, &b).unwrap().len(), 4);
        let five = word("après", &["a", "p", "ʁ", "ɛ", "ə"], 1.0, 1.8);
        assert_eq!(
            pair_phones(&a, &five),
            Err(PhoneMismatch::Count { mri: 4, clean: 5 })
        );
        let ap = word("ap", &["a", "p"], 0.0, 0.2);
        let ab = word("ap", &["a", "b"], 0.0, 0.2);
        assert!(matches!(pair_phones(&ap, &ab), Err(PhoneMismatch::Label { index: 1, .. })));
    }

    fn corpus(offset: f64, stretch: f64) -> UtteranceSet {
        let mut sentences = Vec::new();
        let mut t = offset;
        for (k, texts) in [["bonjour", "marie"], ["il", "pleut"]].iter().enumerate() {
            let start = t;
            let mut words = Vec::new();
            for (w, text) in texts.iter().enumerate() {
                let labels: Vec<String> = text.chars().map(|c| c.to_string()).collect();
                let labels: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
                let d = stretch * (0.3 + 0.05 * (k + w) as f64);
                words.push(word(text, &labels, t, t + d));
                t += d;
            }
            sentences.push(sentence(words, start, t));
            t += 0.2;
        }
        set(sentences)
    }

    #[test]
    fn identity_alignment() {
        let c = corpus(0.1, 1.0);
        let config = AlignConfig {
            mri_clock: clock(50.0),
            clean_clock: clock(50.0),
            ..AlignConfig::default()
        };
        let a = align_corpus(&c, &c, &config).unwrap();
        assert_eq!(a.report.paired_sentences, 2);
        assert_eq!(a.report.clamped_frames, 0);
        assert!(a.report.mapped_frames > 0);
        for e in &a.mapping.entries {
            let t = frame_mid_time(e.source_idx, &config.mri_clock);
            let in_phone = c
                .sentences
                .iter()
                .flat_map(|s| s.phones())
                .any(|p| p.contains(t));
            if in_phone {
                assert_eq!(e.target_idx, Some(e.source_idx));
            } else {
                assert_eq!(e.target_idx, None);
            }
        }
    }

    #[test]
    fn stretched_corpus_maps_monotonically_within_phones() {
        let mri = corpus(0.1, 1.0);
        let clean = corpus(0.5, 2.0);
        let a = align_corpus(&mri, &clean, &AlignConfig::default()).unwrap();
        assert_eq!(a.report.paired_phones, mri.n_phones());
        let mut last: Option<(String, usize)> = None;
        for e in a.mapping.mapped() {
            let t = e.target_idx.unwrap();
            if let Some((label, prev)) = &last {
                if *label == e.provenance.phone {
                    assert!(t >= *prev);
                }
            }
            last = Some((e.provenance.phone.clone(), t));
        }
    }

    #[test]
    fn targets_are_clamped_and_flagged() {
        let mri = set(vec![sentence(vec![word("a", &["a"], 0.0, 1.0)], 0.0, 1.0)]);
        let clean = set(vec![sentence(vec![word("a", &["a"], 0.0, 1.0)], 0.0, 1.0)]);
        let config = AlignConfig {
            clean_n_frames: Some(10),
            ..AlignConfig::default()
        };
        let a = align_corpus(&mri, &clean, &config).unwrap();
        assert!(a.report.clamped_frames > 0);
        for e in a.mapping.mapped() {
            assert!(e.target_idx.unwrap() <= 9);
            assert_eq!(e.provenance.clamped, e.target_idx == Some(9) && e.source_idx > 3);
        }
    }

    #[test]
    fn unmatched_sentence_frames_stay_unmapped() {
        let mri = corpus(0.1, 1.0);
        let mut clean = corpus(0.1, 1.0);
        clean.sentences.truncate(1);
        let a = align_corpus(&mri, &clean, &AlignConfig::default()).unwrap();
        assert_eq!(a.report.unmatched_sentences, vec![1]);
        let full = align_corpus(&mri, &corpus(0.1, 1.0), &AlignConfig::default()).unwrap();
        for (e, f) in a.mapping.entries.iter().zip(&full.mapping.entries) {
            if e.provenance.sentence_id == Some(1) {
                assert_eq!(e.target_idx, None);
            } else {
                assert_eq!(e, f);
            }
        }
        // Provenance still names the phone holding the mid-time.
        assert!(a
            .mapping
            .entries
            .iter()
            .any(|e| e.provenance.sentence_id == Some(1) && !e.provenance.phone.is_empty()));
    }

    #[test]
    fn demoted_words_are_reported() {
        let mri = set(vec![sentence(
            vec![word("ab", &["a", "b"], 0.0, 0.5), word("cd", &["c", "d"], 0.5, 1.0)],
            0.0,
            1.0,
        )]);
        let clean = set(vec![sentence(
            vec![word("ab", &["a", "p"], 0.0, 0.5), word("cd", &["c", "d"], 0.5, 1.0)],
            0.0,
            1.0,
        )]);
        let a = align_corpus(&mri, &clean, &AlignConfig::default()).unwrap();
        assert_eq!(a.report.demoted_words, 1);
        assert_eq!(a.report.paired_words, 1);
        assert_eq!(a.report.paired_phones, 2);
        assert!(a.report.warnings.iter().any(|w| w.contains("demoted")));
        assert!(a.report.to_string().contains("1 demoted"));
    }

    #[test]
    fn pairing_file_round_trip() {
        let mri = corpus(0.1, 1.0);
        let mut clean = corpus(0.3, 1.5);
        clean.sentences.truncate(1);
        let p = pair_sentences(&mri, &clean, 0.75).unwrap();
        let rows = pairing_rows(&p, &mri, &clean);
        assert_eq!(rows.len(), 2);
        assert!(rows[1].clean.is_none());
        let mut out = Vec::new();
        write_pairing(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains(",-1,,"));
        let back = parse_pairing(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].clean.unwrap().sentence_id, 0);
        assert!((back[0].mri_start_s - rows[0].mri_start_s).abs() < 1e-12);
        assert!(matches!(parse_pairing("a,b\n".as_bytes()), Err(Error::MalformedHeader(_))));
    }
}
