use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use super::text::{format_seconds, normalize_label, normalize_text};
use super::textgrid;
use super::{
    PhoneInterval, SentenceInterval, UtteranceSet, WordInterval, TIME_TOLERANCE_S,
};
use crate::error::{Error, Result};

const TSV_HEADER: &str = "tier\tstart_s\tend_s\tlabel";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentationFormat {
    Tsv,
    TextGridSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Tier {
    Sentence,
    Word,
    Phone,
}

impl Tier {
    fn name(self) -> &'static str {
        match self {
            Tier::Sentence => "sentence",
            Tier::Word => "word",
            Tier::Phone => "phone",
        }
    }
}

/// One interval as read from a flat tier, before nesting.
#[derive(Debug, Clone)]
pub(crate) struct RawInterval {
    pub line: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub label: String,
}

#[derive(Debug, Default)]
pub(crate) struct FlatTiers {
    pub sentences: Vec<RawInterval>,
    pub words: Vec<RawInterval>,
    pub phones: Vec<RawInterval>,
}

impl FlatTiers {
    fn push(&mut self, tier: Tier, iv: RawInterval) {
        match tier {
            Tier::Sentence => self.sentences.push(iv),
            Tier::Word => self.words.push(iv),
            Tier::Phone => self.phones.push(iv),
        }
    }
}

/// Reads a segmentation and rebuilds the sentence/word/phone hierarchy by
/// time containment.
pub fn parse_segmentation<R: BufRead>(
    source: R,
    format: SegmentationFormat,
    silence_labels: &BTreeSet<String>,
) -> Result<UtteranceSet> {
    let tiers = match format {
        SegmentationFormat::Tsv => read_tsv(source)?,
        SegmentationFormat::TextGridSubset => textgrid::read_textgrid(source)?,
    };
    assemble(tiers, silence_labels)
}

fn read_tsv<R: BufRead>(source: R) -> Result<FlatTiers> {
    let mut tiers = FlatTiers::default();
    let mut saw_header = false;
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if !saw_header {
            if line.trim().is_empty() {
                continue;
            }
            if line != TSV_HEADER {
                return Err(Error::MalformedHeader(format!(
                    "expected {TSV_HEADER:?}, found {line:?}"
                )));
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedLine {
                line: line_no,
                msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let tier = match fields[0] {
            "sentence" => Tier::Sentence,
            "word" => Tier::Word,
            "phone" => Tier::Phone,
            other => {
                return Err(Error::MalformedLine {
                    line: line_no,
                    msg: format!("unknown tier {other:?}"),
                })
            }
        };
        let start_s = parse_time(fields[1], line_no)?;
        let end_s = parse_time(fields[2], line_no)?;
        tiers.push(
            tier,
            RawInterval {
                line: line_no,
                start_s,
                end_s,
                label: fields[3].to_string(),
            },
        );
    }
    if !saw_header {
        return Err(Error::MalformedHeader("missing header line".into()));
    }
    Ok(tiers)
}

pub(crate) fn parse_time(field: &str, line: usize) -> Result<f64> {
    let t: f64 = field.trim().parse().map_err(|_| Error::MalformedLine {
        line,
        msg: format!("invalid time {field:?}"),
    })?;
    if !t.is_finite() {
        return Err(Error::MalformedLine {
            line,
            msg: format!("non-finite time {field:?}"),
        });
    }
    Ok(t)
}

/// Checks per-tier ordering and well-formedness of every interval.
fn check_tier(tier: Tier, intervals: &[RawInterval]) -> Result<()> {
    let mut prev: Option<&RawInterval> = None;
    for iv in intervals {
        if iv.start_s < 0.0 {
            return Err(Error::MalformedLine {
                line: iv.line,
                msg: format!("negative time {}", iv.start_s),
            });
        }
        if iv.start_s >= iv.end_s {
            return Err(Error::NonMonotoneTimes {
                line: iv.line,
                msg: format!(
                    "{} interval [{}, {}] does not move forward",
                    tier.name(),
                    iv.start_s,
                    iv.end_s
                ),
            });
        }
        if let Some(p) = prev {
            if iv.start_s < p.start_s {
                return Err(Error::NonMonotoneTimes {
                    line: iv.line,
                    msg: format!("{} interval starts before the previous one", tier.name()),
                });
            }
            if iv.start_s < p.end_s - TIME_TOLERANCE_S {
                return Err(Error::OverlappingIntervals {
                    line: iv.line,
                    tier: tier.name().into(),
                });
            }
        }
        prev = Some(iv);
    }
    Ok(())
}

fn inside(inner: &RawInterval, start_s: f64, end_s: f64) -> bool {
    inner.start_s >= start_s - TIME_TOLERANCE_S && inner.end_s <= end_s + TIME_TOLERANCE_S
}

pub(crate) fn assemble(tiers: FlatTiers, silence_labels: &BTreeSet<String>) -> Result<UtteranceSet> {
    check_tier(Tier::Sentence, &tiers.sentences)?;
    check_tier(Tier::Word, &tiers.words)?;
    check_tier(Tier::Phone, &tiers.phones)?;
    if tiers.sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut sentences: Vec<SentenceInterval> = tiers
        .sentences
        .iter()
        .map(|s| SentenceInterval {
            text: normalize_text(&s.label),
            start_s: s.start_s,
            end_s: s.end_s,
            words: Vec::new(),
        })
        .collect();

    // Words and sentences are both sorted, so a single forward cursor suffices.
    let mut word_owner = Vec::with_capacity(tiers.words.len());
    let mut cursor = 0;
    for w in &tiers.words {
        while cursor < sentences.len() && sentences[cursor].end_s + TIME_TOLERANCE_S < w.end_s {
            cursor += 1;
        }
        let sid = cursor;
        if sid >= sentences.len() || !inside(w, sentences[sid].start_s, sentences[sid].end_s) {
            return Err(Error::MalformedLine {
                line: w.line,
                msg: format!("word {:?} is not inside any sentence", w.label),
            });
        }
        let text = normalize_text(&w.label);
        if text.is_empty() {
            return Err(Error::MalformedLine {
                line: w.line,
                msg: "word label is empty after normalization".into(),
            });
        }
        sentences[sid].words.push(WordInterval {
            text,
            start_s: w.start_s,
            end_s: w.end_s,
            phones: Vec::new(),
        });
        word_owner.push((sid, sentences[sid].words.len() - 1, w.start_s, w.end_s));
    }

    let mut pauses = Vec::new();
    let mut cursor = 0;
    for p in &tiers.phones {
        while cursor < word_owner.len() && word_owner[cursor].3 + TIME_TOLERANCE_S < p.end_s {
            cursor += 1;
        }
        let label = normalize_label(&p.label);
        let phone = PhoneInterval::new(label, p.start_s, p.end_s);
        match word_owner.get(cursor) {
            Some(&(sid, wid, ws, we)) if inside(p, ws, we) => {
                sentences[sid].words[wid].phones.push(phone);
            }
            _ => {
                if !silence_labels.contains(&phone.label) {
                    return Err(Error::MalformedLine {
                        line: p.line,
                        msg: format!("phone {:?} is not inside any word", phone.label),
                    });
                }
                pauses.push(phone);
            }
        }
    }

    UtteranceSet::new(sentences, pauses, silence_labels.clone())
}

/// Writes the canonical TSV form: sentence rows, then word rows, then every
/// phone row (word phones and pauses) in time order.
pub fn write_segmentation<W: Write>(set: &UtteranceSet, mut out: W) -> Result<()> {
    writeln!(out, "{TSV_HEADER}")?;
    for s in &set.sentences {
        write_row(&mut out, Tier::Sentence, s.start_s, s.end_s, &s.text)?;
    }
    for w in set.sentences.iter().flat_map(|s| s.words.iter()) {
        write_row(&mut out, Tier::Word, w.start_s, w.end_s, &w.text)?;
    }
    for (_, p) in set.all_phones() {
        write_row(&mut out, Tier::Phone, p.start_s, p.end_s, &p.label)?;
    }
    Ok(())
}

fn write_row<W: Write>(out: &mut W, tier: Tier, start: f64, end: f64, label: &str) -> Result<()> {
    writeln!(
        out,
        "{}\t{}\t{}\t{}",
        tier.name(),
        format_seconds(start),
        format_seconds(end),
        label
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_silence_labels;

    const FIXTURE: &str = "tier\tstart_s\tend_s\tlabel
sentence\t1.000\t2.200\tAprès une heure.
word\t1.000\t1.400\taprès
word\t1.400\t1.700\tune
word\t1.700\t2.200\theure
phone\t1.000\t1.100\ta
phone\t1.100\t1.200\tp
phone\t1.200\t1.300\tʁ
phone\t1.300\t1.400\tɛ
phone\t1.400\t1.550\ty
phone\t1.550\t1.700\tn
phone\t1.700\t1.950\tœ
phone\t1.950\t2.200\tʁ
";

    fn parse(s: &str) -> Result<UtteranceSet> {
        parse_segmentation(s.as_bytes(), SegmentationFormat::Tsv, &default_silence_labels())
    }

    #[test]
    fn parses_three_tier_fixture() {
        let set = parse(FIXTURE).unwrap();
        assert_eq!(set.sentences.len(), 1);
        assert_eq!(set.sentences[0].text, "après une heure");
        assert_eq!(set.n_words(), 3);
        assert_eq!(set.n_phones(), 8);
        assert_eq!(set.sentences[0].words[2].phones.len(), 2);
        assert_eq!(set.total_duration_s, 2.2);
    }

    #[test]
    fn canonical_round_trip() {
        let set = parse(FIXTURE).unwrap();
        let mut out = Vec::new();
        write_segmentation(&set, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        // Only the sentence label changes: it is stored normalized.
        assert_eq!(text, FIXTURE.replace("Après une heure.", "après une heure"));
        assert_eq!(parse(&text).unwrap(), set);
    }

    #[test]
    fn reversed_word_is_non_monotone() {
        let bad = FIXTURE.replace("word\t1.400\t1.700\tune", "word\t1.500\t1.400\tune");
        match parse(&bad) {
            Err(Error::NonMonotoneTimes { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_length_interval_rejected() {
        let bad = FIXTURE.replace("phone\t1.100\t1.200\tp", "phone\t1.100\t1.100\tp");
        assert!(matches!(parse(&bad), Err(Error::NonMonotoneTimes { line: 7, .. })));
    }

    #[test]
    fn overlap_rejected() {
        let bad = FIXTURE.replace("word\t1.400\t1.700\tune", "word\t1.300\t1.700\tune");
        assert!(matches!(
            parse(&bad),
            Err(Error::OverlappingIntervals { line: 4, .. })
        ));
    }

    #[test]
    fn overlap_within_tolerance_accepted() {
        let ok = FIXTURE.replace("word\t1.400\t1.700\tune", "word\t1.3995\t1.700\tune");
        assert!(parse(&ok).is_ok());
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let bad = FIXTURE.replace("phone\t1.200\t1.300\tʁ", "phone\t1.200\tabc\tʁ");
        assert!(matches!(parse(&bad), Err(Error::MalformedLine { line: 8, .. })));
        let bad = FIXTURE.replace("phone\t1.200\t1.300\tʁ", "phon\t1.200\t1.300\tʁ");
        assert!(matches!(parse(&bad), Err(Error::MalformedLine { line: 8, .. })));
        let bad = FIXTURE.replace("phone\t1.200\t1.300\tʁ", "phone\t1.200\t1.300");
        assert!(matches!(parse(&bad), Err(Error::MalformedLine { line: 8, .. })));
    }

    #[test]
    fn header_and_empty_corpus() {
        assert!(matches!(parse("a\tb\tc\td\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(parse(""), Err(Error::MalformedHeader(_))));
        assert!(matches!(parse("tier\tstart_s\tend_s\tlabel\n"), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn silence_outside_words_becomes_pause() {
        let src = format!("{FIXTURE}phone\t2.200\t2.500\tsil\n");
        // The sil phone lies outside the sentence too.
        let set = parse(&src.replace("sentence\t1.000\t2.200", "sentence\t1.000\t2.600")).unwrap();
        assert_eq!(set.pauses.len(), 1);
        assert_eq!(set.all_phones().last().unwrap().0, Some(0));
        let bad = format!("{FIXTURE}phone\t2.200\t2.500\tb\n");
        assert!(matches!(parse(&bad), Err(Error::MalformedLine { line: 14, .. })));
    }

    #[test]
    fn orphan_word_rejected() {
        let src = format!("{FIXTURE}word\t3.000\t3.500\tencore\n");
        assert!(matches!(parse(&src), Err(Error::MalformedLine { line: 14, .. })));
    }
}
