//! Reader for the interval-tier subset of Praat TextGrid text files (long or
//! short layout). Point tiers are rejected.

use std::io::BufRead;

use super::segmentation::{FlatTiers, RawInterval, Tier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Str(String),
    Num(f64),
    Flag(String),
}

struct Tokens {
    items: Vec<(usize, Token)>,
    pos: usize,
}

impl Tokens {
    fn last_line(&self) -> usize {
        self.items.last().map_or(1, |(l, _)| *l)
    }

    fn next(&mut self) -> Result<(usize, Token)> {
        let item = self.items.get(self.pos).cloned().ok_or(Error::MalformedLine {
            line: self.last_line(),
            msg: "unexpected end of TextGrid".into(),
        })?;
        self.pos += 1;
        Ok(item)
    }

    fn string(&mut self) -> Result<(usize, String)> {
        match self.next()? {
            (line, Token::Str(s)) => Ok((line, s)),
            (line, other) => Err(Error::MalformedLine {
                line,
                msg: format!("expected a quoted string, found {other:?}"),
            }),
        }
    }

    fn number(&mut self) -> Result<(usize, f64)> {
        match self.next()? {
            (line, Token::Num(v)) => Ok((line, v)),
            (line, other) => Err(Error::MalformedLine {
                line,
                msg: format!("expected a number, found {other:?}"),
            }),
        }
    }

    fn count(&mut self) -> Result<usize> {
        let (line, v) = self.number()?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::MalformedLine {
                line,
                msg: format!("expected a count, found {v}"),
            });
        }
        Ok(v as usize)
    }
}

fn tokenize(text: &str) -> Result<Tokens> {
    let mut items = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let chars: Vec<char> = raw_line.chars().collect();
        let mut k = 0;
        while k < chars.len() {
            let c = chars[k];
            if c.is_whitespace() {
                k += 1;
            } else if c == '"' {
                let mut s = String::new();
                k += 1;
                loop {
                    match chars.get(k) {
                        None => {
                            return Err(Error::MalformedLine {
                                line,
                                msg: "unterminated string".into(),
                            })
                        }
                        Some('"') if chars.get(k + 1) == Some(&'"') => {
                            s.push('"');
                            k += 2;
                        }
                        Some('"') => {
                            k += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            k += 1;
                        }
                    }
                }
                items.push((line, Token::Str(s)));
            } else if c == '<' {
                let start = k;
                while k < chars.len() && chars[k] != '>' {
                    k += 1;
                }
                k += 1;
                let flag: String = chars[start..k.min(chars.len())].iter().collect();
                items.push((line, Token::Flag(flag)));
            } else {
                let start = k;
                while k < chars.len() && !chars[k].is_whitespace() {
                    k += 1;
                }
                let word: String = chars[start..k].iter().collect();
                // Long-format decorations (`xmin =`, `item [1]:`) carry no data.
                if let Ok(v) = word.parse::<f64>() {
                    if !v.is_finite() {
                        return Err(Error::NonFiniteValue { line });
                    }
                    items.push((line, Token::Num(v)));
                }
            }
        }
    }
    Ok(Tokens { items, pos: 0 })
}

fn classify(name: &str) -> Option<Tier> {
    let name = name.to_lowercase();
    if name.contains("sent") || name.contains("utt") {
        Some(Tier::Sentence)
    } else if name.contains("word") {
        Some(Tier::Word)
    } else if name.contains("phon") || name.contains("seg") {
        Some(Tier::Phone)
    } else {
        None
    }
}

pub(crate) fn read_textgrid<R: BufRead>(mut source: R) -> Result<FlatTiers> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let text = text.trim_start_matches('\u{feff}');
    let mut tokens = tokenize(text)?;

    let (line, file_type) = tokens.string()?;
    let (_, object_class) = tokens.string()?;
    if file_type != "ooTextFile" || object_class != "TextGrid" {
        return Err(Error::MalformedHeader(format!(
            "line {line}: not a TextGrid text file ({file_type:?} / {object_class:?})"
        )));
    }
    tokens.number()?;
    tokens.number()?;
    match tokens.next()? {
        (_, Token::Flag(f)) if f == "<exists>" => {}
        (line, _) => {
            return Err(Error::MalformedHeader(format!(
                "line {line}: TextGrid without tiers"
            )))
        }
    }
    let n_tiers = tokens.count()?;

    let mut tiers = FlatTiers::default();
    for _ in 0..n_tiers {
        let (line, class) = tokens.string()?;
        if class != "IntervalTier" {
            return Err(Error::MalformedLine {
                line,
                msg: format!("only interval tiers are supported, found {class:?}"),
            });
        }
        let (_, name) = tokens.string()?;
        tokens.number()?;
        tokens.number()?;
        let n = tokens.count()?;
        let kind = classify(&name);
        for _ in 0..n {
            let (line, start_s) = tokens.number()?;
            let (_, end_s) = tokens.number()?;
            let (_, label) = tokens.string()?;
            let Some(kind) = kind else { continue };
            // Empty sentence/word intervals are gaps; empty phones are silences.
            if kind != Tier::Phone && label.trim().is_empty() {
                continue;
            }
            let iv = RawInterval {
                line,
                start_s,
                end_s,
                label,
            };
            match kind {
                Tier::Sentence => tiers.sentences.push(iv),
                Tier::Word => tiers.words.push(iv),
                Tier::Phone => tiers.phones.push(iv),
            }
        }
    }

    // Per-utterance TextGrids from forced aligners have no sentence tier.
    if tiers.sentences.is_empty() && !tiers.words.is_empty() {
        let first = &tiers.words[0];
        let last = &tiers.words[tiers.words.len() - 1];
        let text = tiers
            .words
            .iter()
            .map(|w| w.label.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        tiers.sentences.push(RawInterval {
            line: first.line,
            start_s: first.start_s,
            end_s: last.end_s,
            label: text,
        });
    }
    Ok(tiers)
}
