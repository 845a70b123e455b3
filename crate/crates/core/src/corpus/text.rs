use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Normalizes word and sentence text for equality tests.
///
/// NFC, lowercase, punctuation replaced by spaces (apostrophes and hyphens
/// survive between two word characters), whitespace runs collapsed, trimmed.
pub fn normalize_text(raw: &str) -> String {
    let chars: Vec<char> = raw
        .nfc()
        .flat_map(char::to_lowercase)
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .collect();
    let is_word = |c: char| c.is_alphanumeric() || is_combining_mark(c);
    let mut out = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        let keep = if is_word(c) {
            true
        } else if c == '\'' || c == '-' {
            let before = i > 0 && is_word(chars[i - 1]);
            let after = chars.get(i + 1).is_some_and(|&n| is_word(n));
            before && after
        } else {
            false
        };
        out.push(if keep { c } else { ' ' });
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Phone labels only get NFC and trimming: phonetic alphabets are case
/// sensitive and use symbols that word normalization would strip.
pub fn normalize_label(raw: &str) -> String {
    raw.trim().nfc().collect()
}

/// Shortest round-trip decimal form of `t`, padded to at least three
/// fractional digits.
pub fn format_seconds(t: f64) -> String {
    let mut s = format!("{t}");
    let frac = match s.find('.') {
        Some(dot) => s.len() - dot - 1,
        None => {
            s.push('.');
            0
        }
    };
    for _ in frac..3 {
        s.push('0');
    }
    s
}
