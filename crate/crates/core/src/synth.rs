//! Seeded synthetic parallel corpora with a known frame warp, for checking
//! aligners end to end.

use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    default_silence_labels, frame_mid_time, FeatureSequence, FrameClock, FrameMapping,
    MappingEntry, Method, PhoneInterval, Provenance, SentenceInterval, UtteranceSet,
    WordInterval, DEFAULT_CLEAN_FRAME_RATE_HZ, DEFAULT_MRI_FRAME_RATE_HZ, DEFAULT_SAMPLE_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::phonetic::label_frames;

/// Phone inventory with the spelling used to build word texts.
const PHONES: [(&str, &str); 20] = [
    ("a", "a"),
    ("e", "e"),
    ("i", "i"),
    ("o", "o"),
    ("u", "ou"),
    ("y", "u"),
    ("ɛ", "è"),
    ("ɔ", "au"),
    ("p", "p"),
    ("t", "t"),
    ("k", "k"),
    ("b", "b"),
    ("d", "d"),
    ("g", "g"),
    ("m", "m"),
    ("n", "n"),
    ("l", "l"),
    ("ʁ", "r"),
    ("s", "s"),
    ("ʃ", "ch"),
];

const PAUSE_LABEL: &str = "sp";
const GAP_LABEL: &str = "sil";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_sentences: usize,
    pub words_per_sentence: [usize; 2],
    pub phones_per_word: [usize; 2],
    pub phone_duration_s: [f64; 2],
    /// Per-phone duration multiplier applied to build the clean corpus.
    pub warp: [f64; 2],
    /// Probability that a clean sentence gets word substitutions.
    pub error_rate: f64,
    pub silence_gap_s: [f64; 2],
    pub vocabulary_size: usize,
    /// Probability of a short pause between two words of a sentence.
    pub pause_rate: f64,
    /// Reorder the clean sentences.
    pub shuffle: bool,
    pub mri_frame_rate_hz: f64,
    pub clean_frame_rate_hz: f64,
    pub sample_rate_hz: f64,
    pub features: Option<FeatureStyle>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            n_sentences: 50,
            words_per_sentence: [3, 8],
            phones_per_word: [1, 6],
            phone_duration_s: [0.04, 0.15],
            warp: [0.5, 2.0],
            error_rate: 0.0,
            silence_gap_s: [0.2, 0.6],
            vocabulary_size: 80,
            pause_rate: 0.1,
            shuffle: true,
            mri_frame_rate_hz: DEFAULT_MRI_FRAME_RATE_HZ,
            clean_frame_rate_hz: DEFAULT_CLEAN_FRAME_RATE_HZ,
            sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
            features: None,
        }
    }
}

fn check_range<T: PartialOrd + Copy + std::fmt::Display + Default>(name: &str, r: [T; 2]) -> Result<()> {
    if r[0] > T::default() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} = [{}, {}]", r[0], r[1])))
    }
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SyntheticSpec =
            toml::from_str(text).map_err(|e| Error::MalformedHeader(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("words_per_sentence", self.words_per_sentence)?;
        check_range("phones_per_word", self.phones_per_word)?;
        check_range("phone_duration_s", self.phone_duration_s)?;
        check_range("warp", self.warp)?;
        check_range("silence_gap_s", self.silence_gap_s)?;
        if self.n_sentences == 0 {
            return Err(Error::InvalidConfig("n_sentences must be positive".into()));
        }
        if self.vocabulary_size < 2 {
            return Err(Error::InvalidConfig("vocabulary_size must be at least 2".into()));
        }
        for (name, p) in [("error_rate", self.error_rate), ("pause_rate", self.pause_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} = {p}")));
            }
        }
        self.mri_clock()?;
        self.clean_clock()?;
        if let Some(f) = &self.features {
            f.validate()?;
        }
        Ok(())
    }

    pub fn mri_clock(&self) -> Result<FrameClock> {
        FrameClock::new(self.mri_frame_rate_hz, self.sample_rate_hz)
    }

    pub fn clean_clock(&self) -> Result<FrameClock> {
        FrameClock::new(self.clean_frame_rate_hz, self.sample_rate_hz)
    }
}

/// Feature rendering used to give DTW something to align.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureStyle {
    pub dim: usize,
    pub frame_rate_hz: f64,
    /// Amplitude of a linear glide across each phone.
    pub glide: f64,
    /// Amplitude of uniform frame noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for FeatureStyle {
    fn default() -> Self {
        FeatureStyle {
            dim: 8,
            frame_rate_hz: DEFAULT_CLEAN_FRAME_RATE_HZ,
            glide: 0.5,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl FeatureStyle {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || !(self.frame_rate_hz > 0.0) || !(self.glide >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::InvalidConfig(format!("feature style {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub mri: UtteranceSet,
    pub clean: UtteranceSet,
    /// Ground-truth mapping from MRI frames to clean frames.
    pub truth: FrameMapping,
    /// Clean sentence index of each MRI sentence.
    pub clean_of: Vec<usize>,
    /// MRI sentences whose clean counterpart has substituted words.
    pub perturbed: Vec<usize>,
    /// Per MRI sentence, the word positions that were substituted.
    pub substituted: Vec<Vec<usize>>,
}

struct Word {
    text: String,
    phones: Vec<&'static str>,
}

fn vocabulary(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Vec<Word> {
    let mut words: Vec<Word> = Vec::new();
    let mut attempts = 0;
    while words.len() < spec.vocabulary_size {
        let n = rng.gen_range(spec.phones_per_word[0]..=spec.phones_per_word[1]);
        let picks: Vec<(&str, &str)> = (0..n).map(|_| PHONES[rng.gen_range(0..PHONES.len())]).collect();
        let text: String = picks.iter().map(|p| p.1).collect();
        attempts += 1;
        // Distinct spellings, unless the inventory is exhausted.
        if words.iter().any(|w| w.text == text) && attempts < 100 * spec.vocabulary_size {
            continue;
        }
        words.push(Word {
            text,
            phones: picks.iter().map(|p| p.0).collect(),
        });
    }
    words
}

/// Lays out one sentence from `start`, returning it with its pauses.
fn lay_out(
    words: &[usize],
    vocab: &[Word],
    durations: &[Vec<f64>],
    pauses_after: &[f64],
    start: f64,
) -> (SentenceInterval, Vec<PhoneInterval>) {
    let mut t = start;
    let mut out_words = Vec::new();
    let mut pauses = Vec::new();
    for (k, &w) in words.iter().enumerate() {
        let word_start = t;
        let phones = vocab[w]
            .phones
            .iter()
            .zip(&durations[k])
            .map(|(label, d)| {
                let p = PhoneInterval::new(*label, t, t + d);
                t += d;
                p
            })
            .collect();
        out_words.push(WordInterval {
            text: vocab[w].text.clone(),
            start_s: word_start,
            end_s: t,
            phones,
        });
        if pauses_after[k] > 0.0 {
            pauses.push(PhoneInterval::new(PAUSE_LABEL, t, t + pauses_after[k]));
            t += pauses_after[k];
        }
    }
    let text = out_words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
    (
        SentenceInterval {
            text,
            start_s: start,
            end_s: t,
            words: out_words,
        },
        pauses,
    )
}

/// Builds an MRI corpus and its warped, reordered and optionally perturbed
/// clean counterpart, with the analytic frame mapping between them.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = vocabulary(&mut rng, spec);
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.gen_range(r[0]..r[1]) };

    // Sentence word lists, distinct so every sentence has one exact match.
    let mut sentence_words: Vec<Vec<usize>> = Vec::new();
    let mut attempts = 0;
    while sentence_words.len() < spec.n_sentences {
        attempts += 1;
        if attempts > 1000 * spec.n_sentences {
            return Err(Error::InvalidConfig(
                "cannot draw that many distinct sentences from the vocabulary".into(),
            ));
        }
        let n = rng.gen_range(spec.words_per_sentence[0]..=spec.words_per_sentence[1]);
        let words: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab.len())).collect();
        let text = |ws: &[usize]| ws.iter().map(|&w| vocab[w].text.as_str()).collect::<Vec<_>>().join(" ");
        let t = text(&words);
        if sentence_words.iter().any(|s| text(s) == t) {
            continue;
        }
        sentence_words.push(words);
    }

    // MRI timing.
    let mut mri_sentences = Vec::new();
    let mut mri_pauses = Vec::new();
    let mut mri_durations = Vec::new();
    let mut t = uniform(&mut rng, spec.silence_gap_s);
    mri_pauses.push(PhoneInterval::new(GAP_LABEL, 0.0, t));
    for words in &sentence_words {
        let durations: Vec<Vec<f64>> = words
            .iter()
            .map(|&w| vocab[w].phones.iter().map(|_| uniform(&mut rng, spec.phone_duration_s)).collect())
            .collect();
        let pauses_after: Vec<f64> = (0..words.len())
            .map(|k| {
                let pause = k + 1 < words.len() && rng.gen_bool(spec.pause_rate);
                if pause { uniform(&mut rng, spec.phone_duration_s) } else { 0.0 }
            })
            .collect();
        let (s, p) = lay_out(words, &vocab, &durations, &pauses_after, t);
        t = s.end_s;
        let gap = uniform(&mut rng, spec.silence_gap_s);
        mri_pauses.extend(p);
        mri_pauses.push(PhoneInterval::new(GAP_LABEL, t, t + gap));
        t += gap;
        mri_sentences.push((s, pauses_after));
        mri_durations.push(durations);
    }

    // Clean order, substitutions and warped timing.
    let mut order: Vec<usize> = (0..spec.n_sentences).collect();
    if spec.shuffle {
        order.shuffle(&mut rng);
    }
    let mut clean_of = vec![0; spec.n_sentences];
    for (c, &m) in order.iter().enumerate() {
        clean_of[m] = c;
    }
    let mut substituted = vec![Vec::new(); spec.n_sentences];
    let mut perturbed = Vec::new();
    for m in 0..spec.n_sentences {
        if rng.gen_bool(spec.error_rate) {
            let n = sentence_words[m].len();
            let count = rng.gen_range(1..=n);
            let mut positions: Vec<usize> = (0..n).collect();
            positions.shuffle(&mut rng);
            positions.truncate(count);
            positions.sort_unstable();
            substituted[m] = positions;
            perturbed.push(m);
        }
    }

    let mut clean_sentences = Vec::new();
    let mut clean_pauses = Vec::new();
    let mut t = uniform(&mut rng, spec.silence_gap_s);
    clean_pauses.push(PhoneInterval::new(GAP_LABEL, 0.0, t));
    for &m in &order {
        let mut words = sentence_words[m].clone();
        let mut durations = mri_durations[m].clone();
        for &k in &substituted[m] {
            let old = words[k];
            let mut new = rng.gen_range(0..vocab.len() - 1);
            if new >= old {
                new += 1;
            }
            words[k] = new;
            durations[k] = vocab[new].phones.iter().map(|_| uniform(&mut rng, spec.phone_duration_s)).collect();
        }
        for d in durations.iter_mut().flatten() {
            *d *= uniform(&mut rng, spec.warp);
        }
        let pauses_after: Vec<f64> = mri_sentences[m]
            .1
            .iter()
            .map(|&p| if p > 0.0 { p * uniform(&mut rng, spec.warp) } else { 0.0 })
            .collect();
        let (s, p) = lay_out(&words, &vocab, &durations, &pauses_after, t);
        t = s.end_s;
        let gap = uniform(&mut rng, spec.silence_gap_s);
        clean_pauses.extend(p);
        clean_pauses.push(PhoneInterval::new(GAP_LABEL, t, t + gap));
        t += gap;
        clean_sentences.push(s);
    }

    let silence = default_silence_labels();
    let mri = UtteranceSet::new(
        mri_sentences.into_iter().map(|(s, _)| s).collect(),
        mri_pauses,
        silence.clone(),
    )?;
    let clean = UtteranceSet::new(clean_sentences, clean_pauses, silence)?;
    let truth = truth_mapping(&mri, &clean, &clean_of, &substituted, spec)?;
    Ok(SyntheticCorpus {
        mri,
        clean,
        truth,
        clean_of,
        perturbed,
        substituted,
    })
}

/// Frames whose mid-time lies in a word kept in the clean corpus map to the
/// same relative position of the clean phone. Everything else is unmapped.
fn truth_mapping(
    mri: &UtteranceSet,
    clean: &UtteranceSet,
    clean_of: &[usize],
    substituted: &[Vec<usize>],
    spec: &SyntheticSpec,
) -> Result<FrameMapping> {
    let (mc, cc) = (spec.mri_clock()?, spec.clean_clock()?);
    let n = mc.frames_covering(mri.total_duration_s);
    let n_clean = cc.frames_covering(clean.total_duration_s) as i64;
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
    label_frames(mri, &mc, &mut entries);
    for (sid, s) in mri.sentences.iter().enumerate() {
        let cs = &clean.sentences[clean_of[sid]];
        for (k, (mw, cw)) in s.words.iter().zip(&cs.words).enumerate() {
            if substituted[sid].contains(&k) {
                continue;
            }
            for (mp, cp) in mw.phones.iter().zip(&cw.phones) {
                let scale = (cp.end_s - cp.start_s) / (mp.end_s - mp.start_s);
                let mut i = mc.first_frame_from(mp.start_s);
                while i < n && mp.contains(frame_mid_time(i, &mc)) {
                    let t = cp.start_s + (frame_mid_time(i, &mc) - mp.start_s) * scale;
                    let raw = cc.frame_at(t);
                    let idx = raw.clamp(0, n_clean - 1);
                    entries[i].target_idx = Some(idx as usize);
                    entries[i].provenance.clamped = raw != idx;
                    i += 1;
                }
            }
        }
    }
    Ok(FrameMapping {
        source_frame_rate_hz: mc.frame_rate_hz,
        target_frame_rate_hz: cc.frame_rate_hz,
        entries,
    })
}

/// A fixed vector in `[-1, 1]^dim` for each label; silence maps to zeros.
fn label_vector(label: &str, dim: usize, salt: u64) -> Vec<f64> {
    let mut h = rustc_hash::FxHasher::default();
    label.hash(&mut h);
    salt.hash(&mut h);
    let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
    (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Renders one sentence as a feature sequence: each frame carries the
/// vector of the phone holding its mid-time, plus a glide along the phone
/// and optional noise. Frames start at the sentence start.
pub fn render_features(set: &UtteranceSet, sentence_id: usize, style: &FeatureStyle) -> Result<FeatureSequence> {
    style.validate()?;
    let s = set
        .sentences
        .get(sentence_id)
        .ok_or(Error::MissingFeatures { sentence_id })?;
    let phones: Vec<&PhoneInterval> = set
        .all_phones()
        .into_iter()
        .map(|(_, p)| p)
        .filter(|p| p.end_s > s.start_s && p.start_s < s.end_s)
        .collect();
    let n = ((s.end_s - s.start_s) * style.frame_rate_hz).ceil().max(1.0) as usize;
    let mut noise = ChaCha8Rng::seed_from_u64(style.seed ^ (sentence_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut data = Vec::with_capacity(n * style.dim);
    for k in 0..n {
        let t = s.start_s + (k as f64 + 0.5) / style.frame_rate_hz;
        let frame: Vec<f64> = match phones.iter().find(|p| p.contains(t)) {
            Some(p) if !set.is_silence(&p.label) => {
                let base = label_vector(&p.label, style.dim, 0);
                let dir = label_vector(&p.label, style.dim, 1);
                let r = (t - p.start_s) / (p.end_s - p.start_s) * 2.0 - 1.0;
                base.iter().zip(&dir).map(|(b, d)| b + style.glide * r * d).collect()
            }
            _ => vec![0.0; style.dim],
        };
        for v in frame {
            let jitter = if style.noise > 0.0 { noise.gen_range(-style.noise..style.noise) } else { 0.0 };
            data.push(v + jitter);
        }
    }
    FeatureSequence::new(style.frame_rate_hz, style.dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            n_sentences: 8,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = gen_synthetic(&small(3)).unwrap();
        let b = gen_synthetic(&small(3)).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&small(4)).unwrap();
        assert_ne!(a.mri, c.mri);
    }

    #[test]
    fn unit_warp_is_identity() {
        let spec = SyntheticSpec {
            warp: [1.0, 1.0],
            shuffle: false,
            clean_frame_rate_hz: 20.0,
            ..small(1)
        };
        let c = gen_synthetic(&spec).unwrap();
        // Same layout apart from the silence gaps, which are redrawn.
        for (m, cl) in c.mri.sentences.iter().zip(&c.clean.sentences) {
            assert_eq!(m.match_text(), cl.match_text());
        }
        let spec = SyntheticSpec {
            silence_gap_s: [0.3, 0.3],
            ..spec
        };
        let c = gen_synthetic(&spec).unwrap();
        assert_eq!(c.mri, c.clean);
        assert!(c.truth.n_mapped() > 0);
        for e in c.truth.mapped() {
            assert_eq!(e.target_idx, Some(e.source_idx));
        }
    }

    #[test]
    fn doubled_phones_double_positions() {
        let spec = SyntheticSpec {
            warp: [2.0, 2.0],
            ..small(2)
        };
        let c = gen_synthetic(&spec).unwrap();
        let mc = spec.mri_clock().unwrap();
        let cc = spec.clean_clock().unwrap();
        for (sid, s) in c.mri.sentences.iter().enumerate() {
            let cs = &c.clean.sentences[c.clean_of[sid]];
            assert_eq!(s.match_text(), cs.match_text());
            for (mp, cp) in s.phones().zip(cs.phones()) {
                assert!((cp.duration() - 2.0 * mp.duration()).abs() < 1e-9);
                let mut i = mc.first_frame_from(mp.start_s);
                while mp.contains(frame_mid_time(i, &mc)) {
                    let t = cp.start_s + 2.0 * (frame_mid_time(i, &mc) - mp.start_s);
                    assert_eq!(c.truth.target_of(i), Some(cc.frame_at(t) as usize));
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn perturbation_substitutes_words() {
        let spec = SyntheticSpec {
            error_rate: 1.0,
            ..small(5)
        };
        let c = gen_synthetic(&spec).unwrap();
        assert_eq!(c.perturbed.len(), 8);
        for (m, subs) in c.substituted.iter().enumerate() {
            let ms = &c.mri.sentences[m];
            let cs = &c.clean.sentences[c.clean_of[m]];
            for k in 0..ms.words.len() {
                assert_eq!(subs.contains(&k), ms.words[k].text != cs.words[k].text);
            }
        }
        // Frames in substituted words have no truth.
        let mc = spec.mri_clock().unwrap();
        for (m, subs) in c.substituted.iter().enumerate() {
            for &k in subs {
                let w = &c.mri.sentences[m].words[k];
                let mut i = mc.first_frame_from(w.start_s);
                while frame_mid_time(i, &mc) < w.end_s {
                    assert_eq!(c.truth.target_of(i), None);
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn spec_from_toml() {
        let spec = SyntheticSpec::from_toml(
            "seed = 9\nn_sentences = 12\nwarp = [0.5, 2.0]\nerror_rate = 0.2\n[features]\ndim = 4\n",
        )
        .unwrap();
        assert_eq!(spec.seed, 9);
        assert_eq!(spec.n_sentences, 12);
        assert_eq!(spec.features.unwrap().dim, 4);
        assert_eq!(spec.words_per_sentence, SyntheticSpec::default().words_per_sentence);
        assert!(SyntheticSpec::from_toml("seeds = 1").is_err());
        assert!(SyntheticSpec::from_toml("error_rate = 1.5").is_err());
        assert!(SyntheticSpec::from_toml("warp = [2.0, 1.0]").is_err());
    }

    #[test]
    fn rendered_features_follow_phones() {
        let c = gen_synthetic(&small(6)).unwrap();
        let style = FeatureStyle::default();
        let f = render_features(&c.mri, 0, &style).unwrap();
        let s = &c.mri.sentences[0];
        assert_eq!(f.n_frames(), ((s.end_s - s.start_s) * 50.0).ceil() as usize);
        assert_eq!(f, render_features(&c.mri, 0, &style).unwrap());
        let flat = FeatureStyle { glide: 0.0, ..style };
        let g = render_features(&c.mri, 0, &flat).unwrap();
        let first = &s.words[0].phones[0];
        let t = s.start_s + 0.5 / 50.0;
        if first.contains(t) {
            assert_eq!(g.frame(0), label_vector(&first.label, 8, 0).as_slice());
        }
    }
}
