//! Dynamic time warping over feature sequences, as a baseline aligner that
//! emits the same frame mapping as the phonetic aligner.

mod mel;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use mel::{extract_logmel, hz_to_mel, mel_filterbank, mel_to_hz, MelConfig};

use crate::corpus::{
    frame_mid_time, FeatureSequence, FrameClock, FrameMapping, MappingEntry, Method, Provenance,
};
use crate::error::{Error, Result};
use crate::phonetic::PairingRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpingPath {
    pub steps: Vec<(usize, usize)>,
    pub total_cost: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

const DIAG: u8 = 0;
const UP: u8 = 1;
const LEFT: u8 = 2;

/// Minimum-cost warping path with steps (1,1), (1,0) and (0,1). With a band
/// radius `r`, cell `(i, j)` is admissible when `|i·m/n − j| ≤ r`. Equal
/// predecessors resolve to the diagonal first, then (1,0).
pub fn dtw(x: &FeatureSequence, y: &FeatureSequence, band: Option<usize>) -> Result<WarpingPath> {
    if x.dim != y.dim {
        return Err(Error::DimensionMismatch {
            context: "DTW feature dimension".into(),
            expected: x.dim,
            found: y.dim,
        });
    }
    let (n, m) = (x.n_frames(), y.n_frames());
    // |i·m/n − j| ≤ r  ⇔  |i·m − j·n| ≤ r·n, kept in integers.
    let admissible = |i: usize, j: usize| match band {
        None => true,
        Some(r) => (i as i128 * m as i128 - j as i128 * n as i128).abs() <= r as i128 * n as i128,
    };

    let mut acc = vec![f64::INFINITY; n * m];
    let mut step = vec![DIAG; n * m];
    for i in 0..n {
        let xi = x.frame(i);
        for j in 0..m {
            if !admissible(i, j) {
                continue;
            }
            let d = euclidean(xi, y.frame(j));
            if i == 0 && j == 0 {
                acc[0] = d;
                continue;
            }
            let mut best = f64::INFINITY;
            let mut mv = DIAG;
            if i > 0 && j > 0 {
                best = acc[(i - 1) * m + j - 1];
            }
            if i > 0 && acc[(i - 1) * m + j] < best {
                best = acc[(i - 1) * m + j];
                mv = UP;
            }
            if j > 0 && acc[i * m + j - 1] < best {
                best = acc[i * m + j - 1];
                mv = LEFT;
            }
            acc[i * m + j] = best + d;
            step[i * m + j] = mv;
        }
    }
    let total_cost = acc[n * m - 1];
    if !total_cost.is_finite() {
        return Err(Error::BandInfeasible {
            radius: band.unwrap_or(0),
        });
    }

    let (mut i, mut j) = (n - 1, m - 1);
    let mut steps = vec![(i, j)];
    while (i, j) != (0, 0) {
        match step[i * m + j] {
            DIAG => (i, j) = (i - 1, j - 1),
            UP => i -= 1,
            _ => j -= 1,
        }
        steps.push((i, j));
    }
    steps.reverse();
    Ok(WarpingPath { steps, total_cost })
}

/// Collapses a path to one target per source index: the lower median of
/// the target indices paired with it.
pub fn path_to_frame_mapping(path: &WarpingPath, src_rate_hz: f64, tgt_rate_hz: f64) -> FrameMapping {
    let mut entries = Vec::new();
    let mut k = 0;
    while k < path.steps.len() {
        let i = path.steps[k].0;
        let run = path.steps[k..].iter().take_while(|s| s.0 == i).count();
        // Targets along a path are non-decreasing, so the run is sorted.
        let median = path.steps[k + (run - 1) / 2].1;
        entries.push(MappingEntry {
            source_idx: i,
            target_idx: Some(median),
            provenance: Provenance {
                phone: String::new(),
                sentence_id: None,
                method: Method::Dtw,
                clamped: false,
            },
        });
        k += run;
    }
    FrameMapping {
        source_frame_rate_hz: src_rate_hz,
        target_frame_rate_hz: tgt_rate_hz,
        entries,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwConfig {
    pub band: Option<usize>,
    pub mri_clock: FrameClock,
    pub clean_clock: FrameClock,
    /// Frame counts; derived from the pairing's sentence ends when absent.
    pub mri_n_frames: Option<usize>,
    pub clean_n_frames: Option<usize>,
}

/// Runs DTW on each paired sentence and places the result on the corpus
/// frame grids.
///
/// Each source frame is located in the MRI sentence's feature sequence by
/// its mid-time. The warped target feature frame, plus the same offset
/// within the frame, gives a clean time that is floored to a clean frame.
/// Frames of unmatched sentences stay unmapped.
pub fn align_corpus_dtw(
    mri_feats: &BTreeMap<usize, FeatureSequence>,
    clean_feats: &BTreeMap<usize, FeatureSequence>,
    rows: &[PairingRow],
    cfg: &DtwConfig,
) -> Result<FrameMapping> {
    let n_src = cfg.mri_n_frames.unwrap_or_else(|| {
        let end = rows.iter().map(|r| r.mri_end_s).fold(0.0, f64::max);
        cfg.mri_clock.frames_covering(end)
    });
    let n_tgt = cfg.clean_n_frames.unwrap_or_else(|| {
        let end = rows
            .iter()
            .filter_map(|r| r.clean.map(|c| c.end_s))
            .fold(0.0, f64::max);
        cfg.clean_clock.frames_covering(end)
    });
    let mut entries: Vec<MappingEntry> = (0..n_src)
        .map(|i| MappingEntry {
            source_idx: i,
            target_idx: None,
            provenance: Provenance {
                phone: String::new(),
                sentence_id: None,
                method: Method::Dtw,
                clamped: false,
            },
        })
        .collect();

    for row in rows {
        let frames = || {
            let first = cfg.mri_clock.first_frame_from(row.mri_start_s);
            (first..n_src).take_while(|&i| frame_mid_time(i, &cfg.mri_clock) < row.mri_end_s)
        };
        for i in frames() {
            entries[i].provenance.sentence_id = Some(row.mri_sentence_id);
        }
        let Some(clean) = row.clean else { continue };
        let x = mri_feats.get(&row.mri_sentence_id).ok_or(Error::MissingFeatures {
            sentence_id: row.mri_sentence_id,
        })?;
        let y = clean_feats.get(&clean.sentence_id).ok_or(Error::MissingFeatures {
            sentence_id: clean.sentence_id,
        })?;
        let warp = path_to_frame_mapping(&dtw(x, y, cfg.band)?, x.frame_rate_hz, y.frame_rate_hz);
        let last_k = x.n_frames() - 1;
        for i in frames() {
            let pos = (frame_mid_time(i, &cfg.mri_clock) - row.mri_start_s) * x.frame_rate_hz;
            let k = (pos.floor().max(0.0) as usize).min(last_k);
            let within = (pos - k as f64).clamp(0.0, 1.0);
            let j = warp.entries[k].target_idx.expect("DTW maps every source frame");
            let t = clean.start_s + (j as f64 + within) / y.frame_rate_hz;
            let raw = cfg.clean_clock.frame_at(t);
            let idx = raw.clamp(0, n_tgt.max(1) as i64 - 1);
            let e = &mut entries[i];
            e.target_idx = Some(idx as usize);
            e.provenance.clamped = idx != raw;
        }
    }
    Ok(FrameMapping {
        source_frame_rate_hz: cfg.mri_clock.frame_rate_hz,
        target_frame_rate_hz: cfg.clean_clock.frame_rate_hz,
        entries,
    })
}
