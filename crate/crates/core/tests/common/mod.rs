#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use artalign::corpus::{
    write_contours, write_norm_stats, AxisStats, ContourGeometry, ContourTrack, FrameMapping,
    NormStats, Units, ARTICULATORS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONDITIONS: [&str; 3] = ["M2M", "C2C", "M2C"];

/// Files for an eval/compare run: one reference, one prediction per
/// condition, all normalized, plus the statistics to bring them to mm.
pub struct ContourFixture {
    pub stats: PathBuf,
    pub reference: PathBuf,
    pub predictions: Vec<PathBuf>,
}

pub fn norm_stats(seed: u64) -> NormStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NormStats {
        articulators: ARTICULATORS
            .iter()
            .map(|a| {
                let mut axis = || AxisStats {
                    mean: rng.gen_range(40.0..90.0),
                    std: rng.gen_range(3.0..7.0),
                };
                (a.to_string(), [axis(), axis()])
            })
            .collect(),
        pixel_size_mm: 1.62,
    }
}

/// Predictions are the reference plus uniform noise of the given
/// half-widths (normalized units), one per condition.
pub fn contour_fixture(dir: &Path, n_frames: usize, noise: &[f64]) -> ContourFixture {
    let geometry = ContourGeometry::default();
    let per_frame = geometry.values_per_frame();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth: Vec<f64> = (0..n_frames * per_frame).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let write = |name: &str, data: Vec<f64>| {
        let track = ContourTrack::new(20.0, geometry.clone(), Units::Normalized, data).unwrap();
        let path = dir.join(name);
        write_contours(&track, BufWriter::new(File::create(&path).unwrap())).unwrap();
        path
    };
    let stats = dir.join("stats.csv");
    write_norm_stats(&norm_stats(3), BufWriter::new(File::create(&stats).unwrap())).unwrap();
    let reference = write("ref.csv", truth.clone());
    let predictions = noise
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
            let data = truth.iter().map(|v| v + rng.gen_range(-h..h)).collect();
            write(&format!("pred_{k}.csv"), data)
        })
        .collect();
    ContourFixture {
        stats,
        reference,
        predictions,
    }
}

/// Fraction of frames mapped by either side that both map within ±`tol`
/// target frames, with the frame count.
pub fn frame_accuracy(truth: &FrameMapping, pred: &FrameMapping, tol: usize) -> (f64, usize) {
    let n = truth.entries.len().max(pred.entries.len());
    let (mut total, mut ok) = (0, 0);
    for i in 0..n {
        match (truth.target_of(i), pred.target_of(i)) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                total += 1;
                ok += usize::from(a.abs_diff(b) <= tol);
            }
            _ => total += 1,
        }
    }
    (ok as f64 / total.max(1) as f64, total)
}
