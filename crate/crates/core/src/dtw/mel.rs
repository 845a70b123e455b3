use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub sample_rate_hz: f64,
    /// Added to every band energy before the logarithm.
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            window_s: 0.025,
            hop_s: 0.020,
            n_mels: 40,
            sample_rate_hz: 16_000.0,
            floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return bad(format!("sample rate {}", self.sample_rate_hz));
        }
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s && self.window_s.is_finite()) {
            return bad(format!("hop {} s with window {} s", self.hop_s, self.window_s));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return bad(format!("log floor {}", self.floor));
        }
        if self.window_len() < 2 || self.hop_len() == 0 {
            return bad(format!(
                "window of {} samples, hop of {}",
                self.window_len(),
                self.hop_len()
            ));
        }
        Ok(())
    }

    pub fn window_len(&self) -> usize {
        (self.window_s * self.sample_rate_hz).round() as usize
    }

    pub fn hop_len(&self) -> usize {
        (self.hop_s * self.sample_rate_hz).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.window_len().next_power_of_two()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK triangular filters from 0 Hz to Nyquist, one row of `n_fft/2 + 1`
/// weights per band.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_fft = cfg.n_fft();
    let n_bins = n_fft / 2 + 1;
    let top = hz_to_mel(cfg.sample_rate_hz / 2.0);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|k| mel_to_hz(top * k as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    (0..cfg.n_mels)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate_hz / n_fft as f64;
                    if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}

/// Log mel band energies of the power spectrum, one frame per hop.
pub fn extract_logmel(audio: &[f64], cfg: &MelConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    if let Some(k) = audio.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { line: k + 1 });
    }
    let (win, hop) = (cfg.window_len(), cfg.hop_len());
    if audio.len() < win {
        return Err(Error::AudioTooShort {
            samples: audio.len(),
            window: win,
        });
    }
    let n_frames = (audio.len() - win) / hop + 1;
    let n_fft = cfg.n_fft();
    let window = hann(win);
    // Sparse filters: first nonzero bin and the weights from there on.
    let filters: Vec<(usize, Vec<f64>)> = mel_filterbank(cfg)
        .into_iter()
        .map(|row| {
            let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&w| w > 0.0).map_or(0, |l| l + 1);
            (first, row[first..last.max(first)].to_vec())
        })
        .collect();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; n_fft / 2 + 1];
    let mut data = Vec::with_capacity(n_frames * cfg.n_mels);
    for f in 0..n_frames {
        let frame = &audio[f * hop..f * hop + win];
        for (k, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(if k < win { frame[k] * window[k] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (first, weights) in &filters {
            let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
            data.push((e + cfg.floor).ln());
        }
    }
    FeatureSequence::new(1.0 / cfg.hop_s, cfg.n_mels, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, seconds: f64, sr: f64) -> Vec<f64> {
        (0..(seconds * sr) as usize)
            .map(|n| (2.0 * PI * freq * n as f64 / sr).sin())
            .collect()
    }

    #[test]
    fn silence_is_the_floor() {
        let cfg = MelConfig::default();
        let f = extract_logmel(&vec![0.0; 16_000], &cfg).unwrap();
        assert_eq!(f.n_frames(), 49);
        assert_eq!(f.dim, 40);
        assert_eq!(f.frame_rate_hz, 50.0);
        assert!(f.as_slice().iter().all(|&v| v == cfg.floor.ln()));
    }

    #[test]
    fn frame_count() {
        let cfg = MelConfig::default();
        for n in [400, 719, 720, 1000, 16_000] {
            let f = extract_logmel(&vec![0.1; n], &cfg).unwrap();
            assert_eq!(f.n_frames(), (n - 400) / 320 + 1);
        }
        assert!(matches!(
            extract_logmel(&[0.0; 399], &cfg),
            Err(Error::AudioTooShort { samples: 399, window: 400 })
        ));
    }

    #[test]
    fn matches_direct_dft() {
        let cfg = MelConfig::default();
        let audio = sine(1000.0, 0.2, cfg.sample_rate_hz);
        let feats = extract_logmel(&audio, &cfg).unwrap();
        let fb = mel_filterbank(&cfg);
        let n_fft = cfg.n_fft();
        let hop = cfg.hop_len();
        let win = cfg.window_len();
        for f in [0, 3] {
            let frame = &audio[f * hop..f * hop + win];
            let power: Vec<f64> = (0..=n_fft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, x) in frame.iter().enumerate() {
                        let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos();
                        let phase = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                        re += x * w * phase.cos();
                        im += x * w * phase.sin();
                    }
                    re * re + im * im
                })
                .collect();
            for (b, row) in fb.iter().enumerate() {
                let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                let expect = (e + cfg.floor).ln();
                let got = feats.frame(f)[b];
                assert!((got - expect).abs() < 1e-8 * expect.abs().max(1.0), "band {b}");
            }
        }
    }

    #[test]
    fn sine_peaks_in_its_band() {
        let cfg = MelConfig::default();
        let feats = extract_logmel(&sine(1000.0, 0.5, cfg.sample_rate_hz), &cfg).unwrap();
        let fb = mel_filterbank(&cfg);
        let bin = (1000.0 * cfg.n_fft() as f64 / cfg.sample_rate_hz) as usize;
        let band = (0..cfg.n_mels)
            .max_by(|&a, &b| fb[a][bin].total_cmp(&fb[b][bin]))
            .unwrap();
        for f in 1..feats.n_frames() - 1 {
            let row = feats.frame(f);
            let top = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(top, band, "frame {f}");
        }
    }

    #[test]
    fn doubling_amplitude_adds_log_four() {
        let cfg = MelConfig {
            floor: 1e-300,
            ..MelConfig::default()
        };
        let a: Vec<f64> = (0..4000).map(|n| ((n * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let fa = extract_logmel(&a, &cfg).unwrap();
        let fb = extract_logmel(&b, &cfg).unwrap();
        for (x, y) in fa.as_slice().iter().zip(fb.as_slice()) {
            assert!((y - x - 4f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let audio = vec![0.0; 1000];
        for cfg in [
            MelConfig { hop_s: 0.03, ..MelConfig::default() },
            MelConfig { n_mels: 0, ..MelConfig::default() },
            MelConfig { floor: 0.0, ..MelConfig::default() },
        ] {
            assert!(matches!(extract_logmel(&audio, &cfg), Err(Error::InvalidConfig(_))));
        }
        let mut audio = audio;
        audio[10] = f64::NAN;
        assert!(extract_logmel(&audio, &MelConfig::default()).is_err());
    }
}
