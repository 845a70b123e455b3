use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack added before flooring a frame position, so that times landing on a
/// frame boundary up to float rounding are attributed to the later frame.
const FRAME_SNAP: f64 = 1e-9;

/// Relates frame indices to times for one signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameClock {
    pub frame_rate_hz: f64,
    pub sample_rate_hz: f64,
    pub frame_period_samples: u64,
}

impl FrameClock {
    pub fn new(frame_rate_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::InvalidClock(format!("frame rate {frame_rate_hz} Hz")));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidClock(format!("sample rate {sample_rate_hz} Hz")));
        }
        let period = (sample_rate_hz / frame_rate_hz).round();
        if period < 1.0 {
            return Err(Error::InvalidClock(format!(
                "frame rate {frame_rate_hz} Hz exceeds sample rate {sample_rate_hz} Hz"
            )));
        }
        let effective = sample_rate_hz / period;
        if ((effective - frame_rate_hz) / frame_rate_hz).abs() > 1e-3 {
            return Err(Error::InvalidClock(format!(
                "{sample_rate_hz} Hz / {period} samples = {effective} Hz, not {frame_rate_hz} Hz"
            )));
        }
        Ok(FrameClock {
            frame_rate_hz,
            sample_rate_hz,
            frame_period_samples: period as u64,
        })
    }

    /// Frame index holding time `t`: `floor(t * fs / period)`.
    pub fn frame_at(&self, t: f64) -> i64 {
        (t * self.sample_rate_hz / self.frame_period_samples as f64 + FRAME_SNAP).floor() as i64
    }

    /// Number of frames needed to cover `duration_s` seconds.
    pub fn frames_covering(&self, duration_s: f64) -> usize {
        let n = (duration_s * self.frame_rate_hz - FRAME_SNAP).ceil();
        (n.max(1.0)) as usize
    }

    /// First frame whose mid-time is at or after `t`.
    pub fn first_frame_from(&self, t: f64) -> usize {
        let i = (t * self.frame_rate_hz - 0.5).ceil().max(0.0) as usize;
        // Correct for rounding in the closed form.
        if i > 0 && frame_mid_time(i - 1, self) >= t {
            i - 1
        } else if frame_mid_time(i, self) < t {
            i + 1
        } else {
            i
        }
    }
}

/// Center time of frame `idx`: `(idx + 0.5) / frame_rate`.
pub fn frame_mid_time(idx: usize, clock: &FrameClock) -> f64 {
    (idx as f64 + 0.5) / clock.frame_rate_hz
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clock(rate: f64) -> FrameClock {
        FrameClock::new(rate, 16_000.0).unwrap()
    }

    #[test]
    fn mid_times() {
        assert_eq!(frame_mid_time(0, &clock(20.0)), 0.025);
        assert!((frame_mid_time(99, &clock(20.0)) - 4.975).abs() < 1e-12);
        assert!((frame_mid_time(7, &clock(50.0)) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn periods() {
        assert_eq!(clock(20.0).frame_period_samples, 800);
        assert_eq!(clock(50.0).frame_period_samples, 320);
    }

    #[test]
    fn rejects_bad_clocks() {
        assert!(FrameClock::new(0.0, 16_000.0).is_err());
        assert!(FrameClock::new(-5.0, 16_000.0).is_err());
        assert!(FrameClock::new(50.0, f64::NAN).is_err());
        // 16000 / 320.5 is not representable by an integer period within 0.1%.
        assert!(FrameClock::new(16_000.0 / 320.5 * 1.003, 16_000.0).is_err());
        assert!(FrameClock::new(32_000.0, 16_000.0).is_err());
    }

    #[test]
    fn frame_at_inverts_mid_time() {
        let c = clock(50.0);
        for i in 0..10_000 {
            assert_eq!(c.frame_at(frame_mid_time(i, &c)), i as i64);
        }
    }

    #[test]
    fn first_frame_from_is_exact() {
        let c = clock(20.0);
        for k in 0..2000 {
            let t = k as f64 * 0.0137;
            let i = c.first_frame_from(t);
            assert!(frame_mid_time(i, &c) >= t);
            assert!(i == 0 || frame_mid_time(i - 1, &c) < t);
        }
    }
}
