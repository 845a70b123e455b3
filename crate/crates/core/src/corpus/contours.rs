use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ARTICULATORS, DEFAULT_MRI_FRAME_RATE_HZ, DEFAULT_PIXEL_SIZE_MM, DEFAULT_POINTS_PER_ARTICULATOR};
use crate::error::{Error, Result};

const CONTOUR_HEADER: &str = "frame,articulator,point,x,y";
const STATS_HEADER: &str = "articulator,axis,mean,std";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Units {
    Normalized,
    Pixels,
    Mm,
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Units::Normalized => "NORMALIZED",
            Units::Pixels => "PIXELS",
            Units::Mm => "MM",
        })
    }
}

impl FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NORMALIZED" => Ok(Units::Normalized),
            "PIXELS" => Ok(Units::Pixels),
            "MM" => Ok(Units::Mm),
            other => Err(Error::MalformedHeader(format!("unknown units {other:?}"))),
        }
    }
}

/// Articulator names and points per contour.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContourGeometry {
    pub articulators: Vec<String>,
    pub n_points: usize,
}

impl Default for ContourGeometry {
    fn default() -> Self {
        ContourGeometry {
            articulators: ARTICULATORS.iter().map(|s| s.to_string()).collect(),
            n_points: DEFAULT_POINTS_PER_ARTICULATOR,
        }
    }
}

impl ContourGeometry {
    /// Coordinates per frame: articulators × points × 2.
    pub fn values_per_frame(&self) -> usize {
        self.articulators.len() * self.n_points * 2
    }

    pub fn values_per_articulator(&self) -> usize {
        self.n_points * 2
    }
}

/// Per-frame articulator contours, laid out as
/// `[frame][articulator][point][x, y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourTrack {
    pub frame_rate_hz: f64,
    pub geometry: ContourGeometry,
    pub units: Units,
    data: Vec<f64>,
}

impl ContourTrack {
    pub fn new(
        frame_rate_hz: f64,
        geometry: ContourGeometry,
        units: Units,
        data: Vec<f64>,
    ) -> Result<Self> {
        let per_frame = geometry.values_per_frame();
        if per_frame == 0 || data.len() % per_frame != 0 {
            return Err(Error::DimensionMismatch {
                context: "contour frame".into(),
                expected: per_frame,
                found: data.len() % per_frame.max(1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            let k = data.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFiniteValue { line: k / 2 + 2 });
        }
        Ok(ContourTrack {
            frame_rate_hz,
            geometry,
            units,
            data,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / self.geometry.values_per_frame()
    }

    pub fn n_articulators(&self) -> usize {
        self.geometry.articulators.len()
    }

    /// The `points × 2` coordinates of one articulator in one frame.
    pub fn articulator(&self, frame: usize, art: usize) -> &[f64] {
        let per = self.geometry.values_per_articulator();
        let start = frame * self.geometry.values_per_frame() + art * per;
        &self.data[start..start + per]
    }

    pub fn point(&self, frame: usize, art: usize, point: usize) -> (f64, f64) {
        let a = self.articulator(frame, art);
        (a[2 * point], a[2 * point + 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Applies `f(articulator, axis, value)` to every coordinate.
    pub fn map_values(&self, units: Units, f: impl Fn(usize, usize, f64) -> f64) -> ContourTrack {
        let per_art = self.geometry.values_per_articulator();
        let n_art = self.n_articulators();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let art = (k / per_art) % n_art;
                f(art, k % 2, v)
            })
            .collect();
        ContourTrack {
            frame_rate_hz: self.frame_rate_hz,
            geometry: self.geometry.clone(),
            units,
            data,
        }
    }
}

pub fn parse_contours<R: BufRead>(source: R) -> Result<ContourTrack> {
    parse_contours_with(source, &ContourGeometry::default())
}

/// Parses a contour CSV. Rows must be exhaustive and sorted by
/// (frame, articulator in geometry order, point). An optional
/// `# units=<U> rate_hz=<r>` preamble precedes the header; the defaults are
/// NORMALIZED units at 20 Hz.
pub fn parse_contours_with<R: BufRead>(source: R, geometry: &ContourGeometry) -> Result<ContourTrack> {
    let mut units = Units::Normalized;
    let mut rate = DEFAULT_MRI_FRAME_RATE_HZ;
    let per_art = geometry.n_points;
    let n_art = geometry.articulators.len();
    let rows_per_frame = per_art * n_art;
    let mut data = Vec::new();
    let mut row = 0usize;
    let mut saw_header = false;

    for (k, line) in source.lines().enumerate() {
        let line_no = k + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if !saw_header {
            if let Some(pre) = line.strip_prefix('#') {
                for kv in pre.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("units", u)) => units = u.parse()?,
                        Some(("rate_hz", r)) => {
                            rate = r
                                .parse()
                                .ok()
                                .filter(|v: &f64| v.is_finite() && *v > 0.0)
                                .ok_or_else(|| Error::MalformedHeader(format!("bad rate {r:?}")))?
                        }
                        _ => return Err(Error::MalformedHeader(format!("bad preamble field {kv:?}"))),
                    }
                }
                continue;
            }
            if line != CONTOUR_HEADER {
                return Err(Error::MalformedHeader(format!(
                    "expected {CONTOUR_HEADER:?}, found {line:?}"
                )));
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |msg: String| Error::MalformedLine { line: line_no, msg };
        if fields.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|_| bad(format!("invalid frame {:?}", fields[0])))?;
        let art = geometry
            .articulators
            .iter()
            .position(|a| a == fields[1])
            .ok_or_else(|| bad(format!("unknown articulator {:?}", fields[1])))?;
        let point: usize = fields[2]
            .parse()
            .map_err(|_| bad(format!("invalid point {:?}", fields[2])))?;
        if point >= per_art {
            return Err(bad(format!("point {point} out of range 0..{per_art}")));
        }
        let expected = (row / rows_per_frame, (row / per_art) % n_art, row % per_art);
        if frame > expected.0 {
            return Err(Error::DimensionMismatch {
                context: format!("contour frame {}", expected.0),
                expected: geometry.values_per_frame(),
                found: (row % rows_per_frame) * 2,
            });
        }
        if (frame, art, point) != expected {
            return Err(bad(format!(
                "row out of order: expected frame {} {} point {}",
                expected.0, geometry.articulators[expected.1], expected.2
            )));
        }
        for f in &fields[3..] {
            let v: f64 = f
                .parse()
                .map_err(|_| bad(format!("invalid coordinate {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { line: line_no });
            }
            data.push(v);
        }
        row += 1;
    }
    if !saw_header {
        return Err(Error::MalformedHeader("missing header line".into()));
    }
    if row == 0 {
        return Err(Error::DimensionMismatch {
            context: "contour track".into(),
            expected: geometry.values_per_frame(),
            found: 0,
        });
    }
    if row % rows_per_frame != 0 {
        return Err(Error::DimensionMismatch {
            context: format!("contour frame {}", row / rows_per_frame),
            expected: geometry.values_per_frame(),
            found: (row % rows_per_frame) * 2,
        });
    }
    ContourTrack::new(rate, geometry.clone(), units, data)
}

pub fn write_contours<W: Write>(track: &ContourTrack, mut out: W) -> Result<()> {
    writeln!(out, "# units={} rate_hz={}", track.units, track.frame_rate_hz)?;
    writeln!(out, "{CONTOUR_HEADER}")?;
    for f in 0..track.n_frames() {
        for (a, name) in track.geometry.articulators.iter().enumerate() {
            for p in 0..track.geometry.n_points {
                let (x, y) = track.point(f, a, p);
                writeln!(out, "{f},{name},{p},{x},{y}")?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-articulator, per-axis z-score statistics in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// `(articulator, [x, y])` in file order.
    pub articulators: Vec<(String, [AxisStats; 2])>,
    pub pixel_size_mm: f64,
}

impl NormStats {
    pub fn get(&self, articulator: &str) -> Option<&[AxisStats; 2]> {
        self.articulators
            .iter()
            .find(|(name, _)| name == articulator)
            .map(|(_, s)| s)
    }
}

pub fn parse_norm_stats<R: BufRead>(source: R) -> Result<NormStats> {
    let mut lines = source.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end_matches('\r') != STATS_HEADER {
        return Err(Error::MalformedHeader(format!(
            "expected {STATS_HEADER:?}, found {header:?}"
        )));
    }
    let mut partial: Vec<(String, [Option<AxisStats>; 2])> = Vec::new();
    let mut pixel_size = None;
    let mut last_line = 1;
    for (k, line) in lines.enumerate() {
        let line_no = k + 2;
        last_line = line_no;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::MalformedLine { line: line_no, msg };
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| bad(format!("invalid number {s:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteValue { line: line_no })
            }
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields[0] == "pixel_size_mm" {
            if fields.len() != 2 || pixel_size.is_some() {
                return Err(bad("malformed pixel_size_mm line".into()));
            }
            let v = num(fields[1])?;
            if v <= 0.0 {
                return Err(bad(format!("pixel size {v} must be positive")));
            }
            pixel_size = Some(v);
            continue;
        }
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let axis = match fields[1] {
            "x" => 0,
            "y" => 1,
            other => return Err(bad(format!("unknown axis {other:?}"))),
        };
        let stats = AxisStats {
            mean: num(fields[2])?,
            std: num(fields[3])?,
        };
        if stats.std <= 0.0 {
            return Err(bad(format!("std {} must be positive", stats.std)));
        }
        let idx = match partial.iter().position(|(n, _)| n == fields[0]) {
            Some(i) => i,
            None => {
                partial.push((fields[0].to_string(), [None, None]));
                partial.len() - 1
            }
        };
        if partial[idx].1[axis].replace(stats).is_some() {
            return Err(bad(format!("duplicate stats for {} {}", fields[0], fields[1])));
        }
    }
    let pixel_size_mm = pixel_size.ok_or(Error::MalformedLine {
        line: last_line,
        msg: "missing pixel_size_mm line".into(),
    })?;
    let articulators = partial
        .into_iter()
        .map(|(name, [x, y])| match (x, y) {
            (Some(x), Some(y)) => Ok((name, [x, y])),
            _ => Err(Error::MissingStats(name)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormStats {
        articulators,
        pixel_size_mm,
    })
}

pub fn write_norm_stats<W: Write>(stats: &NormStats, mut out: W) -> Result<()> {
    writeln!(out, "{STATS_HEADER}")?;
    for (name, axes) in &stats.articulators {
        for (axis, s) in ["x", "y"].iter().zip(axes) {
            writeln!(out, "{name},{axis},{},{}", s.mean, s.std)?;
        }
    }
    writeln!(out, "pixel_size_mm,{}", stats.pixel_size_mm)?;
    Ok(())
}

impl Default for NormStats {
    /// Identity statistics (mean 0, std 1 px) for the default geometry.
    fn default() -> Self {
        NormStats {
            articulators: ARTICULATORS
                .iter()
                .map(|a| (a.to_string(), [AxisStats { mean: 0.0, std: 1.0 }; 2]))
                .collect(),
            pixel_size_mm: DEFAULT_PIXEL_SIZE_MM,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(n_frames: usize, f: impl Fn(usize) -> f64) -> ContourTrack {
        let g = ContourGeometry::default();
        let data = (0..n_frames * g.values_per_frame()).map(f).collect();
        ContourTrack::new(20.0, g, Units::Normalized, data).unwrap()
    }

    fn to_csv(t: &ContourTrack) -> String {
        let mut out = Vec::new();
        write_contours(t, &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    #[test]
    fn two_frame_track() {
        let t = track(2, |k| k as f64 * 0.25 - 3.0);
        let text = to_csv(&t);
        assert_eq!(text.lines().count(), 2 + 2 * 8 * 50);
        let back = parse_contours(text.as_bytes()).unwrap();
        assert_eq!(back.n_frames(), 2);
        assert_eq!(back, t);
        assert_eq!(back.point(1, 7, 49), t.point(1, 7, 49));
    }

    #[test]
    fn missing_rows_are_dimension_mismatch() {
        let text = to_csv(&track(2, |k| k as f64));
        // Drop the last point of frame 0's last articulator.
        let lines: Vec<&str> = text.lines().collect();
        let cut: Vec<&str> = lines
            .iter()
            .copied()
            .filter(|l| *l != lines[2 + 399])
            .collect();
        assert!(matches!(
            parse_contours(cut.join("\n").as_bytes()),
            Err(Error::DimensionMismatch { expected: 800, found: 798, .. })
        ));
        let truncated = lines[..lines.len() - 1].join("\n");
        assert!(matches!(
            parse_contours(truncated.as_bytes()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn contour_errors() {
        let text = to_csv(&track(1, |k| k as f64));
        let swapped = text.replacen("0,tongue,3,", "0,tongue,4,", 1);
        assert!(matches!(
            parse_contours(swapped.as_bytes()),
            Err(Error::MalformedLine { .. })
        ));
        let unknown = text.replace("tongue", "uvula");
        assert!(matches!(
            parse_contours(unknown.as_bytes()),
            Err(Error::MalformedLine { .. })
        ));
        let nan = text.replacen("0,epiglottis,0,", "0,epiglottis,0,NaN,", 1);
        assert!(parse_contours(nan.as_bytes()).is_err());
        let inf = text.replacen(",epiglottis,0,100,101", ",epiglottis,0,inf,101", 1);
        assert!(matches!(parse_contours(inf.as_bytes()), Err(Error::NonFiniteValue { .. })));
        assert!(matches!(
            parse_contours("frame,art\n".as_bytes()),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn preamble_sets_units() {
        let mut t = track(1, |k| k as f64);
        t.units = Units::Mm;
        t.frame_rate_hz = 25.0;
        assert_eq!(parse_contours(to_csv(&t).as_bytes()).unwrap(), t);
        let bare = to_csv(&t).split_once('\n').unwrap().1.to_string();
        let back = parse_contours(bare.as_bytes()).unwrap();
        assert_eq!(back.units, Units::Normalized);
        assert_eq!(back.frame_rate_hz, 20.0);
    }

    #[test]
    fn small_geometry() {
        let g = ContourGeometry {
            articulators: vec!["tongue".into()],
            n_points: 2,
        };
        let text = "frame,articulator,point,x,y\n0,tongue,0,1,2\n0,tongue,1,3,4\n";
        let t = parse_contours_with(text.as_bytes(), &g).unwrap();
        assert_eq!(t.articulator(0, 0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn norm_stats_parse_and_errors() {
        let text = "articulator,axis,mean,std\ntongue,x,10,2\ntongue,y,-3.5,0.5\npixel_size_mm,1.62\n";
        let s = parse_norm_stats(text.as_bytes()).unwrap();
        assert_eq!(s.pixel_size_mm, 1.62);
        assert_eq!(s.get("tongue").unwrap()[1], AxisStats { mean: -3.5, std: 0.5 });
        let mut out = Vec::new();
        write_norm_stats(&s, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);

        let no_pixel = "articulator,axis,mean,std\ntongue,x,10,2\ntongue,y,1,1\n";
        assert!(matches!(parse_norm_stats(no_pixel.as_bytes()), Err(Error::MalformedLine { .. })));
        let zero_std = "articulator,axis,mean,std\ntongue,x,10,0\n";
        assert!(matches!(parse_norm_stats(zero_std.as_bytes()), Err(Error::MalformedLine { line: 2, .. })));
        let half = "articulator,axis,mean,std\ntongue,x,10,2\npixel_size_mm,1\n";
        assert!(matches!(parse_norm_stats(half.as_bytes()), Err(Error::MissingStats(_))));
        assert!(matches!(parse_norm_stats("x\n".as_bytes()), Err(Error::MalformedHeader(_))));
    }

    proptest! {
        #[test]
        fn contour_round_trip(vals in prop::collection::vec(-500.0f64..500.0, 1..50), frames in 1usize..3) {
            let t = track(frames, |k| vals[k % vals.len()] * (k as f64 + 1.0).sqrt());
            prop_assert_eq!(parse_contours(to_csv(&t).as_bytes()).unwrap(), t);
        }

        #[test]
        fn stats_round_trip(vals in prop::collection::vec((-100.0f64..100.0, 0.01f64..50.0), 16), px in 0.1f64..3.0) {
            let stats = NormStats {
                articulators: ARTICULATORS
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let ax = |k: usize| AxisStats { mean: vals[k].0, std: vals[k].1 };
                        (a.to_string(), [ax(2 * i), ax(2 * i + 1)])
                    })
                    .collect(),
                pixel_size_mm: px,
            };
            let mut out = Vec::new();
            write_norm_stats(&stats, &mut out).unwrap();
            prop_assert_eq!(parse_norm_stats(out.as_slice()).unwrap(), stats);
        }
    }
}
