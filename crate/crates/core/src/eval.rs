//! Contour error metrics in millimeters, aggregation per articulator and
//! significance tests between experimental conditions.

use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::{
    csv_err, frame_mid_time, ContourTrack, FrameClock, FrameMapping, NormStats, UtteranceSet, Units,
};
use crate::error::{Error, Result};

/// Significance level for the t-tests.
pub const DEFAULT_ALPHA: f64 = 0.05;

fn axis_stats<'a>(track: &ContourTrack, stats: &'a NormStats) -> Result<Vec<&'a [crate::corpus::AxisStats; 2]>> {
    track
        .geometry
        .articulators
        .iter()
        .map(|name| stats.get(name).ok_or_else(|| Error::MissingStats(name.clone())))
        .collect()
}

/// Normalized contours to millimeters: `value·std + mean` gives pixels,
/// scaled by the pixel size.
pub fn denormalize(track: &ContourTrack, stats: &NormStats) -> Result<ContourTrack> {
    if track.units != Units::Normalized {
        return Err(Error::InvalidConfig(format!(
            "expected NORMALIZED contours, found {}",
            track.units
        )));
    }
    let per = axis_stats(track, stats)?;
    let px = stats.pixel_size_mm;
    Ok(track.map_values(Units::Mm, |art, axis, v| {
        let s = per[art][axis];
        (v * s.std + s.mean) * px
    }))
}

/// Inverse of [`denormalize`].
pub fn normalize(track: &ContourTrack, stats: &NormStats) -> Result<ContourTrack> {
    if track.units != Units::Mm {
        return Err(Error::UnitsNotMm(track.units));
    }
    let per = axis_stats(track, stats)?;
    let px = stats.pixel_size_mm;
    Ok(track.map_values(Units::Normalized, |art, axis, v| {
        let s = per[art][axis];
        (v / px - s.mean) / s.std
    }))
}

/// Brings a track of any units to millimeters.
pub fn to_mm(track: &ContourTrack, stats: &NormStats) -> Result<ContourTrack> {
    match track.units {
        Units::Mm => Ok(track.clone()),
        Units::Pixels => {
            let px = stats.pixel_size_mm;
            Ok(track.map_values(Units::Mm, |_, _, v| v * px))
        }
        Units::Normalized => denormalize(track, stats),
    }
}

/// Keeps the frames whose mid-time falls inside a non-silent phone.
pub fn filter_silence(frames: &[usize], seg: &UtteranceSet, clock: &FrameClock) -> Vec<usize> {
    let phones = seg.all_phones();
    frames
        .iter()
        .copied()
        .filter(|&f| {
            let t = frame_mid_time(f, clock);
            let after = phones.partition_point(|(_, p)| p.start_s <= t);
            // Phones may overlap by the time tolerance: the earliest holder wins.
            phones[after.saturating_sub(2)..after]
                .iter()
                .find(|(_, p)| p.contains(t))
                .is_some_and(|(_, p)| !seg.is_silence(&p.label))
        })
        .collect()
}

fn check_shape(y: &ContourTrack, y_hat: &ContourTrack) -> Result<()> {
    if y.geometry != y_hat.geometry {
        return Err(Error::ShapeMismatch(format!(
            "geometries differ: {} vs {} articulators of {} vs {} points",
            y.n_articulators(),
            y_hat.n_articulators(),
            y.geometry.n_points,
            y_hat.geometry.n_points
        )));
    }
    if y.n_frames() != y_hat.n_frames() {
        return Err(Error::ShapeMismatch(format!(
            "{} reference frames vs {} predicted",
            y.n_frames(),
            y_hat.n_frames()
        )));
    }
    if y.units != y_hat.units {
        return Err(Error::ShapeMismatch(format!("units {} vs {}", y.units, y_hat.units)));
    }
    Ok(())
}

/// Mean squared coordinate difference over the whole track.
pub fn mse(y: &ContourTrack, y_hat: &ContourTrack) -> Result<f64> {
    check_shape(y, y_hat)?;
    let a = y.as_slice();
    let b = y_hat.as_slice();
    if a.is_empty() {
        return Err(Error::EmptySelection);
    }
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok(sum / a.len() as f64)
}

/// Per frame and articulator RMSE in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameErrorTable {
    pub articulators: Vec<String>,
    pub n_frames: usize,
    /// Frame-major: `rmse_mm[frame * n_articulators + articulator]`.
    pub rmse_mm: Vec<f64>,
}

impl FrameErrorTable {
    pub fn get(&self, frame: usize, art: usize) -> f64 {
        self.rmse_mm[frame * self.articulators.len() + art]
    }
}

/// RMSE over the contour points of each frame and articulator, each point
/// contributing its squared Euclidean distance. A uniform (3, 4) mm shift
/// gives 5 mm; the mean of squared values is twice [`mse`] on the same cells.
pub fn frame_rmse(y: &ContourTrack, y_hat: &ContourTrack) -> Result<FrameErrorTable> {
    for t in [y, y_hat] {
        if t.units != Units::Mm {
            return Err(Error::UnitsNotMm(t.units));
        }
    }
    check_shape(y, y_hat)?;
    let n_art = y.n_articulators();
    let mut rmse_mm = Vec::with_capacity(y.n_frames() * n_art);
    for f in 0..y.n_frames() {
        for a in 0..n_art {
            let (p, q) = (y.articulator(f, a), y_hat.articulator(f, a));
            let ss: f64 = p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum();
            rmse_mm.push((ss / (p.len() / 2) as f64).sqrt());
        }
    }
    Ok(FrameErrorTable {
        articulators: y.geometry.articulators.clone(),
        n_frames: y.n_frames(),
        rmse_mm,
    })
}

/// Mean, population standard deviation and median of one group of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub n: usize,
    pub mean_rmse_mm: f64,
    pub std_rmse_mm: f64,
    pub median_rmse_mm: f64,
}

impl Summary {
    fn of(name: &str, values: &mut [f64]) -> Summary {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        values.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        };
        Summary {
            name: name.to_string(),
            n,
            mean_rmse_mm: mean,
            std_rmse_mm: var.sqrt(),
            median_rmse_mm: median,
        }
    }

    /// Unbiased variance, recovered from the population deviation.
    pub fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        self.std_rmse_mm * self.std_rmse_mm * self.n as f64 / (self.n - 1) as f64
    }
}

/// Per-articulator rows followed by the global row over every kept
/// (frame, articulator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub articulators: Vec<Summary>,
    pub global: Summary,
    pub n_frames_evaluated: usize,
}

impl EvalReport {
    /// Articulator rows then the global row.
    pub fn rows(&self) -> impl Iterator<Item = &Summary> {
        self.articulators.iter().chain(std::iter::once(&self.global))
    }
}

pub const GLOBAL_ROW: &str = "Mean";

pub fn aggregate(t: &FrameErrorTable, keep: &[usize]) -> Result<EvalReport> {
    if keep.is_empty() {
        return Err(Error::EmptySelection);
    }
    if let Some(&f) = keep.iter().find(|&&f| f >= t.n_frames) {
        return Err(Error::InvalidConfig(format!(
            "frame {f} outside a table of {} frames",
            t.n_frames
        )));
    }
    let articulators = t
        .articulators
        .iter()
        .enumerate()
        .map(|(a, name)| {
            let mut v: Vec<f64> = keep.iter().map(|&f| t.get(f, a)).collect();
            Summary::of(name, &mut v)
        })
        .collect();
    let mut all: Vec<f64> = keep
        .iter()
        .flat_map(|&f| (0..t.articulators.len()).map(move |a| (f, a)))
        .map(|(f, a)| t.get(f, a))
        .collect();
    Ok(EvalReport {
        articulators,
        global: Summary::of(GLOBAL_ROW, &mut all),
        n_frames_evaluated: keep.len(),
    })
}

/// Frames evaluated for a mapping: mapped and, given a segmentation,
/// non-silent. Without a mapping every frame of the track is a candidate.
pub fn select_frames(
    n_frames: usize,
    mapping: Option<&FrameMapping>,
    seg: Option<(&UtteranceSet, &FrameClock)>,
) -> Vec<usize> {
    let frames: Vec<usize> = match mapping {
        Some(m) => m
            .mapped()
            .map(|e| e.source_idx)
            .filter(|&i| i < n_frames)
            .collect(),
        None => (0..n_frames).collect(),
    };
    match seg {
        Some((seg, clock)) => filter_silence(&frames, seg, clock),
        None => frames,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Welch,
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub kind: TestKind,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub significant: bool,
}

/// Count, mean and unbiased variance of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMoments {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
}

impl SampleMoments {
    pub fn of(values: &[f64]) -> SampleMoments {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            f64::NAN
        };
        SampleMoments { n, mean, var }
    }
}

impl From<&Summary> for SampleMoments {
    fn from(s: &Summary) -> Self {
        SampleMoments {
            n: s.n,
            mean: s.mean_rmse_mm,
            var: s.sample_variance(),
        }
    }
}

fn two_sided(kind: TestKind, t: f64, df: f64) -> Result<TTest> {
    let p = if t == 0.0 {
        1.0
    } else {
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::InvalidConfig(format!("t distribution with {df} df: {e}")))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(TTest {
        kind,
        t,
        df,
        p,
        significant: p < DEFAULT_ALPHA,
    })
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of
/// freedom, two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    welch_from_moments(SampleMoments::of(a), SampleMoments::of(b))
}

pub fn welch_from_moments(a: SampleMoments, b: SampleMoments) -> Result<TTest> {
    if a.n < 2 || b.n < 2 {
        return Err(Error::SampleTooSmall { a: a.n, b: b.n });
    }
    let (va, vb) = (a.var / a.n as f64, b.var / b.n as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        return if a.mean == b.mean {
            Ok(TTest {
                kind: TestKind::Welch,
                t: 0.0,
                df: (a.n + b.n - 2) as f64,
                p: 1.0,
                significant: false,
            })
        } else {
            Err(Error::Singular)
        };
    }
    let t = (a.mean - b.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64);
    two_sided(TestKind::Welch, t, df)
}

/// Paired t-test on element-wise differences `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "paired samples of {} and {} values",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::SampleTooSmall { a: a.len(), b: b.len() });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = SampleMoments::of(&d);
    let df = (m.n - 1) as f64;
    if m.var == 0.0 {
        return if m.mean == 0.0 {
            Ok(TTest {
                kind: TestKind::Paired,
                t: 0.0,
                df,
                p: 1.0,
                significant: false,
            })
        } else {
            Err(Error::Singular)
        };
    }
    two_sided(TestKind::Paired, m.mean / (m.var / m.n as f64).sqrt(), df)
}

const REPORT_HEADER: [&str; 5] = ["articulator", "n", "mean_rmse_mm", "std_rmse_mm", "median_rmse_mm"];

/// One row per articulator, then the `Mean` row.
pub fn write_report<W: Write>(report: &EvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for s in report.rows() {
        w.write_record([
            s.name.clone(),
            s.n.to_string(),
            s.mean_rmse_mm.to_string(),
            s.std_rmse_mm.to_string(),
            s.median_rmse_mm.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_report<R: Read>(source: R) -> Result<EvalReport> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(REPORT_HEADER.iter().copied()) {
        return Err(Error::MalformedHeader(format!(
            "expected {:?}, found {:?}",
            REPORT_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::MalformedLine {
            line,
            msg: e.to_string(),
        })?;
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| Error::MalformedLine {
                    line,
                    msg: format!("invalid {} {:?}", REPORT_HEADER[i], &record[i]),
                })
        };
        rows.push(Summary {
            name: record[0].to_string(),
            n: record[1].parse().map_err(|_| Error::MalformedLine {
                line,
                msg: format!("invalid n {:?}", &record[1]),
            })?,
            mean_rmse_mm: num(2)?,
            std_rmse_mm: num(3)?,
            median_rmse_mm: num(4)?,
        });
    }
    match rows.pop() {
        Some(global) if global.name == GLOBAL_ROW => {
            let n_frames_evaluated = rows.first().map_or(0, |r| r.n);
            Ok(EvalReport {
                articulators: rows,
                global,
                n_frames_evaluated,
            })
        }
        _ => Err(Error::MalformedHeader(format!("report must end with a {GLOBAL_ROW:?} row"))),
    }
}

const FRAMES_HEADER: [&str; 3] = ["frame", "articulator", "rmse_mm"];

/// Per-cell errors of the kept frames, for paired comparisons.
pub fn write_frame_errors<W: Write>(t: &FrameErrorTable, keep: &[usize], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FRAMES_HEADER).map_err(csv_err)?;
    for &f in keep {
        for (a, name) in t.articulators.iter().enumerate() {
            w.write_record([f.to_string(), name.clone(), t.get(f, a).to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cells read back from [`write_frame_errors`] output, as
/// `(frame, articulator, rmse)`.
pub fn parse_frame_errors<R: Read>(source: R) -> Result<Vec<(usize, String, f64)>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(FRAMES_HEADER.iter().copied()) {
        return Err(Error::MalformedHeader(format!(
            "expected {:?}",
            FRAMES_HEADER.join(",")
        )));
    }
    let mut cells = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::MalformedLine {
            line,
            msg: e.to_string(),
        })?;
        let bad = |msg: String| Error::MalformedLine { line, msg };
        let frame = record[0].parse().map_err(|_| bad(format!("invalid frame {:?}", &record[0])))?;
        let v: f64 = record[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(format!("invalid rmse_mm {:?}", &record[2])))?;
        cells.push((frame, record[1].to_string(), v));
    }
    Ok(cells)
}

/// One cell of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub mean_rmse_mm: f64,
    pub std_rmse_mm: f64,
    pub median_rmse_mm: f64,
    /// Earlier conditions this one differs from significantly.
    pub stars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub articulator: String,
    pub cells: Vec<TableCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub articulator: String,
    pub condition_a: String,
    pub condition_b: String,
    pub test: TTest,
}

/// Conditions side by side, each marked against every earlier one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub conditions: Vec<String>,
    pub rows: Vec<TableRow>,
    pub tests: Vec<PairTest>,
}

/// Builds the table from reports with matching rows. `test(row, i, j)`
/// compares conditions `i < j` on row `row`.
pub fn compare_reports(
    names: &[String],
    reports: &[EvalReport],
    mut test: impl FnMut(usize, usize, usize) -> Result<TTest>,
) -> Result<ComparisonTable> {
    let Some(first) = reports.first() else {
        return Err(Error::InvalidConfig("no reports to compare".into()));
    };
    let row_names: Vec<&str> = first.rows().map(|s| s.name.as_str()).collect();
    for r in reports {
        let these: Vec<&str> = r.rows().map(|s| s.name.as_str()).collect();
        if these != row_names {
            return Err(Error::ShapeMismatch(format!(
                "report rows {these:?} vs {row_names:?}"
            )));
        }
    }
    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for (k, name) in row_names.iter().enumerate() {
        let mut cells = Vec::new();
        for (j, r) in reports.iter().enumerate() {
            let s = r.rows().nth(k).expect("rows checked above");
            let mut stars = 0;
            for i in 0..j {
                let t = test(k, i, j)?;
                stars += usize::from(t.significant);
                tests.push(PairTest {
                    articulator: name.to_string(),
                    condition_a: names[i].clone(),
                    condition_b: names[j].clone(),
                    test: t,
                });
            }
            cells.push(TableCell {
                mean_rmse_mm: s.mean_rmse_mm,
                std_rmse_mm: s.std_rmse_mm,
                median_rmse_mm: s.median_rmse_mm,
                stars,
            });
        }
        rows.push(TableRow {
            articulator: name.to_string(),
            cells,
        });
    }
    Ok(ComparisonTable {
        conditions: names.to_vec(),
        rows,
        tests,
    })
}

/// Welch comparison from the summaries alone.
pub fn compare_welch(names: &[String], reports: &[EvalReport]) -> Result<ComparisonTable> {
    compare_reports(names, reports, |k, i, j| {
        let a = reports[i].rows().nth(k).expect("row exists");
        let b = reports[j].rows().nth(k).expect("row exists");
        welch_from_moments(a.into(), b.into())
    })
}

/// Paired comparison over the cells present in both per-frame tables.
pub fn compare_paired(
    names: &[String],
    reports: &[EvalReport],
    cells: &[Vec<(usize, String, f64)>],
) -> Result<ComparisonTable> {
    use std::collections::BTreeMap;
    let maps: Vec<BTreeMap<(usize, &str), f64>> = cells
        .iter()
        .map(|c| c.iter().map(|(f, a, v)| ((*f, a.as_str()), *v)).collect())
        .collect();
    let n_rows = reports.first().map_or(0, |r| r.articulators.len());
    compare_reports(names, reports, |k, i, j| {
        let row = (k < n_rows).then(|| reports[i].articulators[k].name.as_str());
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (&(f, art), &v) in &maps[i] {
            if row.is_some_and(|r| r != art) {
                continue;
            }
            if let Some(&w) = maps[j].get(&(f, art)) {
                a.push(v);
                b.push(w);
            }
        }
        paired_t_test(&a, &b)
    })
}

/// "soft_palate_midline" → "Soft palate midline".
fn display_name(name: &str) -> String {
    let spaced = name.replace('_', " ");
    let mut chars = spaced.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => spaced,
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label_w = self
            .rows
            .iter()
            .map(|r| display_name(&r.articulator).chars().count())
            .max()
            .unwrap_or(0)
            .max("Articulator".len());
        let max_stars = self.conditions.len().saturating_sub(1);
        let cell = |c: &TableCell| {
            let stars = "*".repeat(c.stars);
            format!(
                "{:.2}{:<w$} ± {:.2}  {:>6.2}",
                c.mean_rmse_mm,
                stars,
                c.std_rmse_mm,
                c.median_rmse_mm,
                w = max_stars
            )
        };
        let cell_w = self
            .rows
            .iter()
            .flat_map(|r| r.cells.iter().map(|c| cell(c).chars().count()))
            .max()
            .unwrap_or(0)
            .max(20 + max_stars);
        write!(f, "{:<label_w$}", "")?;
        for name in &self.conditions {
            write!(f, " | {name:^cell_w$}")?;
        }
        writeln!(f)?;
        write!(f, "{:<label_w$}", "Articulator")?;
        for _ in &self.conditions {
            write!(f, " | {:<cell_w$}", format!("RMSE{} ± std  Median", " ".repeat(max_stars)))?;
        }
        writeln!(f)?;
        let rule = "-".repeat(label_w + self.conditions.len() * (cell_w + 3));
        writeln!(f, "{rule}")?;
        for (k, row) in self.rows.iter().enumerate() {
            if k + 1 == self.rows.len() {
                writeln!(f, "{rule}")?;
            }
            write!(f, "{:<label_w$}", display_name(&row.articulator))?;
            for c in &row.cells {
                write!(f, " | {:<cell_w$}", cell(c))?;
            }
            writeln!(f)?;
        }
        let kind = match self.tests.first().map(|t| t.test.kind) {
            Some(TestKind::Paired) => "paired",
            _ => "Welch",
        };
        for s in 1..=max_stars {
            let against = self.conditions[..s].join(" and ");
            writeln!(
                f,
                "{} significant difference compared to the {} result (p < {}) based on a {} t-test",
                "*".repeat(s),
                against,
                DEFAULT_ALPHA,
                kind
            )?;
        }
        Ok(())
    }
}
