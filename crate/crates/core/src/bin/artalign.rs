use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use artalign::corpus::{
    default_silence_labels, parse_contours, parse_features, parse_frame_mapping,
    parse_norm_stats, parse_segmentation, write_features, write_frame_mapping,
    write_segmentation, FeatureSequence, FrameClock, SegmentationFormat, UtteranceSet,
    DEFAULT_CLEAN_FRAME_RATE_HZ, DEFAULT_MRI_FRAME_RATE_HZ, DEFAULT_SAMPLE_RATE_HZ,
};
use artalign::dtw::{align_corpus_dtw, extract_logmel, DtwConfig, MelConfig};
use artalign::eval::{
    aggregate, compare_paired, compare_welch, frame_rmse, parse_frame_errors, parse_report,
    select_frames, to_mm, write_frame_errors, write_report, ComparisonTable,
};
use artalign::phonetic::{
    align_corpus, pairing_rows, parse_pairing, write_pairing, AlignConfig,
    DEFAULT_EPSILON_S, DEFAULT_SIMILARITY_THRESHOLD,
};
use artalign::synth::{gen_synthetic, render_features, SyntheticSpec};
use artalign::{Error, Result};

#[derive(Parser)]
#[command(name = "artalign", version, about = "Align parallel speech corpora and evaluate articulatory contours")]
struct Cli {
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// TOML file with defaults for the numeric options; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frame mapping between two corpora.
    #[command(subcommand)]
    Align(AlignCommand),
    /// Acoustic features from audio.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Contour errors of a prediction against a reference.
    Eval(EvalArgs),
    /// Significance tests between evaluation reports.
    Compare(CompareArgs),
    /// Generate a synthetic parallel corpus with its true mapping.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum AlignCommand {
    Phonetic(PhoneticArgs),
    Dtw(DtwArgs),
}

#[derive(Subcommand)]
enum FeaturesCommand {
    Logmel(LogmelArgs),
}

#[derive(Args)]
struct Clocks {
    #[arg(long)]
    mri_rate: Option<f64>,
    #[arg(long)]
    clean_rate: Option<f64>,
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Length of the MRI frame grid; defaults to covering the corpus.
    #[arg(long)]
    mri_frames: Option<usize>,
    #[arg(long)]
    clean_frames: Option<usize>,
}

#[derive(Args)]
struct PhoneticArgs {
    #[arg(long)]
    mri: PathBuf,
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[command(flatten)]
    clocks: Clocks,
    /// Pair each clean sentence with at most one MRI sentence.
    #[arg(long)]
    one_to_one: bool,
    /// Also write the sentence pairing CSV here.
    #[arg(long)]
    pairing: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct DtwArgs {
    #[arg(long)]
    pairing: PathBuf,
    #[arg(long)]
    mri_feats: PathBuf,
    #[arg(long)]
    clean_feats: PathBuf,
    /// Sakoe-Chiba band radius in frames.
    #[arg(long)]
    band: Option<usize>,
    /// What the feature files hold (e.g. logmel, ssl); echoed in the report.
    #[arg(long, default_value = "unspecified")]
    feature_kind: String,
    #[command(flatten)]
    clocks: Clocks,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct LogmelArgs {
    /// 16-bit PCM WAV file.
    #[arg(long)]
    audio: PathBuf,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    hop: Option<f64>,
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Normalization statistics; required unless both tracks are in MM.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Source segmentation used to drop silent frames.
    #[arg(long)]
    seg: Option<PathBuf>,
    /// Only frames mapped here are evaluated.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Also write per-frame errors, for paired comparisons.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Condition name used in the printed table.
    #[arg(long, default_value = "eval")]
    name: String,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    report_a: PathBuf,
    #[arg(long)]
    report_b: PathBuf,
    /// Further conditions, compared against every earlier one.
    #[arg(long = "report")]
    more: Vec<PathBuf>,
    /// Condition names, in report order.
    #[arg(long = "name")]
    names: Vec<String>,
    /// Paired t-tests over per-frame errors instead of Welch on summaries.
    #[arg(long)]
    paired: bool,
    /// Per-frame error files from `eval --frames`, in report order.
    #[arg(long = "frames")]
    frames: Vec<PathBuf>,
    /// Write the table as CSV.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

/// Values read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    threshold: Option<f64>,
    epsilon_s: Option<f64>,
    mri_rate_hz: Option<f64>,
    clean_rate_hz: Option<f64>,
    sample_rate_hz: Option<f64>,
    band: Option<usize>,
    window_s: Option<f64>,
    hop_s: Option<f64>,
    n_mels: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => toml::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::MalformedHeader(format!("{}: {e}", p.display()))),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        f(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn read_segmentation(path: &Path) -> Result<UtteranceSet> {
    let is_textgrid = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("textgrid"));
    let format = if is_textgrid {
        SegmentationFormat::TextGridSubset
    } else {
        SegmentationFormat::Tsv
    };
    parse_segmentation(open(path)?, format, &default_silence_labels())
}

fn clocks(c: &Clocks, cfg: &FileConfig) -> Result<(FrameClock, FrameClock)> {
    let sr = c.sample_rate.or(cfg.sample_rate_hz).unwrap_or(DEFAULT_SAMPLE_RATE_HZ);
    let mri = c.mri_rate.or(cfg.mri_rate_hz).unwrap_or(DEFAULT_MRI_FRAME_RATE_HZ);
    let clean = c.clean_rate.or(cfg.clean_rate_hz).unwrap_or(DEFAULT_CLEAN_FRAME_RATE_HZ);
    Ok((FrameClock::new(mri, sr)?, FrameClock::new(clean, sr)?))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidConfig(format!("JSON output: {e}")))?;
    println!("{text}");
    Ok(())
}

fn align_phonetic(a: &PhoneticArgs, cfg: &FileConfig, json: bool) -> Result<()> {
    let mri = read_segmentation(&a.mri)?;
    let clean = read_segmentation(&a.clean)?;
    let (mri_clock, clean_clock) = clocks(&a.clocks, cfg)?;
    let config = AlignConfig {
        threshold: a.threshold.or(cfg.threshold).unwrap_or(DEFAULT_SIMILARITY_THRESHOLD),
        epsilon_s: a.epsilon.or(cfg.epsilon_s).unwrap_or(DEFAULT_EPSILON_S),
        mri_clock,
        clean_clock,
        one_to_one: a.one_to_one,
        mri_n_frames: a.clocks.mri_frames,
        clean_n_frames: a.clocks.clean_frames,
    };
    let result = align_corpus(&mri, &clean, &config)?;
    write_atomic(&a.output, |w| write_frame_mapping(&result.mapping, w))?;
    if let Some(p) = &a.pairing {
        let rows = pairing_rows(&result.pairing, &mri, &clean);
        write_atomic(p, |w| write_pairing(&rows, w))?;
    }
    if json {
        print_json(&result.report)
    } else {
        print!("{}", result.report);
        Ok(())
    }
}

/// Loads `<dir>/<id>.feat` for each id present on disk.
fn load_features(dir: &Path, ids: impl Iterator<Item = usize>) -> Result<BTreeMap<usize, FeatureSequence>> {
    let mut out = BTreeMap::new();
    for id in ids {
        let path = dir.join(format!("{id}.feat"));
        if path.exists() {
            out.insert(id, parse_features(open(&path)?)?);
        }
    }
    Ok(out)
}

fn align_dtw(a: &DtwArgs, cfg: &FileConfig, json: bool) -> Result<()> {
    let rows = parse_pairing(open(&a.pairing)?)?;
    let paired: Vec<_> = rows.iter().filter_map(|r| r.clean.map(|c| (r.mri_sentence_id, c.sentence_id))).collect();
    let mri_feats = load_features(&a.mri_feats, paired.iter().map(|p| p.0))?;
    let clean_feats = load_features(&a.clean_feats, paired.iter().map(|p| p.1))?;
    let (mri_clock, clean_clock) = clocks(&a.clocks, cfg)?;
    let config = DtwConfig {
        band: a.band.or(cfg.band),
        mri_clock,
        clean_clock,
        mri_n_frames: a.clocks.mri_frames,
        clean_n_frames: a.clocks.clean_frames,
    };
    let mapping = align_corpus_dtw(&mri_feats, &clean_feats, &rows, &config)?;
    write_atomic(&a.output, |w| write_frame_mapping(&mapping, w))?;
    let first = mri_feats.values().next();
    let summary = serde_json::json!({
        "feature_kind": a.feature_kind,
        "feature_dim": first.map(|f| f.dim),
        "feature_rate_hz": first.map(|f| f.frame_rate_hz),
        "paired_sentences": paired.len(),
        "unmatched_sentences": rows.len() - paired.len(),
        "frames": mapping.entries.len(),
        "mapped_frames": mapping.n_mapped(),
        "clamped_frames": mapping.n_clamped(),
        "band": config.band,
    });
    if json {
        print_json(&summary)
    } else {
        println!(
            "features:  {} ({} dims at {} Hz)",
            a.feature_kind,
            first.map_or(0, |f| f.dim),
            first.map_or(0.0, |f| f.frame_rate_hz)
        );
        println!(
            "sentences: {} paired, {} unmatched\nframes:    {} mapped, {} clamped of {}",
            paired.len(),
            rows.len() - paired.len(),
            mapping.n_mapped(),
            mapping.n_clamped(),
            mapping.entries.len()
        );
        Ok(())
    }
}

/// Reads 16-bit PCM, averaging channels, scaled to [-1, 1).
fn read_pcm16(path: &Path) -> Result<(Vec<f64>, f64)> {
    let bad = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::MalformedHeader(format!("{}: {other}", path.display())),
    };
    let mut reader = hound::WavReader::new(open(path)?).map_err(bad)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::MalformedHeader(format!(
            "{}: expected 16-bit PCM, found {} bits {:?}",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<i16> = reader.samples::<i16>().collect::<std::result::Result<_, _>>().map_err(bad)?;
    let audio = samples
        .chunks(channels)
        .map(|c| c.iter().map(|&s| f64::from(s)).sum::<f64>() / (channels as f64 * 32768.0))
        .collect();
    Ok((audio, f64::from(spec.sample_rate)))
}

fn logmel(a: &LogmelArgs, cfg: &FileConfig) -> Result<()> {
    let (audio, sample_rate_hz) = read_pcm16(&a.audio)?;
    let d = MelConfig::default();
    let mel = MelConfig {
        window_s: a.window.or(cfg.window_s).unwrap_or(d.window_s),
        hop_s: a.hop.or(cfg.hop_s).unwrap_or(d.hop_s),
        n_mels: a.n_mels.or(cfg.n_mels).unwrap_or(d.n_mels),
        sample_rate_hz,
        floor: d.floor,
    };
    let feats = extract_logmel(&audio, &mel)?;
    write_atomic(&a.output, |w| write_features(&feats, w))
}

fn show_table(table: &ComparisonTable, json: bool) -> Result<()> {
    if json {
        print_json(table)
    } else {
        print!("{table}");
        Ok(())
    }
}

fn eval(a: &EvalArgs, cfg: &FileConfig, json: bool) -> Result<()> {
    let stats = match &a.stats {
        Some(p) => parse_norm_stats(open(p)?)?,
        None => Default::default(),
    };
    let reference = parse_contours(open(&a.reference)?)?;
    let pred = parse_contours(open(&a.pred)?)?;
    if a.stats.is_none() && (reference.units != artalign::corpus::Units::Mm || pred.units != artalign::corpus::Units::Mm) {
        return Err(Error::InvalidConfig("--stats is needed to convert contours to MM".into()));
    }
    let (y, y_hat) = (to_mm(&reference, &stats)?, to_mm(&pred, &stats)?);
    let errors = frame_rmse(&y, &y_hat)?;
    let mapping = a.mapping.as_deref().map(|p| parse_frame_mapping(open(p)?)).transpose()?;
    let seg = a.seg.as_deref().map(read_segmentation).transpose()?;
    let sr = a.sample_rate.or(cfg.sample_rate_hz).unwrap_or(DEFAULT_SAMPLE_RATE_HZ);
    let clock = FrameClock::new(y.frame_rate_hz, sr)?;
    let keep = select_frames(errors.n_frames, mapping.as_ref(), seg.as_ref().map(|s| (s, &clock)));
    let report = aggregate(&errors, &keep)?;
    write_atomic(&a.output, |w| write_report(&report, w))?;
    if let Some(p) = &a.frames {
        write_atomic(p, |w| write_frame_errors(&errors, &keep, w))?;
    }
    if json {
        return print_json(&report);
    }
    let table = compare_welch(&[a.name.clone()], std::slice::from_ref(&report))?;
    println!("frames evaluated: {}", report.n_frames_evaluated);
    show_table(&table, false)
}

fn compare(a: &CompareArgs, json: bool) -> Result<()> {
    let paths: Vec<&PathBuf> = [&a.report_a, &a.report_b].into_iter().chain(&a.more).collect();
    let reports = paths
        .iter()
        .map(|p| parse_report(open(p)?))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = if a.names.is_empty() {
        (0..reports.len()).map(|k| char::from(b'A' + k as u8).to_string()).collect()
    } else if a.names.len() == reports.len() {
        a.names.clone()
    } else {
        return Err(Error::InvalidConfig(format!(
            "{} names for {} reports",
            a.names.len(),
            reports.len()
        )));
    };
    let table = if a.paired {
        if a.frames.len() != reports.len() {
            return Err(Error::InvalidConfig(format!(
                "--paired needs one --frames file per report, got {} for {}",
                a.frames.len(),
                reports.len()
            )));
        }
        let cells = a
            .frames
            .iter()
            .map(|p| parse_frame_errors(open(p)?))
            .collect::<Result<Vec<_>>>()?;
        compare_paired(&names, &reports, &cells)?
    } else {
        compare_welch(&names, &reports)?
    };
    if let Some(p) = &a.output {
        write_atomic(p, |w| write_table(&table, w))?;
    }
    show_table(&table, json)
}

fn write_table(table: &ComparisonTable, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "articulator,condition,mean_rmse_mm,std_rmse_mm,median_rmse_mm,stars")?;
    for row in &table.rows {
        for (name, c) in table.conditions.iter().zip(&row.cells) {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.articulator, name, c.mean_rmse_mm, c.std_rmse_mm, c.median_rmse_mm, c.stars
            )?;
        }
    }
    Ok(())
}

fn synth(a: &SynthArgs, json: bool) -> Result<()> {
    let spec = SyntheticSpec::from_toml(&fs::read_to_string(&a.spec)?)?;
    let corpus = gen_synthetic(&spec)?;
    fs::create_dir_all(&a.output)?;
    let out = &a.output;
    write_atomic(&out.join("mri.tsv"), |w| write_segmentation(&corpus.mri, w))?;
    write_atomic(&out.join("clean.tsv"), |w| write_segmentation(&corpus.clean, w))?;
    write_atomic(&out.join("truth.csv"), |w| write_frame_mapping(&corpus.truth, w))?;
    if let Some(style) = &spec.features {
        for (name, set) in [("mri_feats", &corpus.mri), ("clean_feats", &corpus.clean)] {
            let dir = out.join(name);
            fs::create_dir_all(&dir)?;
            for id in 0..set.sentences.len() {
                let f = render_features(set, id, style)?;
                write_atomic(&dir.join(format!("{id}.feat")), |w| write_features(&f, w))?;
            }
        }
    }
    let summary = serde_json::json!({
        "mri_sentences": corpus.mri.sentences.len(),
        "clean_sentences": corpus.clean.sentences.len(),
        "clean_of": corpus.clean_of,
        "perturbed": corpus.perturbed,
        "truth_frames": corpus.truth.entries.len(),
        "truth_mapped": corpus.truth.n_mapped(),
    });
    write_atomic(&out.join("synth.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)
            .map_err(|e| Error::InvalidConfig(format!("JSON output: {e}")))?;
        Ok(writeln!(w)?)
    })?;
    if json {
        print_json(&summary)
    } else {
        println!(
            "{} sentences, {} perturbed, {} of {} frames with a true target",
            corpus.mri.sentences.len(),
            corpus.perturbed.len(),
            corpus.truth.n_mapped(),
            corpus.truth.entries.len()
        );
        Ok(())
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Align(AlignCommand::Phonetic(a)) => align_phonetic(a, &cfg, cli.json),
        Command::Align(AlignCommand::Dtw(a)) => align_dtw(a, &cfg, cli.json),
        Command::Features(FeaturesCommand::Logmel(a)) => logmel(a, &cfg),
        Command::Eval(a) => eval(a, &cfg, cli.json),
        Command::Compare(a) => compare(a, cli.json),
        Command::Synth(a) => synth(a, cli.json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
