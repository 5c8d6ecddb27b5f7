//! The `mfpca` command-line tool.
//!
//! Exit codes: 0 when nothing is flagged (or the command has nothing to
//! flag), 1 when a detection run flags at least one cell, 2 on any error.

pub mod error;
pub mod io;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mfpca_core::detect::{
    detect_multi_sensor, detect_single_sensor, ChannelSeries, CsdReport, MultiSensorConfig,
    SensorRecording, SingleSensorConfig, ThresholdOrigin, ThresholdSource,
};
use mfpca_core::eval::{compare_groups, ComparisonRow, ReportGroup, RocCurve};
use mfpca_core::pca::PcaMethod;
use mfpca_core::synth::{generate, SynthConfig};

pub use error::CliError;

pub const NO_COLOR_ENV: &str = "MFPCA_NO_COLOR";

#[derive(Debug, Parser)]
#[command(
    name = "mfpca",
    version,
    about = "Sensor anomaly detection with l1-kernel PCA"
)]
pub struct Cli {
    /// Suppress the human-readable summary on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic recording and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Score every (segment, sensor) cell of a multi-sensor recording.
    DetectMulti(DetectMultiArgs),
    /// Score neighbouring windows of one sensor.
    DetectSingle(DetectSingleArgs),
    /// ROC curves and an AUC table for one or more reports.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Regular,
    L1Kernel,
    RecursiveL1,
}

fn positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("expected a positive integer, got `{s}`")),
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got `{s}`")),
    }
}

fn finite_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite number, got `{s}`")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long, value_enum, default_value = "l1-kernel")]
    pub method: MethodName,
    /// Samples per multi-sensor segment.
    #[arg(long, default_value_t = 500, value_parser = positive_usize)]
    pub segment_len: usize,
    /// Threshold is `mu + alpha * sigma` of the calibration scores.
    #[arg(long, default_value_t = 3.0, value_parser = finite_f64, allow_negative_numbers = true)]
    pub alpha: f64,
    /// Consecutive flagged rows before a sensor is declared anomalous.
    #[arg(long, default_value_t = 2, value_parser = positive_usize)]
    pub persistence: usize,
    /// Samples per single-sensor window.
    #[arg(long, default_value_t = 224, value_parser = positive_usize)]
    pub window_len: usize,
    /// Neighbouring windows stacked into one matrix.
    #[arg(long, default_value_t = 5, value_parser = positive_usize)]
    pub window_count: usize,
    /// Principal components used for reconstruction.
    #[arg(short = 'l', long, default_value_t = 1, value_parser = positive_usize)]
    pub components: usize,
    /// Fixed threshold instead of calibrating on a clean recording.
    #[arg(long, value_parser = positive_f64)]
    pub threshold: Option<f64>,
    /// Convergence tolerance of recursive-l1.
    #[arg(long, default_value_t = 1e-8, value_parser = positive_f64)]
    pub tolerance: f64,
    /// Iteration cap of recursive-l1.
    #[arg(long, default_value_t = 1000, value_parser = positive_usize)]
    pub max_iterations: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: MethodName::L1Kernel,
            segment_len: 500,
            alpha: 3.0,
            persistence: 2,
            window_len: 224,
            window_count: 5,
            components: 1,
            threshold: None,
            tolerance: 1e-8,
            max_iterations: 1000,
        }
    }
}

impl RunConfig {
    pub fn pca_method(&self) -> Result<PcaMethod, CliError> {
        Ok(match self.method {
            MethodName::Regular => PcaMethod::Regular,
            MethodName::L1Kernel => PcaMethod::L1Kernel,
            MethodName::RecursiveL1 => {
                PcaMethod::recursive_l1_with(self.tolerance, self.max_iterations)?
            }
        })
    }

    pub fn multi_config(&self) -> Result<MultiSensorConfig, CliError> {
        Ok(MultiSensorConfig {
            method: self.pca_method()?,
            segment_len: self.segment_len,
            components: self.components,
            alpha: self.alpha,
            persistence: self.persistence,
        })
    }

    pub fn single_config(&self) -> Result<SingleSensorConfig, CliError> {
        Ok(SingleSensorConfig {
            method: self.pca_method()?,
            window_len: self.window_len,
            window_count: self.window_count,
            components: self.components,
            alpha: self.alpha,
            persistence: self.persistence,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// JSON synthesis config; missing fields take their defaults.
    pub config: PathBuf,
    /// Recording CSV to write.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Ground-truth JSON; defaults to the output path with a `.truth.json`
    /// extension.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct DetectMultiArgs {
    /// Recording CSV to score.
    pub input: PathBuf,
    /// Clean recording used to calibrate the threshold.
    #[arg(
        long,
        conflicts_with = "threshold",
        required_unless_present = "threshold"
    )]
    pub calibrate: Option<PathBuf>,
    /// Report JSON to write; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Sample rate in Hz; inferred from the time column when absent.
    #[arg(long, value_parser = positive_f64)]
    pub sample_rate: Option<f64>,
    #[command(flatten)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, Args)]
pub struct DetectSingleArgs {
    /// Recording CSV holding the channel.
    pub input: PathBuf,
    /// Column to score.
    #[arg(long)]
    pub channel: String,
    /// Clean recording with a column of the same name, used to calibrate
    /// the threshold.
    #[arg(
        long,
        conflicts_with = "threshold",
        required_unless_present = "threshold"
    )]
    pub calibrate: Option<PathBuf>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = positive_f64)]
    pub sample_rate: Option<f64>,
    #[command(flatten)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pooling {
    /// Reports with the same method share one ROC.
    Method,
    /// One ROC per report.
    None,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Report JSON files, optionally as `REPORT=TRUTH` to pair a report with
    /// its own ground truth. The first report (or method) is the baseline.
    #[arg(required = true)]
    pub reports: Vec<String>,
    /// Ground truth for reports given without `=TRUTH`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "method")]
    pub pool: Pooling,
    /// Directory for `roc_<k>_<name>.csv` and `auc_summary.csv`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Result of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    Anomalous,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Clean => 0,
            Self::Anomalous => 1,
        }
    }
}

fn color_enabled() -> bool {
    std::env::var_os(NO_COLOR_ENV).is_none() && std::io::stderr().is_terminal()
}

fn highlight(text: &str, on: bool) -> String {
    if on && color_enabled() {
        format!("\x1b[1;31m{text}\x1b[0m")
    } else {
        text.to_string()
    }
}

/// `out.csv` -> `out.truth.json`.
pub fn default_truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.json")
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SensorRecording, CliError> {
    let mut config: SynthConfig = io::read_json_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let recording = generate(&config)?;
    io::write_recording(&args.out, &recording)?;
    let truth_path = args
        .truth
        .clone()
        .unwrap_or_else(|| default_truth_path(&args.out));
    io::write_truth(
        &truth_path,
        recording.ground_truth().expect("generator attaches truth"),
    )?;
    Ok(recording)
}

fn fixed_threshold(run: &RunConfig) -> Result<f64, CliError> {
    run.threshold
        .ok_or_else(|| CliError::Usage("either --calibrate or --threshold is required".into()))
}

pub fn cmd_detect_multi(args: &DetectMultiArgs) -> Result<CsdReport, CliError> {
    let recording = io::read_recording(&args.input, args.sample_rate)?;
    let config = args.run.multi_config()?;
    let report = match &args.calibrate {
        Some(path) => {
            let clean = io::read_recording(path, args.sample_rate)?;
            if clean.channels() != recording.channels() {
                return Err(CliError::Usage(format!(
                    "calibration recording {} has channels {:?}, expected {:?}",
                    path.display(),
                    clean.channels(),
                    recording.channels()
                )));
            }
            detect_multi_sensor(&recording, &config, ThresholdSource::Calibrate(&clean))?
        }
        None => detect_multi_sensor(
            &recording,
            &config,
            ThresholdSource::Fixed(fixed_threshold(&args.run)?),
        )?,
    };
    emit_report(&report, args.out.as_deref())?;
    Ok(report)
}

fn channel_of(recording: &SensorRecording, name: &str, path: &Path) -> Result<Vec<f64>, CliError> {
    let index = recording.channel_index(name).ok_or_else(|| {
        CliError::Usage(format!(
            "{}: no channel `{name}` (available: {})",
            path.display(),
            recording.channels().join(", ")
        ))
    })?;
    Ok(recording.channel(index))
}

pub fn cmd_detect_single(args: &DetectSingleArgs) -> Result<CsdReport, CliError> {
    let recording = io::read_recording(&args.input, args.sample_rate)?;
    let samples = channel_of(&recording, &args.channel, &args.input)?;
    let config = args.run.single_config()?;
    let series = ChannelSeries {
        name: &args.channel,
        samples: &samples,
        sample_rate_hz: recording.sample_rate_hz(),
    };
    let report = match &args.calibrate {
        Some(path) => {
            let clean = io::read_recording(path, args.sample_rate)?;
            let clean_samples = channel_of(&clean, &args.channel, path)?;
            detect_single_sensor(series, &config, ThresholdSource::Calibrate(&clean_samples))?
        }
        None => detect_single_sensor(
            series,
            &config,
            ThresholdSource::Fixed(fixed_threshold(&args.run)?),
        )?,
    };
    emit_report(&report, args.out.as_deref())?;
    Ok(report)
}

fn emit_report(report: &CsdReport, out: Option<&Path>) -> Result<(), CliError> {
    let json = io::report_to_json(report);
    match out {
        Some(path) => io::write_atomic(path, json.as_bytes()),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

/// Table of scores in the layout of a CSD table: one line per row, one
/// column per sensor, flagged cells marked with `*`.
pub fn report_summary(report: &CsdReport) -> String {
    let width = report
        .channels
        .iter()
        .map(|c| c.len())
        .max()
        .unwrap_or(0)
        .max(10)
        + 2;
    let mut out = String::new();
    let _ = write!(out, "{:<8}{:<18}", "row", "time (s)");
    for name in &report.channels {
        let _ = write!(out, "{name:>width$}");
    }
    out.push('\n');
    for row in &report.rows {
        let _ = write!(
            out,
            "{:<8}{:<18}",
            row.index + 1,
            format!("{}-{}", row.start_s, row.end_s)
        );
        for (score, &flag) in row.scores.iter().zip(&row.flags) {
            let cell = format!("{score:.2}{}", if flag { "*" } else { " " });
            let _ = write!(out, "{}", highlight(&format!("{cell:>width$}"), flag));
        }
        out.push('\n');
    }
    let origin = match report.calibration.origin {
        ThresholdOrigin::Calibrated => format!(
            "calibrated on {} scores, alpha {}",
            report.calibration.training_count, report.calibration.alpha
        ),
        ThresholdOrigin::Override => "fixed".to_string(),
    };
    let _ = writeln!(
        out,
        "method {}, threshold {:.4} ({origin})",
        report.method, report.threshold
    );
    let anomalous = if report.anomalous_channels.is_empty() {
        "none".to_string()
    } else {
        report.anomalous_channels.join(", ")
    };
    let _ = writeln!(
        out,
        "anomalous sensors (persistence {}): {}",
        report.persistence,
        highlight(&anomalous, !report.anomalous_channels.is_empty())
    );
    out
}

/// Splits `REPORT=TRUTH`.
fn parse_report_arg(
    arg: &str,
    default_truth: Option<&Path>,
) -> Result<(PathBuf, PathBuf), CliError> {
    match arg.split_once('=') {
        Some((report, truth)) => Ok((PathBuf::from(report), PathBuf::from(truth))),
        None => default_truth
            .map(|t| (PathBuf::from(arg), t.to_path_buf()))
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "no ground truth for `{arg}`; pass --truth or REPORT=TRUTH"
                ))
            }),
    }
}

/// Evaluation output: one ROC per group and the AUC table.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub curves: Vec<RocCurve>,
    pub rows: Vec<ComparisonRow>,
    /// Report paths pooled into each group, `;`-separated.
    pub sources: Vec<String>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutput, CliError> {
    let pairs = args
        .reports
        .iter()
        .map(|a| parse_report_arg(a, args.truth.as_deref()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut loaded = Vec::with_capacity(pairs.len());
    for (report_path, truth_path) in &pairs {
        loaded.push((io::read_report(report_path)?, io::read_truth(truth_path)?));
    }

    // group indices in order of first appearance
    let mut members: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, (report, _)) in loaded.iter().enumerate() {
        let name = report.method.name().to_string();
        match args.pool {
            Pooling::Method => match members.iter_mut().find(|(n, _)| *n == name) {
                Some((_, idx)) => idx.push(i),
                None => members.push((name, vec![i])),
            },
            Pooling::None => members.push((name, vec![i])),
        }
    }
    let groups: Vec<ReportGroup<'_>> = members
        .iter()
        .map(|(name, idx)| ReportGroup {
            name: name.clone(),
            members: idx.iter().map(|&i| (&loaded[i].0, &loaded[i].1)).collect(),
        })
        .collect();
    let sources: Vec<String> = members
        .iter()
        .map(|(_, idx)| {
            idx.iter()
                .map(|&i| pairs[i].0.display().to_string())
                .collect::<Vec<_>>()
                .join(";")
        })
        .collect();
    let (curves, rows) = compare_groups(&groups)?;

    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        for (k, (curve, row)) in curves.iter().zip(&rows).enumerate() {
            let path = dir.join(format!("roc_{}_{}.csv", k + 1, row.name));
            io::write_atomic(&path, io::roc_to_csv(curve).as_bytes())?;
        }
        io::write_atomic(
            &dir.join("auc_summary.csv"),
            io::summary_to_csv(&rows, &sources).as_bytes(),
        )?;
    }
    Ok(EvalOutput {
        curves,
        rows,
        sources,
    })
}

pub fn auc_table(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{:<16}{:>10}{:>16}\n", "method", "AUC", "AUC increment");
    for row in rows {
        let inc = row
            .increment
            .map_or_else(|| "-".to_string(), |d| format!("{d:+.4}"));
        let _ = writeln!(out, "{:<16}{:>10.4}{:>16}", row.name, row.auc, inc);
    }
    out
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Synth(args) => {
            let rec = cmd_synth(args)?;
            if !cli.quiet {
                eprintln!(
                    "wrote {} samples x {} sensors to {}",
                    rec.len(),
                    rec.channel_count(),
                    args.out.display()
                );
            }
            Ok(Outcome::Clean)
        }
        Command::DetectMulti(args) => finish_detect(cmd_detect_multi(args)?, cli.quiet),
        Command::DetectSingle(args) => finish_detect(cmd_detect_single(args)?, cli.quiet),
        Command::Eval(args) => {
            let output = cmd_eval(args)?;
            print!("{}", auc_table(&output.rows));
            Ok(Outcome::Clean)
        }
    }
}

fn finish_detect(report: CsdReport, quiet: bool) -> Result<Outcome, CliError> {
    if !quiet {
        eprint!("{}", report_summary(&report));
    }
    Ok(if report.any_flagged() {
        Outcome::Anomalous
    } else {
        Outcome::Clean
    })
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are printed to stderr.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("mfpca").chain(args.iter().copied()))
    }

    #[test]
    fn run_config_defaults() {
        let cli = parse(&["detect-multi", "in.csv", "--threshold", "2"]).unwrap();
        let Command::DetectMulti(args) = cli.command else {
            panic!("wrong subcommand")
        };
        let d = RunConfig::default();
        assert_eq!(args.run.method, d.method);
        assert_eq!(
            (
                args.run.segment_len,
                args.run.persistence,
                args.run.window_len,
                args.run.window_count,
                args.run.components
            ),
            (500, 2, 224, 5, 1)
        );
        assert_eq!(
            (args.run.alpha, args.run.tolerance, args.run.threshold),
            (3.0, 1e-8, Some(2.0))
        );
        assert_eq!(args.run.pca_method().unwrap(), PcaMethod::L1Kernel);
    }

    #[test]
    fn positives_enforced_at_parse_time() {
        for bad in [
            ["--segment-len", "0"],
            ["--persistence", "0"],
            ["--window-len", "-3"],
            ["--components", "0"],
            ["--threshold", "0"],
            ["--threshold", "-1"],
            ["--tolerance", "0"],
            ["--alpha", "nan"],
        ] {
            let mut args = vec!["detect-multi", "in.csv", "--calibrate", "c.csv"];
            if bad[0] == "--threshold" {
                args.truncate(2);
            }
            args.extend(bad);
            assert!(parse(&args).is_err(), "{bad:?}");
        }
        assert!(parse(&[
            "detect-multi",
            "in.csv",
            "--threshold",
            "2",
            "--alpha",
            "-1"
        ])
        .is_ok());
    }

    #[test]
    fn threshold_and_calibration_are_exclusive() {
        assert!(parse(&["detect-multi", "in.csv"]).is_err());
        assert!(parse(&[
            "detect-multi",
            "in.csv",
            "--calibrate",
            "a",
            "--threshold",
            "1"
        ])
        .is_err());
        assert!(parse(&["detect-single", "in.csv", "--threshold", "1"]).is_err());
        assert!(parse(&[
            "detect-single",
            "in.csv",
            "--channel",
            "s",
            "--calibrate",
            "c"
        ])
        .is_ok());
    }

    #[test]
    fn method_names() {
        for (name, method) in [
            ("regular", PcaMethod::Regular),
            ("l1-kernel", PcaMethod::L1Kernel),
            ("recursive-l1", PcaMethod::recursive_l1()),
        ] {
            let cli = parse(&["detect-multi", "x", "--threshold", "1", "--method", name]).unwrap();
            let Command::DetectMulti(args) = cli.command else {
                unreachable!()
            };
            assert_eq!(args.run.pca_method().unwrap(), method);
        }
        assert!(parse(&["detect-multi", "x", "--threshold", "1", "--method", "l2"]).is_err());
    }

    #[test]
    fn report_arg_pairs() {
        let t = Path::new("t.json");
        assert_eq!(
            parse_report_arg("r.json", Some(t)).unwrap(),
            (PathBuf::from("r.json"), PathBuf::from("t.json"))
        );
        assert_eq!(
            parse_report_arg("r.json=u.json", Some(t)).unwrap(),
            (PathBuf::from("r.json"), PathBuf::from("u.json"))
        );
        assert!(parse_report_arg("r.json", None).is_err());
    }

    #[test]
    fn truth_path_default() {
        assert_eq!(
            default_truth_path(Path::new("d/rec.csv")),
            PathBuf::from("d/rec.truth.json")
        );
    }

    #[test]
    fn auc_table_format() {
        let rows = vec![
            ComparisonRow {
                name: "regular".into(),
                auc: 0.7203,
                increment: None,
            },
            ComparisonRow {
                name: "l1-kernel".into(),
                auc: 0.7483,
                increment: Some(0.028),
            },
        ];
        let table = auc_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[1].starts_with("regular") && lines[1].trim_end().ends_with('-'));
        assert!(lines[2].contains("0.7483") && lines[2].trim_end().ends_with("+0.0280"));
    }
}
