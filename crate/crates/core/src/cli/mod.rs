//! Command-line interface.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{EpsilonValue, PathsConfig, RegimesValue, RunConfig};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::feature_model::{annotate_distances_with, fit_gaussian, GaussianTrainModel, Regularization};
use crate::ingest::{self, features::load_feature_matrix, DetectionSet, GroundTruthSet};
use crate::matching::{match_detections_with, DEFAULT_IOU_THRESHOLD};
use crate::metrics::{self, MetricReport, ProfileOptions, ScoreRegimes, T2tMatching};
use crate::replacement::{self, AccuracyCurve, ReplacementTarget};
use crate::report::{self, CsvExport, RenderSvg};
use crate::scenario::{self, ScenarioSpec};

pub const MODEL_FILE: &str = "train_model.bin";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "t2t", version, about = "Train-to-test distance metrics for object detection")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full evaluation: AP, AP@[.5:.95], AP_t2t per regime, histograms.
    Evaluate(DataArgs),
    /// Fit the training Gaussian and save it.
    Fit(DataArgs),
    /// Train2test distance of every detection.
    Distances(DataArgs),
    /// AP_t2t per score regime only.
    ApT2t(DataArgs),
    /// Matching same-domain image counts from accuracy curves.
    Replacement(ReplacementArgs),
    /// Generate a planted synthetic scenario.
    Scenario(ScenarioArgs),
    /// AP_t2t scaling series over several evaluation summaries.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth JSON.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Detections JSON.
    #[arg(long)]
    det: Option<PathBuf>,
    /// Detection feature file (binary or CSV).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Training feature file (binary or CSV).
    #[arg(long)]
    train_features: Option<PathBuf>,
    /// Saved training model, instead of --train-features.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    iou: Option<f64>,
    /// e.g. `all=0.01,med=0.1,high=0.5`
    #[arg(long)]
    score_thresholds: Option<String>,
    /// Covariance ridge: `auto` or a number >= 0.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    bins: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for config symmetry; evaluation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Average AP_t2t over IoU 0.50:0.05:0.95 instead of one threshold.
    #[arg(long)]
    t2t_iou_grid: bool,
    /// Disable data-parallel execution.
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct ReplacementArgs {
    /// Same-domain accuracy curve CSV (`count,accuracy[,run_id]`); several
    /// files or run ids are averaged.
    #[arg(long, required = true)]
    curve: Vec<PathBuf>,
    /// `COUNT=ACC[,ACC_WITH_SYNTH]`
    #[arg(long)]
    target: Vec<String>,
    /// CSV of `cross_count,accuracy[,accuracy_with_synth]`.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Scenario spec TOML; defaults apply to missing fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pull TP features toward the training mean by this distance factor.
    #[arg(long)]
    shrink: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `[GROUP:]COUNT=SUMMARY_JSON`, one per training-set size.
    #[arg(long, required = true)]
    input: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();

    let result = match cli.command {
        Command::Evaluate(a) => Settings::resolve(a).and_then(|s| cmd_evaluate(&s)),
        Command::Fit(a) => Settings::resolve(a).and_then(|s| cmd_fit(&s)),
        Command::Distances(a) => Settings::resolve(a).and_then(|s| cmd_distances(&s)),
        Command::ApT2t(a) => Settings::resolve(a).and_then(|s| cmd_ap_t2t(&s)),
        Command::Replacement(a) => cmd_replacement(&a),
        Command::Scenario(a) => cmd_scenario(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

/// Config file merged with flags.
#[derive(Debug, Clone)]
struct Settings {
    gt: Option<PathBuf>,
    det: Option<PathBuf>,
    features: Option<PathBuf>,
    train_features: Option<PathBuf>,
    model: Option<PathBuf>,
    out: Option<PathBuf>,
    iou: f64,
    regimes: ScoreRegimes,
    regularization: Regularization,
    bins: usize,
    t2t_matching: T2tMatching,
    exec: Execution,
}

impl Settings {
    fn resolve(a: DataArgs) -> Result<Self> {
        let cfg = match &a.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let regimes = match &a.score_thresholds {
            Some(s) => s.parse()?,
            None => cfg.regimes()?.unwrap_or_default(),
        };
        let regularization = match &a.epsilon {
            Some(s) => s.parse().map_err(Error::InvalidArgument)?,
            None => cfg.regularization()?.unwrap_or_default(),
        };
        let grid = a.t2t_iou_grid || cfg.t2t_iou_grid.unwrap_or(false);
        let p = cfg.paths;
        Ok(Settings {
            gt: a.gt.or(p.ground_truth),
            det: a.det.or(p.detections),
            features: a.features.or(p.features),
            train_features: a.train_features.or(p.train_features),
            model: a.model.or(p.model),
            out: a.out.or(p.out),
            iou: a.iou.or(cfg.iou_threshold).unwrap_or(DEFAULT_IOU_THRESHOLD),
            regimes,
            regularization,
            bins: a.bins.or(cfg.bins).unwrap_or(report::DEFAULT_BINS),
            t2t_matching: if grid { T2tMatching::IouGrid } else { T2tMatching::Single },
            exec: if a.sequential { Execution::Sequential } else { Execution::default() },
        })
    }

    fn profile(&self) -> ProfileOptions {
        ProfileOptions {
            iou_threshold: self.iou,
            regimes: self.regimes.clone(),
            t2t_matching: self.t2t_matching,
            exec: self.exec,
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| missing("--out"))
    }

    fn ground_truth(&self) -> Result<GroundTruthSet> {
        ingest::load_ground_truth(self.gt.as_ref().ok_or_else(|| missing("--gt"))?)
    }

    /// Detections with features bound.
    fn detections(&self) -> Result<DetectionSet> {
        let dets = ingest::load_detections(self.det.as_ref().ok_or_else(|| missing("--det"))?)?;
        let feats = load_feature_matrix(self.features.as_ref().ok_or_else(|| missing("--features"))?)?;
        Ok(ingest::bind_features(dets, &feats)?.0)
    }

    fn model(&self) -> Result<GaussianTrainModel> {
        match (&self.model, &self.train_features) {
            (Some(m), _) => GaussianTrainModel::load(m),
            (None, Some(t)) => fit_gaussian(&load_feature_matrix(t)?, self.regularization),
            (None, None) => Err(missing("--train-features or --model")),
        }
    }
}

fn missing(what: &str) -> Error {
    Error::InvalidArgument(format!("{what} is required (flag or config file)"))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_outputs(dir: &Path, files: Vec<(&str, Vec<u8>)>) -> Result<()> {
    prepare_dir(dir)?;
    let files: Vec<(PathBuf, Vec<u8>)> = files.into_iter().map(|(n, b)| (dir.join(n), b)).collect();
    report::write_all_atomic(&files)
}

fn summary_json(report: &MetricReport) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn cmd_evaluate(s: &Settings) -> Result<()> {
    let out = s.out_dir()?;
    let gts = s.ground_truth()?;
    let dets = s.detections()?;
    let model = s.model()?;
    let opts = s.profile();
    let report = metrics::evaluate(&model, &dets, &gts, &opts)?;
    let base = match_detections_with(&dets, &gts, s.iou, report.score_threshold, s.exec)?;
    let annotated = annotate_distances_with(&model, &base, s.exec)?;
    let hist = report::distance_histogram(&annotated, s.bins, None)?;
    for r in report.regimes.iter().filter(|r| r.error.is_some()) {
        log::warn!("regime {}: {}", r.regime, r.error.as_deref().unwrap_or(""));
    }
    write_outputs(
        out,
        vec![
            ("metrics.csv", report.to_csv().into_bytes()),
            ("summary.json", summary_json(&report)),
            ("histogram_tp.csv", hist.tp.to_csv().into_bytes()),
            ("histogram_fp.csv", hist.fp.to_csv().into_bytes()),
            ("histogram.svg", hist.render_svg().into_bytes()),
            ("distances.csv", annotated.to_csv().into_bytes()),
        ],
    )
}

fn cmd_fit(s: &Settings) -> Result<()> {
    let out = s.out_dir()?;
    let train = s.train_features.as_ref().ok_or_else(|| missing("--train-features"))?;
    let model = fit_gaussian(&load_feature_matrix(train)?, s.regularization)?;
    log::info!(
        "fitted {} rows x {} dims, epsilon {}",
        model.sample_count(),
        model.dim(),
        model.regularization()
    );
    write_outputs(out, vec![(MODEL_FILE, model.to_bytes())])
}

fn cmd_distances(s: &Settings) -> Result<()> {
    let out = s.out_dir()?;
    let dets = s.detections()?;
    let model = s.model()?;
    let xs: Vec<&[f64]> = dets
        .iter()
        .map(|d| d.feature.as_ref().expect("bound").as_slice())
        .collect();
    let ds = model.distances(&xs, s.exec)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["detection_id", "image_id", "score", "distance"]).expect("in-memory write");
    for (d, dist) in dets.iter().zip(ds) {
        w.write_record([
            d.detection_id.to_string(),
            d.image_id.to_string(),
            d.score.to_string(),
            dist.to_string(),
        ])
        .expect("in-memory write");
    }
    write_outputs(out, vec![("detection_distances.csv", w.into_inner().expect("flush"))])
}

fn cmd_ap_t2t(s: &Settings) -> Result<()> {
    let gts = s.ground_truth()?;
    let dets = s.detections()?;
    let model = s.model()?;
    let rows = metrics::ap_t2t_profile(&model, &dets, &gts, &s.profile());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["regime", "score_threshold", "ap_t2t", "tp", "fp", "fn", "error"]).expect("in-memory write");
    for r in &rows {
        let c = |f: fn(&metrics::Counts) -> usize| r.counts.as_ref().map(|x| f(x).to_string()).unwrap_or_default();
        w.write_record([
            r.regime.clone(),
            r.score_threshold.to_string(),
            r.ap_t2t.map(|v| v.to_string()).unwrap_or_default(),
            c(|x| x.tp),
            c(|x| x.fp),
            c(|x| x.fn_),
            r.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    let bytes = w.into_inner().expect("flush");
    if let Some(out) = &s.out {
        write_outputs(out, vec![("ap_t2t.csv", bytes.clone())])?;
    }
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        origin: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Records of a CSV file with an optional header row (detected by a
/// non-numeric first field), paired with their 1-based line numbers.
fn numeric_records(path: &Path) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut out = Vec::new();
    for (i, rec) in csv_reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let line = rec.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        Error::validation(path.display().to_string(), format!("line {line}"), format!("{name} `{raw}` is not valid"))
    })
}

fn load_curves(path: &Path) -> Result<Vec<AccuracyCurve>> {
    let mut rows = Vec::new();
    for (line, rec) in numeric_records(path)? {
        if !(2..=3).contains(&rec.len()) {
            return Err(Error::validation(
                path.display().to_string(),
                format!("line {line}"),
                format!("expected count,accuracy[,run_id], found {} fields", rec.len()),
            ));
        }
        let count: u32 = field(path, line, &rec, 0, "count")?;
        let acc: f64 = field(path, line, &rec, 1, "accuracy")?;
        let run = rec.get(2).filter(|r| !r.is_empty()).map(str::to_string);
        rows.push((run, count, acc));
    }
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    replacement::curves_by_run(&label, &rows).map_err(|e| match e {
        Error::InvalidArgument(m) | Error::Validation { message: m, .. } => {
            Error::validation(path.display().to_string(), "curve", m)
        }
        other => other,
    })
}

fn parse_target(s: &str) -> Result<ReplacementTarget> {
    let bad = || Error::InvalidArgument(format!("target `{s}` is not COUNT=ACC[,ACC_WITH_SYNTH]"));
    let (count, accs) = s.split_once('=').ok_or_else(bad)?;
    let mut accs = accs.split(',');
    let accuracy = accs.next().and_then(|a| a.trim().parse().ok()).ok_or_else(bad)?;
    let accuracy_with_synth = match accs.next() {
        Some(a) => Some(a.trim().parse().map_err(|_| bad())?),
        None => None,
    };
    if accs.next().is_some() {
        return Err(bad());
    }
    Ok(ReplacementTarget {
        cross_domain_count: count.trim().parse().map_err(|_| bad())?,
        accuracy,
        accuracy_with_synth,
    })
}

fn load_targets(path: &Path) -> Result<Vec<ReplacementTarget>> {
    let mut out = Vec::new();
    for (line, rec) in numeric_records(path)? {
        out.push(ReplacementTarget {
            cross_domain_count: field(path, line, &rec, 0, "cross_count")?,
            accuracy: field(path, line, &rec, 1, "accuracy")?,
            accuracy_with_synth: match rec.get(2).filter(|v| !v.is_empty()) {
                Some(_) => Some(field(path, line, &rec, 2, "accuracy_with_synth")?),
                None => None,
            },
        });
    }
    Ok(out)
}

fn cmd_replacement(a: &ReplacementArgs) -> Result<()> {
    let mut curves = Vec::new();
    for p in &a.curve {
        curves.extend(load_curves(p)?);
    }
    let curve = if curves.len() == 1 {
        curves.pop().expect("one curve")
    } else {
        let avg = replacement::average_runs(&curves)?;
        eprintln!("note: using {}", avg.label());
        avg
    };
    let mut targets: Vec<ReplacementTarget> = a.target.iter().map(|t| parse_target(t)).collect::<Result<_>>()?;
    if let Some(p) = &a.targets {
        targets.extend(load_targets(p)?);
    }
    if targets.is_empty() {
        return Err(missing("--target or --targets"));
    }
    let rows = replacement::resolve_targets(&curve, &targets)?;
    let chart = report::replacement_bars(&rows);
    write_outputs(
        &a.out,
        vec![
            ("replacement.csv", rows.to_csv().into_bytes()),
            ("replacement.svg", chart.render_svg().into_bytes()),
        ],
    )
}

fn cmd_scenario(a: &ScenarioArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            ScenarioSpec::from_toml(&text).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse {
                    origin: p.display().to_string(),
                    message,
                },
                other => other,
            })?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let mut sc = scenario::generate_scenario(&spec)?;
    if let Some(f) = a.shrink {
        sc = scenario::shrink_tp_distances(&sc, f)?;
    }
    let mut files: Vec<(&str, Vec<u8>)> = sc.file_contents()?;
    let has_dets = files.iter().any(|(n, _)| *n == scenario::files::DET_FEATURES);
    let cfg = RunConfig {
        paths: PathsConfig {
            ground_truth: Some(scenario::files::GROUND_TRUTH.into()),
            detections: Some(scenario::files::DETECTIONS.into()),
            features: has_dets.then(|| scenario::files::DET_FEATURES.into()),
            train_features: Some(scenario::files::TRAIN_FEATURES.into()),
            ..PathsConfig::default()
        },
        seed: Some(spec.seed),
        ..RunConfig::default()
    };
    files.push((CONFIG_FILE, cfg.to_toml().into_bytes()));
    write_outputs(&a.out, files)
}

fn parse_input(s: &str) -> Result<(String, u32, PathBuf)> {
    let bad = || Error::InvalidArgument(format!("input `{s}` is not [GROUP:]COUNT=PATH"));
    let (head, path) = s.split_once('=').ok_or_else(bad)?;
    let (group, count) = match head.rsplit_once(':') {
        Some((g, c)) => (g.to_string(), c),
        None => (String::new(), head),
    };
    Ok((group, count.trim().parse().map_err(|_| bad())?, PathBuf::from(path)))
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut groups: Vec<(String, Vec<(u32, MetricReport)>)> = Vec::new();
    for spec in &a.input {
        let (group, count, path) = parse_input(spec)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let rep: MetricReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
            origin: path.display().to_string(),
            message: e.to_string(),
        })?;
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, v)) => v.push((count, rep)),
            None => groups.push((group, vec![(count, rep)])),
        }
    }
    let plot = report::scaling_series_grouped(&groups)?;
    write_outputs(
        &a.out,
        vec![
            ("scaling.csv", plot.to_csv().into_bytes()),
            ("scaling.svg", plot.render_svg().into_bytes()),
        ],
    )
}
