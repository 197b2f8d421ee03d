//! Command-line front end: scoring, cohort synthesis, experiment runs and
//! manifest replay.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::cohort::{load_cohort, save_cohort, CohortError, Target};
use crate::eval::{
    render_report, run_experiment, EvalError, ExperimentKind, ExperimentSpec, Parallelism,
    ReportFormat, RunSettings,
};
use crate::features::{FeatureError, Modality};
use crate::instrument::{
    classify_severity, load_instrument, load_response_sheets, subscale_score, total_score,
    InstrumentError,
};
use crate::models::ForestConfig;
use crate::pipeline::{Approach, PipelineError, Preprocessing};
use crate::scalar::Scalar;
use crate::synth::{generate_cohort, SynthConfig, SynthError};

pub const TOOL: &str = concat!("erd ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(name = "erd", version, about = "Emotion-regulation-difficulty estimation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Ders,
    Cascade,
    Severity,
}

impl From<ExperimentArg> for ExperimentKind {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Ders => ExperimentKind::DersTable,
            ExperimentArg::Cascade => ExperimentKind::SelfreportCascade,
            ExperimentArg::Severity => ExperimentKind::SeverityCompare,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn as_str(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrepArg {
    None,
    Zscore,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score response sheets against an instrument definition.
    Score {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        instrument: PathBuf,
    },
    /// Generate a synthetic cohort directory.
    Synth {
        /// TOML generator configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment grid with leave-one-subject-out evaluation.
    Run {
        cohort: PathBuf,
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        /// Comma-separated: audio, video, fused.
        #[arg(long)]
        modality: Option<String>,
        /// Comma-separated: direct, indirect.
        #[arg(long)]
        approach: Option<String>,
        /// Comma-separated: MDD, PTSD.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Fold-level worker threads; 1 runs sequentially, 0 uses all cores.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = 10)]
        trees: usize,
        #[arg(long, value_enum, default_value_t = PrepArg::None)]
        preprocessing: PrepArg,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
    },
    /// Re-execute a run or synth from its manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )*};
}

input_error!(InstrumentError, FeatureError, CohortError, SynthError, PipelineError);

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidSpec(_) | EvalError::TooFewSubjects(_) | EvalError::DuplicateSubject(_) => {
                CliError::Input(e.to_string())
            }
            EvalError::Pipeline(p) => CliError::Input(p.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::Input(e.to_string()))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            if rel != MANIFEST_FILE {
                out.push((rel, path));
            }
        }
    }
    Ok(())
}

/// Digest over every file in a directory except the manifest, by sorted
/// relative path.
pub fn directory_digest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for (rel, path) in files {
        let bytes = fs::read(&path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| CliError::Input(format!("manifest has no `{key}` entry")))
    }

    pub fn render(&self) -> String {
        self.entries.iter().fold(String::new(), |mut s, (k, v)| {
            let _ = writeln!(s, "{k}={v}");
            s
        })
    }

    pub fn parse(source: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in source.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("manifest line {}: expected key=value", i + 1)))?;
            m.set(k.trim(), v);
        }
        Ok(m)
    }
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn join<X: std::fmt::Display>(xs: &[X]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_modalities(s: &str) -> Result<Vec<Modality>> {
    split_list(s).map(|x| x.parse::<Modality>().map_err(CliError::from)).collect()
}

fn parse_approaches(s: &str) -> Result<Vec<Approach>> {
    split_list(s).map(|x| x.parse::<Approach>().map_err(CliError::from)).collect()
}

fn parse_targets(s: &str) -> Result<Vec<Target>> {
    split_list(s).map(|x| x.parse::<Target>().map_err(CliError::from)).collect()
}

pub fn cmd_score(responses: &Path, instrument: &Path) -> Result<String> {
    let inst = load_instrument(&read(instrument)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", instrument.display())))?;
    let sheets = load_response_sheets(&read(responses)?, inst.instrument_id())
        .map_err(|e| CliError::Input(format!("{}: {e}", responses.display())))?;
    let subscales: Vec<&String> = if inst.subscale_ids().len() > 1 {
        inst.subscale_ids().iter().collect()
    } else {
        Vec::new()
    };
    let mut header: Vec<String> = vec!["subject_id".into()];
    header.extend(subscales.iter().map(|s| s.to_string()));
    header.push("total".into());
    if inst.severity_threshold().is_some() {
        header.push("severity".into());
    }
    let mut table = vec![header];
    for sheet in &sheets {
        sheet.validate(&inst)?;
        let mut row = vec![sheet.subject_id.clone()];
        for s in &subscales {
            row.push(subscale_score(&inst, sheet, s)?.to_string());
        }
        let total = total_score(&inst, sheet)?;
        row.push(total.to_string());
        if inst.severity_threshold().is_some() {
            row.push(classify_severity(&inst, total)?.to_string());
        }
        table.push(row);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

fn synth_into(config: &SynthConfig, out: &Path) -> Result<Manifest> {
    create_dir(out)?;
    let cohort = generate_cohort::<f64>(config)?;
    save_cohort(&cohort, out)?;
    let mut m = Manifest::default();
    m.set("tool", TOOL);
    m.set("command", "synth");
    m.set("seed", config.seed.to_string());
    m.set("config", to_json(config)?);
    m.set("audio_schema_sha256", sha256_hex(config.audio_schema.feature_names().join("\n").as_bytes()));
    m.set("video_schema_sha256", sha256_hex(config.video_schema.feature_names().join("\n").as_bytes()));
    m.set("cohort_sha256", directory_digest(out)?);
    write(&out.join(MANIFEST_FILE), &m.render())?;
    Ok(m)
}

pub fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<String> {
    let mut cfg: SynthConfig = match config {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let m = synth_into(&cfg, out)?;
    Ok(format!(
        "wrote {} subjects to {} (cohort sha256 {})\n",
        cfg.n_subjects,
        out.display(),
        m.get("cohort_sha256").unwrap_or("")
    ))
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRequest {
    pub cohort: PathBuf,
    pub spec: ExperimentSpec,
    pub forest: ForestConfig,
    pub preprocessing: Preprocessing,
    pub precision: Precision,
}

impl RunRequest {
    #[allow(clippy::too_many_arguments)]
    pub fn from_flags(
        cohort: &Path,
        experiment: ExperimentArg,
        modality: Option<&str>,
        approach: Option<&str>,
        target: Option<&str>,
        seed: u64,
        trees: usize,
        preprocessing: PrepArg,
        precision: Precision,
    ) -> Result<Self> {
        let kind = ExperimentKind::from(experiment);
        let mut spec = ExperimentSpec::full(kind, seed);
        let flag_err = |flag: &str| {
            CliError::Input(format!("--{flag} cannot be used with --experiment {}", kind_flag(kind)))
        };
        if let Some(m) = modality {
            if kind == ExperimentKind::SelfreportCascade {
                return Err(flag_err("modality"));
            }
            spec.modalities = parse_modalities(m)?;
        }
        if let Some(a) = approach {
            if kind != ExperimentKind::DersTable {
                return Err(flag_err("approach"));
            }
            spec.approaches = parse_approaches(a)?;
        }
        if let Some(t) = target {
            if kind == ExperimentKind::DersTable {
                return Err(flag_err("target"));
            }
            spec.targets = parse_targets(t)?;
        }
        spec.validate()?;
        let forest = ForestConfig { n_trees: trees, ..ForestConfig::default() };
        forest.validate().map_err(|e| CliError::Input(e.to_string()))?;
        Ok(Self {
            cohort: cohort.to_path_buf(),
            spec,
            forest,
            preprocessing: match preprocessing {
                PrepArg::None => Preprocessing::None,
                PrepArg::Zscore => Preprocessing::ZScore,
            },
            precision,
        })
    }
}

fn kind_flag(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::DersTable => "ders",
        ExperimentKind::SelfreportCascade => "cascade",
        ExperimentKind::SeverityCompare => "severity",
    }
}

fn parallelism(jobs: usize) -> Parallelism {
    if jobs == 1 {
        Parallelism::Sequential
    } else {
        Parallelism::Threads(jobs)
    }
}

fn run_typed<T: Scalar>(req: &RunRequest, jobs: usize, out: &Path) -> Result<Manifest> {
    let cohort = load_cohort::<T>(&req.cohort)?;
    let settings = RunSettings::<T> {
        forest: req.forest.clone(),
        preprocessing: req.preprocessing,
        parallelism: parallelism(jobs),
        ..RunSettings::default()
    };
    let report = run_experiment(&cohort, &req.spec, &settings)?;
    create_dir(out)?;
    let csv = render_report(&report, ReportFormat::Csv);
    write(&out.join("report.csv"), &csv)?;
    write(&out.join("report.txt"), &render_report(&report, ReportFormat::Pretty))?;

    let mut m = Manifest::default();
    m.set("tool", TOOL);
    m.set("command", "run");
    m.set("cohort", req.cohort.to_string_lossy());
    m.set("cohort_sha256", directory_digest(&req.cohort)?);
    m.set("experiment", kind_flag(req.spec.kind));
    m.set("modalities", join(&req.spec.modalities));
    m.set("approaches", join(&req.spec.approaches));
    m.set("targets", join(&req.spec.targets));
    m.set("seed", req.spec.master_seed.to_string());
    m.set("precision", req.precision.as_str());
    m.set("preprocessing", to_json(&req.preprocessing)?);
    m.set("forest", to_json(&req.forest)?);
    m.set("svm", to_json(&settings.svm)?);
    m.set(
        "audio_schema_sha256",
        sha256_hex(cohort.features(Modality::Audio).schema().feature_names().join("\n").as_bytes()),
    );
    m.set(
        "video_schema_sha256",
        sha256_hex(cohort.features(Modality::Video).schema().feature_names().join("\n").as_bytes()),
    );
    m.set("report_sha256", sha256_hex(csv.as_bytes()));
    write(&out.join(MANIFEST_FILE), &m.render())?;
    Ok(m)
}

fn to_json<S: serde::Serialize>(v: &S) -> Result<String> {
    serde_json::to_string(v).map_err(|e| CliError::Internal(e.to_string()))
}

pub fn cmd_run(req: &RunRequest, jobs: usize, out: &Path) -> Result<String> {
    let m = match req.precision {
        Precision::F32 => run_typed::<f32>(req, jobs, out)?,
        Precision::F64 => run_typed::<f64>(req, jobs, out)?,
    };
    let pretty = read(&out.join("report.txt"))?;
    Ok(format!("{pretty}\nreport sha256 {}\n", m.get("report_sha256").unwrap_or("")))
}

fn from_json<X: serde::de::DeserializeOwned>(m: &Manifest, key: &str) -> Result<X> {
    serde_json::from_str(m.require(key)?).map_err(|e| CliError::Input(format!("manifest `{key}`: {e}")))
}

/// Repeats a recorded run or synth into `out` and checks the digests.
pub fn cmd_replay(manifest: &Path, out: &Path, jobs: usize) -> Result<String> {
    let m = Manifest::parse(&read(manifest)?)?;
    match m.require("command")? {
        "synth" => {
            let config: SynthConfig = from_json(&m, "config")?;
            let fresh = synth_into(&config, out)?;
            check_digest(&m, &fresh, "cohort_sha256")?;
            Ok(format!("replayed synth into {}; cohort digest matches\n", out.display()))
        }
        "run" => {
            let cohort = PathBuf::from(m.require("cohort")?);
            let digest = directory_digest(&cohort)?;
            if digest != m.require("cohort_sha256")? {
                return Err(CliError::Input(format!(
                    "cohort {} has changed since the recorded run",
                    cohort.display()
                )));
            }
            let kind: ExperimentKind = m.require("experiment")?.parse()?;
            let req = RunRequest {
                cohort,
                spec: ExperimentSpec {
                    kind,
                    modalities: parse_modalities(m.require("modalities")?)?,
                    approaches: parse_approaches(m.require("approaches")?)?,
                    targets: parse_targets(m.require("targets")?)?,
                    master_seed: m
                        .require("seed")?
                        .parse()
                        .map_err(|_| CliError::Input("manifest `seed` is not an integer".into()))?,
                },
                forest: from_json(&m, "forest")?,
                preprocessing: from_json(&m, "preprocessing")?,
                precision: match m.require("precision")? {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => return Err(CliError::Input(format!("unknown precision `{other}`"))),
                },
            };
            let fresh = match req.precision {
                Precision::F32 => run_typed::<f32>(&req, jobs, out)?,
                Precision::F64 => run_typed::<f64>(&req, jobs, out)?,
            };
            check_digest(&m, &fresh, "report_sha256")?;
            Ok(format!("replayed run into {}; report digest matches\n", out.display()))
        }
        other => Err(CliError::Input(format!("unknown manifest command `{other}`"))),
    }
}

fn check_digest(recorded: &Manifest, fresh: &Manifest, key: &str) -> Result<()> {
    let (a, b) = (recorded.require(key)?, fresh.require(key)?);
    if a != b {
        return Err(CliError::Internal(format!("{key} differs on replay: recorded {a}, got {b}")));
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Score { responses, instrument } => cmd_score(responses, instrument),
        Command::Synth { config, out, seed } => cmd_synth(config.as_deref(), out, *seed),
        Command::Run {
            cohort,
            experiment,
            modality,
            approach,
            target,
            seed,
            out,
            jobs,
            trees,
            preprocessing,
            precision,
        } => {
            let req = RunRequest::from_flags(
                cohort,
                *experiment,
                modality.as_deref(),
                approach.as_deref(),
                target.as_deref(),
                *seed,
                *trees,
                *preprocessing,
                *precision,
            )?;
            cmd_run(&req, *jobs, out)
        }
        Command::Replay { manifest, out, jobs } => cmd_replay(manifest, out, *jobs),
    }
}

/// Parses `args`, runs, and writes to the given streams; returns the exit code.
pub fn main_with<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match execute(&cli) {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
